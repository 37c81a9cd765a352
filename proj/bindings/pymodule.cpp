// Python bindings for the core operations: grid math, morphology features,
// the composite prior, the training objective and its gradients, synthetic
// lesions, evaluation statistics, and the finite-difference harness.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "softmorph/autodiff.hpp"
#include "softmorph/errors.hpp"
#include "softmorph/metrics.hpp"
#include "softmorph/synth.hpp"

namespace py = pybind11;
using namespace softmorph;

namespace {

using NumpyArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Grid grid_from_array(const NumpyArray& a) {
    if (a.ndim() != 2) throw InvalidInputError("expected a 2-D array");
    const int h = static_cast<int>(a.shape(0));
    const int w = static_cast<int>(a.shape(1));
    std::vector<double> values(a.data(), a.data() + static_cast<std::size_t>(h) * w);
    return Grid::from_values(h, w, std::move(values));
}

py::array_t<double> array_from_grid(const Grid& g) {
    py::array_t<double> out({g.height(), g.width()});
    std::copy(g.values().begin(), g.values().end(), out.mutable_data());
    return out;
}

Vec4 vec4_from_list(const std::vector<double>& v, const char* what) {
    if (v.size() != 4) throw InvalidInputError(std::string(what) + " must have 4 entries");
    return Vec4{v[0], v[1], v[2], v[3]};
}

GraphContext context_from_args(const std::vector<double>& prior_logits, double rough_min, double rough_max,
                               double tex_min, double tex_max, double w_seg, double w_cls, double alpha,
                               double lambda_nt, double beta) {
    GraphContext ctx;
    ctx.prior = PriorWeights{vec4_from_list(prior_logits, "prior_logits")};
    ctx.norm_roughness = EmaNormalizer::restore(rough_min, rough_max, 0.99, true);
    ctx.norm_texture = EmaNormalizer::restore(tex_min, tex_max, 0.99, true);
    ctx.hyper = Hyper{w_seg, w_cls, alpha, lambda_nt, beta};
    return ctx;
}

SampleInputs inputs_from_args(const NumpyArray& logits, double malig_logit, const NumpyArray& image,
                              const NumpyArray& mask_gt, int label) {
    return SampleInputs{LogitGrid(grid_from_array(logits)), malig_logit, GrayImage(grid_from_array(image)),
                        SampleTargets::from_mask(grid_from_array(mask_gt), label)};
}

py::dict breakdown_to_dict(const LossBreakdown& b) {
    py::dict d;
    d["seg"] = b.seg;
    d["cls"] = b.cls;
    d["consistency"] = b.consistency;
    d["no_tumor"] = b.no_tumor;
    d["l2"] = b.l2;
    d["total"] = b.total;
    return d;
}

}  // namespace

PYBIND11_MODULE(softmorph, m) {
    m.doc() = "differentiable soft-mask morphology features, the composite malignancy prior, "
              "the consistency-regularized multi-task objective, and evaluation statistics";
    m.attr("__version__") = "0.1.0";

    py::register_exception<InvalidInputError>(m, "InvalidInputError", PyExc_ValueError);
    py::register_exception<InsufficientDataError>(m, "InsufficientDataError", PyExc_ValueError);
    py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", PyExc_ValueError);

    // grid ops
    m.def("sigmoid", [](const NumpyArray& logits) { return array_from_grid(sigmoid_grid(LogitGrid(grid_from_array(logits))).grid()); },
          py::arg("logits"), "Numerically stable elementwise sigmoid of a 2-D logit array.");
    m.def("sobel_edge_magnitude",
          [](const NumpyArray& mask) { return array_from_grid(sobel_edge_magnitude(SoftMask(grid_from_array(mask))).grid()); },
          py::arg("mask"), "Sobel edge magnitude with replicate padding; input values in [0,1], at least 3x3.");

    // morphology features
    m.def("features_raw",
          [](const NumpyArray& mask, const NumpyArray& image) {
              const SoftMask m_(grid_from_array(mask));
              const GrayImage g(grid_from_array(image));
              const RoughnessRaw rough = roughness_raw(m_);
              py::dict d;
              d["area"] = area(m_);
              d["perimeter"] = rough.perimeter;
              d["roughness_raw"] = rough.value;
              d["compactness"] = compactness(m_);
              d["texture_raw"] = texture_raw(m_, g);
              return d;
          },
          py::arg("mask"), py::arg("image"),
          "Raw (pre-normalization) morphology features of a soft mask over a grayscale image.");

    // composite prior
    m.def("prior_logits_from_weights",
          [](const std::vector<double>& w) {
              const PriorWeights pw = PriorWeights::from_target_weights(vec4_from_list(w, "weights"));
              return std::vector<double>(pw.u.begin(), pw.u.end());
          },
          py::arg("weights"), "Zero-mean logits whose softmax reproduces the target weights.");
    m.def("softmax_weights",
          [](const std::vector<double>& u) {
              const Vec4 w = PriorWeights{vec4_from_list(u, "prior_logits")}.weights();
              return std::vector<double>(w.begin(), w.end());
          },
          py::arg("prior_logits"));
    m.def("composite_score",
          [](double area_v, double roughness, double compactness_v, double texture, const std::vector<double>& u) {
              FeatureVector fv{area_v, roughness, compactness_v, texture, 0.0};
              return composite_score(fv, PriorWeights{vec4_from_list(u, "prior_logits")}).phi;
          },
          py::arg("area"), py::arg("roughness"), py::arg("compactness"), py::arg("texture"), py::arg("prior_logits"),
          "phi = softmax(u) . [A, R, 1-C, T], all features already in [0,1].");

    // objective
    m.def("compose_loss",
          [](double seg, double cls, double consistency, double no_tumor, double l2, double w_seg, double w_cls,
             double alpha, double lambda_nt, double beta) {
              return breakdown_to_dict(
                  compose_breakdown(seg, cls, consistency, no_tumor, l2, Hyper{w_seg, w_cls, alpha, lambda_nt, beta}));
          },
          py::arg("seg"), py::arg("cls"), py::arg("consistency"), py::arg("no_tumor"), py::arg("l2"),
          py::arg("w_seg") = 0.9, py::arg("w_cls") = 0.1, py::arg("alpha") = 0.0, py::arg("lambda_nt") = 0.5,
          py::arg("beta") = 0.001);
    m.def("loss_breakdown",
          [](const NumpyArray& logits, double malig_logit, const NumpyArray& image, const NumpyArray& mask_gt,
             int label, const std::vector<double>& prior_logits, double rough_min, double rough_max, double tex_min,
             double tex_max, double w_seg, double w_cls, double alpha, double lambda_nt, double beta) {
              const SampleInputs in = inputs_from_args(logits, malig_logit, image, mask_gt, label);
              const GraphContext ctx = context_from_args(prior_logits, rough_min, rough_max, tex_min, tex_max, w_seg,
                                                         w_cls, alpha, lambda_nt, beta);
              const GraphEvaluation eval = total_loss_with_gradients(in, ctx);
              py::dict d = breakdown_to_dict(eval.breakdown);
              d["phi"] = eval.phi;
              d["p_hat"] = eval.p_hat;
              return d;
          },
          py::arg("logits"), py::arg("malig_logit"), py::arg("image"), py::arg("mask_gt"), py::arg("label"),
          py::arg("prior_logits"), py::arg("rough_min") = 0.0, py::arg("rough_max") = 30.0, py::arg("tex_min") = 0.0,
          py::arg("tex_max") = 0.1, py::arg("w_seg") = 0.9, py::arg("w_cls") = 0.1, py::arg("alpha") = 0.17,
          py::arg("lambda_nt") = 0.5, py::arg("beta") = 0.001,
          "Every addend of the training objective for one sample, with frozen normalizer windows.");
    m.def("loss_gradients",
          [](const NumpyArray& logits, double malig_logit, const NumpyArray& image, const NumpyArray& mask_gt,
             int label, const std::vector<double>& prior_logits, double rough_min, double rough_max, double tex_min,
             double tex_max, double w_seg, double w_cls, double alpha, double lambda_nt, double beta) {
              const SampleInputs in = inputs_from_args(logits, malig_logit, image, mask_gt, label);
              const GraphContext ctx = context_from_args(prior_logits, rough_min, rough_max, tex_min, tex_max, w_seg,
                                                         w_cls, alpha, lambda_nt, beta);
              const GraphEvaluation eval = total_loss_with_gradients(in, ctx);
              py::dict d;
              d["wrt_logits"] = array_from_grid(eval.grads.wrt_logits);
              d["wrt_malig_logit"] = eval.grads.wrt_malig_logit;
              d["wrt_prior_logits"] =
                  std::vector<double>(eval.grads.wrt_prior_logits.begin(), eval.grads.wrt_prior_logits.end());
              return d;
          },
          py::arg("logits"), py::arg("malig_logit"), py::arg("image"), py::arg("mask_gt"), py::arg("label"),
          py::arg("prior_logits"), py::arg("rough_min") = 0.0, py::arg("rough_max") = 30.0, py::arg("tex_min") = 0.0,
          py::arg("tex_max") = 0.1, py::arg("w_seg") = 0.9, py::arg("w_cls") = 0.1, py::arg("alpha") = 0.17,
          py::arg("lambda_nt") = 0.5, py::arg("beta") = 0.001,
          "Analytic gradients of the total objective for one sample.");

    // synthetic lesions
    m.def("generate_lesion",
          [](const std::string& kind, uint64_t seed, int size) {
              LesionSpec spec;
              spec.kind = lesion_kind_from_name(kind);
              spec.height = spec.width = size;
              spec.center_row = spec.center_col = size / 2.0;
              spec.radius_row = spec.radius_col = 0.2 * size;
              spec.seed = seed;
              if (spec.kind == LesionKind::malignant_star) spec.interior_noise_sd = 0.12;
              const SyntheticSample s = generate(spec);
              return py::make_tuple(array_from_grid(s.image.grid()), array_from_grid(s.mask_gt), s.label);
          },
          py::arg("kind"), py::arg("seed"), py::arg("size") = 64,
          "One centered synthetic sample: (image, binary mask, label).");
    m.def("equal_area_pair",
          [](uint64_t seed, int size) {
              const auto [disc, star] = make_equal_area_pair(seed, size);
              py::dict d;
              d["disc_image"] = array_from_grid(disc.image.grid());
              d["disc_mask"] = array_from_grid(disc.mask_gt);
              d["star_image"] = array_from_grid(star.image.grid());
              d["star_mask"] = array_from_grid(star.mask_gt);
              return d;
          },
          py::arg("seed"), py::arg("size") = 64,
          "A matched (benign disc, malignant star) pair with equal soft-mask area.");

    // evaluation statistics
    m.def("dice",
          [](const NumpyArray& prediction, const NumpyArray& ground_truth, double threshold) {
              return dice(SoftMask(grid_from_array(prediction)), grid_from_array(ground_truth), threshold);
          },
          py::arg("prediction"), py::arg("ground_truth"), py::arg("threshold") = 0.5);
    m.def("auc",
          [](const std::vector<double>& scores, const std::vector<int>& labels) { return auc(scores, labels); },
          py::arg("scores"), py::arg("labels"));
    m.def("wilcoxon_signed_rank",
          [](const std::vector<double>& x, const std::vector<double>& y) {
              const WilcoxonResult w = wilcoxon_signed_rank(x, y);
              py::dict d;
              d["statistic"] = w.statistic;
              d["p_value"] = w.p_value;
              d["n_effective"] = w.n_effective;
              d["method"] = w.method == WilcoxonResult::Method::exact ? "exact" : "normal_approx";
              return d;
          },
          py::arg("x"), py::arg("y"));

    // gradient-check harness
    m.def("gradcheck",
          [](int size, uint64_t seed, int probes, double step) {
              FdCheckConfig config;
              config.probes = probes;
              config.step = step;
              py::list out;
              for (const GradCheckCase& c : run_graph_gradcheck(size, size, seed, config)) {
                  py::dict d;
                  d["scalar"] = graph_scalar_name(c.scalar);
                  d["parameter"] = c.parameter;
                  d["max_abs_err"] = c.report.max_abs_err;
                  d["max_rel_err"] = c.report.max_rel_err;
                  d["probed_entries"] = c.report.probed_entries;
                  d["passed"] = c.report.passed;
                  out.append(d);
              }
              return out;
          },
          py::arg("size") = 16, py::arg("seed") = 0, py::arg("probes") = 0, py::arg("step") = 1e-5,
          "Finite-difference check of every supported scalar's analytic gradient.");
}
