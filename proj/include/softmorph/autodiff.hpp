#pragma once

#include <functional>
#include <string>
#include <vector>

#include "softmorph/loss.hpp"

namespace softmorph {

/// The scalar outputs whose analytic gradients this module knows how to
/// compute. Anything else is an unsupported graph.
enum class GraphScalar {
    area,
    roughness_raw,
    compactness,
    texture_raw,
    prior_score,
    seg_loss,
    cls_loss,
    consistency_loss,
    no_tumor_penalty,
    total_loss,
};

const char* graph_scalar_name(GraphScalar scalar);
std::vector<GraphScalar> all_graph_scalars();

/// One sample's forward inputs: the per-pixel logits and the malignancy
/// logit are the differentiated quantities; image and targets are data.
struct SampleInputs {
    LogitGrid logits;
    double malig_logit;
    GrayImage image;
    SampleTargets targets;
};

/// Frozen evaluation context. EMA statistics act as constants in every
/// backward pass (they follow batch-norm practice); `routing` selects which
/// branches the consistency term back-propagates through.
struct GraphContext {
    PriorWeights prior;
    EmaNormalizer norm_roughness;
    EmaNormalizer norm_texture;
    Hyper hyper;
    ConsistencyGrad routing = ConsistencyGrad::both;
};

/// Gradient of one scalar with respect to every differentiated parameter.
/// Entries not touching a parameter are exactly zero.
struct GraphGradients {
    Grid wrt_logits;
    double wrt_malig_logit = 0.0;
    Vec4 wrt_prior_logits{0.0, 0.0, 0.0, 0.0};
};

/// Forward value of one supported scalar.
double graph_value(const SampleInputs& inputs, const GraphContext& ctx, GraphScalar scalar);

/// Exact analytic gradient of one supported scalar.
GraphGradients graph_gradients(const SampleInputs& inputs, const GraphContext& ctx, GraphScalar scalar);

/// Fused forward + backward of the full objective, the trainer's hot path.
struct GraphEvaluation {
    LossBreakdown breakdown;
    FeatureVector features;  // normalized R/T as used by the prior
    double phi = 0.0;
    double p_hat = 0.0;
    GraphGradients grads;
};
GraphEvaluation total_loss_with_gradients(const SampleInputs& inputs, const GraphContext& ctx);

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

struct FdCheckConfig {
    double step = 1e-5;
    int probes = 0;  // <=0 or >= #params probes every coordinate
    uint64_t seed = 0;
    double rel_tol = 1e-4;
    double abs_tol = 1e-7;  // near-zero escape hatch
};

struct FiniteDiffReport {
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;  // denominator max(|analytic|, |numeric|, 1e-8)
    // like max_rel_err but ignoring entries already inside the near-zero
    // absolute tolerance, where the relative measure is ill-posed
    double max_gated_rel_err = 0.0;
    int probed_entries = 0;
    double step = 0.0;
    bool passed = true;  // every probe had abs < abs_tol or rel < rel_tol
};

/// Central-difference check of `analytic_grad` against
/// (f(x+h e_i) - f(x-h e_i)) / 2h on seeded probe coordinates.
FiniteDiffReport finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                   std::span<const double> params, std::span<const double> analytic_grad,
                                   const FdCheckConfig& config);

/// One scalar/parameter pair from the stock gradient-check harness.
struct GradCheckCase {
    GraphScalar scalar;
    std::string parameter;  // "logits", "prior_logits", or "malig_logit"
    FiniteDiffReport report;
};

/// Builds a seeded random sample (logits, image, targets, frozen normalizer
/// stats bracketing the raw feature values) and finite-difference checks all
/// supported scalars against their analytic gradients. Instances with odd
/// seeds are tumor-free so the no-tumor branch is exercised.
std::vector<GradCheckCase> run_graph_gradcheck(int height, int width, uint64_t seed, const FdCheckConfig& config);

}  // namespace softmorph
