#include <cmath>

#include "doctest.h"
#include "softmorph/autodiff.hpp"
#include "softmorph/errors.hpp"
#include "softmorph/rng.hpp"

using namespace softmorph;

namespace {

SampleInputs make_inputs(int h, int w, uint64_t seed, bool tumor_free = false) {
    Rng rng(seed);
    Grid logits(h, w);
    for (double& v : logits.values()) v = rng.normal(0.0, 1.2);
    Grid image(h, w);
    for (double& v : image.values()) v = rng.uniform();
    Grid mask_gt(h, w, 0.0);
    if (!tumor_free) {
        for (double& v : mask_gt.values()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    }
    return SampleInputs{LogitGrid(std::move(logits)), rng.normal(0.0, 1.0), GrayImage(std::move(image)),
                        SampleTargets::from_mask(std::move(mask_gt), tumor_free ? 0 : 1)};
}

GraphContext make_context(const SampleInputs& inputs, double alpha = 0.17) {
    GraphContext ctx;
    ctx.prior = PriorWeights::from_target_weights({0.15, 0.35, 0.25, 0.25});
    ctx.hyper = Hyper{0.9, 0.1, alpha, 0.5, 0.001};
    const SoftMask mask = sigmoid_grid(inputs.logits);
    const double rough = roughness_raw(mask).value;
    const double tex = texture_raw(mask, inputs.image);
    ctx.norm_roughness = EmaNormalizer::restore(rough - 1.0, rough + 1.0, 0.99, true);
    ctx.norm_texture = EmaNormalizer::restore(tex - 0.05, tex + 0.05, 0.99, true);
    return ctx;
}

}  // namespace

TEST_SUITE("autodiff") {
    TEST_CASE("finite differences on a linear scalar recover the coefficients exactly") {
        std::vector<double> params{0.4, -1.2, 0.7, 2.0, 0.0, -0.3, 1.1, 0.9, -2.2};
        std::vector<double> analytic(9, 2.0);
        auto f = [](std::span<const double> x) {
            double acc = 0.0;
            for (double v : x) acc += 2.0 * v;
            return acc;
        };
        const FiniteDiffReport report = finite_diff_check(f, params, analytic, FdCheckConfig{});
        CHECK(report.passed);
        CHECK(report.probed_entries == 9);
        CHECK(report.max_abs_err < 1e-9);
    }

    TEST_CASE("checker flags a wrong gradient") {
        std::vector<double> params{1.0, 2.0};
        std::vector<double> wrong{2.0, 3.0};  // true gradient is (2, 2)
        auto f = [](std::span<const double> x) { return 2.0 * x[0] + 2.0 * x[1]; };
        const FiniteDiffReport report = finite_diff_check(f, params, wrong, FdCheckConfig{});
        CHECK_FALSE(report.passed);
    }

    TEST_CASE("checker validates its inputs") {
        std::vector<double> params{1.0};
        std::vector<double> grad{1.0};
        auto f = [](std::span<const double> x) { return x[0]; };
        FdCheckConfig bad;
        bad.step = 0.0;
        CHECK_THROWS_AS(finite_diff_check(f, params, grad, bad), InvalidInputError);
        auto nan_f = [](std::span<const double>) { return std::nan(""); };
        CHECK_THROWS_AS(finite_diff_check(nan_f, params, grad, FdCheckConfig{}), InvalidInputError);
    }

    TEST_CASE("d mean(mask) / d logit at zero logits is 0.25 / (H*W)") {
        Grid logits(4, 4, 0.0);
        Grid image(4, 4, 0.5);
        SampleInputs inputs{LogitGrid(logits), 0.0, GrayImage(image),
                            SampleTargets::from_mask(Grid(4, 4, 0.0), 0)};
        const GraphContext ctx = make_context(inputs);
        const GraphGradients g = graph_gradients(inputs, ctx, GraphScalar::area);
        for (double v : g.wrt_logits.values()) CHECK(v == doctest::Approx(0.25 / 16.0).epsilon(1e-14));
        CHECK(g.wrt_malig_logit == 0.0);
        for (double v : g.wrt_prior_logits) CHECK(v == 0.0);
    }

    TEST_CASE("consistency gradient w.r.t. the malignancy logit has the closed form") {
        SampleInputs inputs = make_inputs(8, 8, 101);
        const GraphContext ctx = make_context(inputs);
        const double phi = graph_value(inputs, ctx, GraphScalar::prior_score);
        const double p_hat = sigmoid(inputs.malig_logit);
        const GraphGradients g = graph_gradients(inputs, ctx, GraphScalar::consistency_loss);
        CHECK(g.wrt_malig_logit ==
              doctest::Approx(2.0 * (p_hat - phi) * p_hat * (1.0 - p_hat)).epsilon(1e-12));
    }

    TEST_CASE("every supported scalar passes finite differences on a random 16x16 instance") {
        FdCheckConfig config;
        config.probes = 48;
        for (const uint64_t seed : {2ULL, 3ULL}) {  // tumor and tumor-free instances
            for (const GradCheckCase& c : run_graph_gradcheck(16, 16, seed, config)) {
                INFO(graph_scalar_name(c.scalar), " wrt ", c.parameter, " seed ", seed);
                CHECK(c.report.passed);
                CHECK(c.report.max_gated_rel_err < 1e-4);
            }
        }
    }

    TEST_CASE("compactness gradient vanishes where the clip is active") {
        // near-uniform mask: pre-clip compactness blows past 1
        Grid logits(8, 8, -2.0);
        Grid image(8, 8, 0.5);
        SampleInputs inputs{LogitGrid(logits), 0.3, GrayImage(image),
                            SampleTargets::from_mask(Grid(8, 8, 0.0), 0)};
        const GraphContext ctx = make_context(inputs);
        REQUIRE(graph_value(inputs, ctx, GraphScalar::compactness) == 1.0);
        const GraphGradients g = graph_gradients(inputs, ctx, GraphScalar::compactness);
        for (double v : g.wrt_logits.values()) CHECK(v == 0.0);
    }

    TEST_CASE("EMA statistics act as constants in the backward pass") {
        SampleInputs inputs = make_inputs(8, 8, 77);
        GraphContext ctx = make_context(inputs);
        // scaling the frozen window rescales the roughness gradient (chain
        // through apply is 1/(max-min+eps)); this only holds because stats
        // receive no gradient themselves
        const double rough = roughness_raw(sigmoid_grid(inputs.logits)).value;
        GraphContext wide = ctx;
        wide.norm_roughness = EmaNormalizer::restore(rough - 2.0, rough + 2.0, 0.99, true);

        GraphGradients narrow_g = graph_gradients(inputs, ctx, GraphScalar::prior_score);
        GraphGradients wide_g = graph_gradients(inputs, wide, GraphScalar::prior_score);

        // isolate the roughness path: difference of the two gradients is the
        // roughness term scaled by the two windows
        const double
            narrow_chain = ctx.norm_roughness.gradient(rough),
            wide_chain = wide.norm_roughness.gradient(rough);
        CHECK(narrow_chain == doctest::Approx(2.0 * wide_chain).epsilon(1e-5));
        bool any_differs = false;
        for (std::size_t i = 0; i < narrow_g.wrt_logits.size(); ++i) {
            if (narrow_g.wrt_logits[i] != wide_g.wrt_logits[i]) any_differs = true;
        }
        CHECK(any_differs);
    }

    TEST_CASE("consistency routing switches block the corresponding paths") {
        SampleInputs inputs = make_inputs(8, 8, 55);
        GraphContext ctx = make_context(inputs, 0.3);

        ctx.routing = ConsistencyGrad::pred_only;
        const GraphGradients pred_only = graph_gradients(inputs, ctx, GraphScalar::consistency_loss);
        for (double v : pred_only.wrt_logits.values()) CHECK(v == 0.0);
        for (double v : pred_only.wrt_prior_logits) CHECK(v == 0.0);
        CHECK(pred_only.wrt_malig_logit != 0.0);

        ctx.routing = ConsistencyGrad::prior_only;
        const GraphGradients prior_only = graph_gradients(inputs, ctx, GraphScalar::consistency_loss);
        CHECK(prior_only.wrt_malig_logit == 0.0);
        bool any_logit = false;
        for (double v : prior_only.wrt_logits.values()) any_logit = any_logit || v != 0.0;
        CHECK(any_logit);
    }

    TEST_CASE("with alpha = 0 the prior-logit gradient of the total is exactly 2 beta u") {
        SampleInputs inputs = make_inputs(8, 8, 91);
        GraphContext ctx = make_context(inputs, 0.0);
        const GraphGradients g = graph_gradients(inputs, ctx, GraphScalar::total_loss);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(g.wrt_prior_logits[i] == 2.0 * ctx.hyper.beta * ctx.prior.u[i]);
        }
    }

    TEST_CASE("fused evaluation agrees with the piecewise scalars") {
        SampleInputs inputs = make_inputs(16, 16, 123);
        const GraphContext ctx = make_context(inputs);
        const GraphEvaluation eval = total_loss_with_gradients(inputs, ctx);
        CHECK(eval.breakdown.total == doctest::Approx(graph_value(inputs, ctx, GraphScalar::total_loss)).epsilon(1e-15));
        CHECK(eval.breakdown.seg == doctest::Approx(graph_value(inputs, ctx, GraphScalar::seg_loss)).epsilon(1e-15));
        CHECK(eval.phi == doctest::Approx(graph_value(inputs, ctx, GraphScalar::prior_score)).epsilon(1e-15));
        const GraphGradients g = graph_gradients(inputs, ctx, GraphScalar::total_loss);
        for (std::size_t i = 0; i < g.wrt_logits.size(); ++i) {
            CHECK(eval.grads.wrt_logits[i] == g.wrt_logits[i]);
        }
        CHECK(eval.grads.wrt_malig_logit == g.wrt_malig_logit);
    }
}
