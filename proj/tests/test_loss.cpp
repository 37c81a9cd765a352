#include <cmath>

#include "doctest.h"
#include "softmorph/errors.hpp"
#include "softmorph/loss.hpp"
#include "softmorph/rng.hpp"

using namespace softmorph;

namespace {

// Scalar 64-bit oracle: -[t log(sig(s)) + (1-t) log(1-sig(s))]
double bce_oracle(double logit, double target) {
    const double p = 1.0 / (1.0 + std::exp(-logit));
    return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

}  // namespace

TEST_SUITE("loss") {
    TEST_CASE("bce at logit 0 with target one half is ln 2") {
        CHECK(bce_with_logits(0.0, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(bce_with_logits(0.0, 0.5) == doctest::Approx(0.693147).epsilon(1e-6));
    }

    TEST_CASE("bce saturates: logit +20 against target 1") {
        CHECK(bce_with_logits(20.0, 1.0) == doctest::Approx(2.06e-9).epsilon(1e-2));
    }

    TEST_CASE("bce matches the scalar oracle on a random 8x8 pair") {
        Rng rng(17);
        Grid logits(8, 8), targets(8, 8);
        double oracle = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            logits[i] = rng.uniform(-4.0, 4.0);
            targets[i] = rng.uniform();
            oracle += bce_oracle(logits[i], targets[i]);
        }
        oracle /= 64.0;
        CHECK(bce_with_logits(logits, targets) == doctest::Approx(oracle).epsilon(1e-12));
        CHECK(bce_with_logits(logits, targets) >= 0.0);
    }

    TEST_CASE("bce shape mismatch is invalid input") {
        CHECK_THROWS_AS(bce_with_logits(Grid(3, 3, 0.0), Grid(3, 4, 0.0)), InvalidInputError);
    }

    TEST_CASE("consistency loss: agreement, maximal disagreement, crafted value") {
        CHECK(consistency_loss(0.7, 0.7) == 0.0);
        CHECK(consistency_loss(1.0, 0.0) == 1.0);
        CHECK(consistency_loss(0.9, 0.55) == doctest::Approx(0.1225).epsilon(1e-12));
    }

    TEST_CASE("no-tumor penalty is the mask mean only on tumor-free samples") {
        const SampleTargets tumor_free = SampleTargets::from_mask(Grid(4, 4, 0.0), 0);
        Grid with_pixel(4, 4, 0.0);
        with_pixel(2, 2) = 1.0;
        const SampleTargets tumor = SampleTargets::from_mask(with_pixel, 1);

        CHECK(no_tumor_penalty(SoftMask{Grid(4, 4, 0.5)}, tumor_free) == 0.5);
        CHECK(no_tumor_penalty(SoftMask{Grid(4, 4, 0.9)}, tumor) == 0.0);
        const SoftMask off = sigmoid_grid(LogitGrid(Grid(4, 4, -20.0)));
        CHECK(no_tumor_penalty(off, tumor_free) == doctest::Approx(0.0).epsilon(1e-8));
    }

    TEST_CASE("has_tumor is derived from the mask, and only from the mask") {
        CHECK_FALSE(SampleTargets::from_mask(Grid(4, 4, 0.0), 0).has_tumor);
        Grid one(4, 4, 0.0);
        one(0, 0) = 1.0;
        CHECK(SampleTargets::from_mask(one, 0).has_tumor);
        CHECK_THROWS_AS(SampleTargets::from_mask(Grid(4, 4, 0.3), 0), InvalidInputError);
    }

    TEST_CASE("crafted breakdown composes to 0.2363 with the published weights") {
        const Hyper hyper{0.9, 0.1, 0.17, 0.5, 0.001};
        const LossBreakdown b = compose_breakdown(0.2, 0.4, 0.09, 0.0, 1.0, hyper);
        CHECK(std::abs(b.total - 0.2363) < 1e-12);
        CHECK(b.total == doctest::Approx(0.18 + 0.04 + 0.0153 + 0.0 + 0.001).epsilon(1e-15));
    }

    TEST_CASE("alpha = beta = 0 reduces exactly to the weighted two-task baseline") {
        Rng rng(23);
        for (int trial = 0; trial < 20; ++trial) {
            const double seg = rng.uniform(0.0, 2.0);
            const double cls = rng.uniform(0.0, 2.0);
            const Hyper hyper{0.9, 0.1, 0.0, 0.5, 0.0};
            const LossBreakdown b = compose_breakdown(seg, cls, rng.uniform(), rng.uniform(), rng.uniform(), hyper);
            CHECK(b.total == 0.9 * seg + 0.1 * cls);
        }
    }

    TEST_CASE("negative hyperparameters are rejected") {
        Hyper h;
        h.alpha = -0.1;
        CHECK_THROWS_AS(compose_breakdown(0.1, 0.1, 0.1, 0.0, 0.0, h), InvalidInputError);
    }

    TEST_CASE("total stays non-negative over random inputs") {
        Rng rng(29);
        for (int trial = 0; trial < 50; ++trial) {
            const Hyper hyper{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
            const LossBreakdown b = compose_breakdown(rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0),
                                                      rng.uniform(), rng.uniform(), rng.uniform(0.0, 5.0), hyper);
            CHECK(b.total >= 0.0);
            CHECK(b.total == doctest::Approx(hyper.w_seg * b.seg + hyper.w_cls * b.cls + hyper.alpha * b.consistency +
                                             hyper.alpha * hyper.lambda_nt * b.no_tumor + hyper.beta * b.l2)
                                 .epsilon(1e-15));
        }
    }

    TEST_CASE("full forward total on a perfect sample reduces to the L2 term") {
        // saturated logits matching the target mask, p_hat == phi unreachable
        // exactly, so drive consistency to ~0 by matching both to the prior.
        Grid mask_gt(16, 16, 0.0);
        for (int r = 5; r < 11; ++r) {
            for (int c = 5; c < 11; ++c) mask_gt(r, c) = 1.0;
        }
        Grid logits(16, 16, -30.0);
        for (int r = 5; r < 11; ++r) {
            for (int c = 5; c < 11; ++c) logits(r, c) = 30.0;
        }
        const GrayImage image{Grid(16, 16, 0.5)};
        const SampleTargets targets = SampleTargets::from_mask(mask_gt, 1);
        const PriorWeights prior = PriorWeights::from_target_weights({0.15, 0.35, 0.25, 0.25});
        const EmaNormalizer nr = EmaNormalizer::restore(0.0, 50.0, 0.99, true);
        const EmaNormalizer nt = EmaNormalizer::restore(0.0, 0.2, 0.99, true);

        Hyper hyper{0.9, 0.1, 0.0, 0.5, 0.001};  // alpha 0: no consistency term
        const LossBreakdown b =
            total_loss(LogitGrid(logits), 30.0, image, targets, prior, nr, nt, hyper);
        CHECK(b.seg == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(b.cls == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(b.no_tumor == 0.0);
        CHECK(b.total == doctest::Approx(0.001 * prior.penalty()).epsilon(1e-9));
    }

    TEST_CASE("batch mean is permutation invariant") {
        Rng rng(59);
        std::vector<double> totals;
        for (int i = 0; i < 7; ++i) totals.push_back(rng.uniform(0.0, 2.0));
        double forward = 0.0;
        for (double t : totals) forward += t;
        double reversed = 0.0;
        for (auto it = totals.rbegin(); it != totals.rend(); ++it) reversed += *it;
        CHECK(forward / 7.0 == doctest::Approx(reversed / 7.0).epsilon(1e-15));
    }
}
