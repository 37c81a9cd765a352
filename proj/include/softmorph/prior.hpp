#pragma once

#include <array>

#include "softmorph/features.hpp"

namespace softmorph {

using Vec4 = std::array<double, 4>;

/// Learnable logits u behind the softmax-normalized feature weights
/// w = softmax(u). The logits live in the canonical zero-mean gauge at
/// initialization (softmax is shift-invariant; zero-mean pins the L2 term).
struct PriorWeights {
    Vec4 u{0.0, 0.0, 0.0, 0.0};

    /// w = softmax(u); strictly positive, sums to 1.
    Vec4 weights() const;

    /// ||u||^2 (the loss applies its beta factor).
    double penalty() const;

    /// Builds zero-mean logits whose softmax reproduces `target_weights`.
    /// Targets must be strictly positive and sum to 1 within 1e-9.
    static PriorWeights from_target_weights(const Vec4& target_weights);
};

/// Composite morphology score phi = w . f with f = [A, R, 1-C, T].
struct PriorScore {
    double phi = 0.0;
    Vec4 f{0.0, 0.0, 0.0, 0.0};
};

PriorScore composite_score(const FeatureVector& features, const PriorWeights& weights);

/// d phi / d u_i = w_i (f_i - phi); the feature-side gradient is just w.
Vec4 composite_score_grad_u(const PriorScore& score, const PriorWeights& weights);

}  // namespace softmorph
