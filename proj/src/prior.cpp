#include "softmorph/prior.hpp"

#include <algorithm>
#include <cmath>

#include "softmorph/errors.hpp"

namespace softmorph {

Vec4 PriorWeights::weights() const {
    const double peak = *std::max_element(u.begin(), u.end());
    Vec4 w;
    double total = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        w[i] = std::exp(u[i] - peak);
        total += w[i];
    }
    for (double& v : w) v /= total;
    return w;
}

double PriorWeights::penalty() const {
    double acc = 0.0;
    for (double v : u) acc += v * v;
    return acc;
}

PriorWeights PriorWeights::from_target_weights(const Vec4& target_weights) {
    double total = 0.0;
    for (double t : target_weights) {
        if (!(t > 0.0)) throw InvalidInputError("target weights must be strictly positive");
        total += t;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidInputError("target weights must sum to 1");
    Vec4 logs;
    double mean_log = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        logs[i] = std::log(target_weights[i]);
        mean_log += logs[i];
    }
    mean_log /= 4.0;
    PriorWeights pw;
    for (std::size_t i = 0; i < 4; ++i) pw.u[i] = logs[i] - mean_log;
    return pw;
}

PriorScore composite_score(const FeatureVector& features, const PriorWeights& weights) {
    PriorScore score;
    score.f = {features.area, features.roughness, 1.0 - features.compactness, features.texture};
    const Vec4 w = weights.weights();
    score.phi = 0.0;
    for (std::size_t i = 0; i < 4; ++i) score.phi += w[i] * score.f[i];
    return score;
}

Vec4 composite_score_grad_u(const PriorScore& score, const PriorWeights& weights) {
    const Vec4 w = weights.weights();
    Vec4 grad;
    for (std::size_t i = 0; i < 4; ++i) grad[i] = w[i] * (score.f[i] - score.phi);
    return grad;
}

}  // namespace softmorph
