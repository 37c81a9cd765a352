#include "softmorph/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "softmorph/errors.hpp"

namespace softmorph {

EmaNormalizer::EmaNormalizer(double momentum) : momentum_(momentum) {
    if (!(momentum > 0.0 && momentum < 1.0)) throw InvalidInputError("EMA momentum must lie in (0,1)");
}

void EmaNormalizer::update(std::span<const double> batch_values) {
    if (batch_values.empty()) throw InvalidInputError("EMA update needs at least one value");
    const auto [lo, hi] = std::minmax_element(batch_values.begin(), batch_values.end());
    if (!initialized_) {
        running_min_ = *lo;
        running_max_ = *hi;
        initialized_ = true;
        return;
    }
    running_min_ = momentum_ * running_min_ + (1.0 - momentum_) * *lo;
    running_max_ = momentum_ * running_max_ + (1.0 - momentum_) * *hi;
}

double EmaNormalizer::apply(double value) const {
    if (!initialized_) throw UninitializedNormalizerError("EMA normalizer applied before first update");
    const double scaled = (value - running_min_) / (running_max_ - running_min_ + kFeatureEps);
    return std::clamp(scaled, 0.0, 1.0);
}

double EmaNormalizer::gradient(double value) const {
    if (!initialized_) return 0.0;
    const double denom = running_max_ - running_min_ + kFeatureEps;
    const double scaled = (value - running_min_) / denom;
    if (scaled <= 0.0 || scaled >= 1.0) return 0.0;
    return 1.0 / denom;
}

EmaNormalizer EmaNormalizer::restore(double running_min, double running_max, double momentum, bool initialized) {
    EmaNormalizer n(momentum);
    n.running_min_ = running_min;
    n.running_max_ = running_max;
    n.initialized_ = initialized;
    return n;
}

double area(const SoftMask& mask) { return masked_mean(mask); }

RoughnessRaw roughness_raw(const SoftMask& mask) {
    const EdgeMap edges = sobel_edge_magnitude(mask);
    const double perimeter = grid_sum(edges.grid());
    const double mask_sum = masked_sum(mask);
    return {perimeter, perimeter / std::sqrt(mask_sum + kFeatureEps)};
}

double compactness(const SoftMask& mask) {
    const EdgeMap edges = sobel_edge_magnitude(mask);
    const double perimeter = grid_sum(edges.grid());
    const double mask_sum = masked_sum(mask);
    const double raw = 4.0 * std::numbers::pi * mask_sum / (perimeter * perimeter + kFeatureEps);
    return std::clamp(raw, 0.0, 1.0);
}

double texture_raw(const SoftMask& mask, const GrayImage& image) {
    if (!mask.grid().same_shape(image.grid())) {
        throw InvalidInputError("texture: mask and image shapes differ");
    }
    const double denom = masked_sum(mask) + kFeatureEps;
    double weighted = 0.0;
    const std::size_t n = mask.grid().size();
    for (std::size_t i = 0; i < n; ++i) weighted += mask.grid()[i] * image.grid()[i];
    const double mean_gray = weighted / denom;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = image.grid()[i] - mean_gray;
        var += mask.grid()[i] * d * d;
    }
    return var / denom;
}

FeatureVector feature_vector(const SoftMask& mask, const GrayImage& image, EmaNormalizer& norm_roughness,
                             EmaNormalizer& norm_texture, FeatureMode mode) {
    FeatureVector fv;
    fv.area = area(mask);

    const EdgeMap edges = sobel_edge_magnitude(mask);
    fv.perimeter = grid_sum(edges.grid());
    const double mask_sum = masked_sum(mask);
    const double rough_raw = fv.perimeter / std::sqrt(mask_sum + kFeatureEps);
    fv.compactness =
        std::clamp(4.0 * std::numbers::pi * mask_sum / (fv.perimeter * fv.perimeter + kFeatureEps), 0.0, 1.0);
    const double tex_raw = texture_raw(mask, image);

    if (mode == FeatureMode::training) {
        norm_roughness.update(std::span<const double>(&rough_raw, 1));
        norm_texture.update(std::span<const double>(&tex_raw, 1));
    }
    fv.roughness = norm_roughness.apply(rough_raw);
    fv.texture = norm_texture.apply(tex_raw);
    return fv;
}

}  // namespace softmorph
