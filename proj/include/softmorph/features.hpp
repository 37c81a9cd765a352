#pragma once

#include <span>

#include "softmorph/grid.hpp"

namespace softmorph {

// Shared stability constant: appears wherever a mask sum or squared perimeter
// sits in a denominator.
inline constexpr double kFeatureEps = 1e-6;

/// The four morphology scalars plus the perimeter diagnostic.
/// `roughness` and `texture` are EMA-normalized when produced by
/// feature_vector(); the *_raw functions return unnormalized values.
struct FeatureVector {
    double area = 0.0;         // A, mean mask activation
    double roughness = 0.0;    // R in [0,1]
    double compactness = 0.0;  // C in [0,1]
    double texture = 0.0;      // T in [0,1]
    double perimeter = 0.0;    // P >= 0, pre-normalization diagnostic
};

/// Running min/max statistics with exponential smoothing, batch-norm style:
/// the first update adopts the batch extrema, later updates blend with
/// momentum 0.99. Statistics are frozen at evaluation time.
class EmaNormalizer {
public:
    explicit EmaNormalizer(double momentum = 0.99);

    /// Fold one training batch's values into the running min/max.
    void update(std::span<const double> batch_values);

    /// clip((v - min) / (max - min + eps), 0, 1). Throws
    /// UninitializedNormalizerError before the first update.
    double apply(double value) const;

    /// d apply / d value: 1/(max - min + eps) strictly inside the clip
    /// window, 0 outside or exactly on its edges.
    double gradient(double value) const;

    bool initialized() const { return initialized_; }
    double running_min() const { return running_min_; }
    double running_max() const { return running_max_; }
    double momentum() const { return momentum_; }

    /// Restore serialized state (checkpoint loading).
    static EmaNormalizer restore(double running_min, double running_max, double momentum, bool initialized);

private:
    double momentum_;
    double running_min_ = 0.0;
    double running_max_ = 0.0;
    bool initialized_ = false;
};

/// A = mean(y) over all pixels.
double area(const SoftMask& mask);

struct RoughnessRaw {
    double perimeter;  // P = sum of Sobel edge magnitudes
    double value;      // P / sqrt(sum(y) + eps)
};
RoughnessRaw roughness_raw(const SoftMask& mask);

/// C = clip(4*pi*sum(y) / (P^2 + eps), 0, 1).
double compactness(const SoftMask& mask);

/// Mask-weighted variance of the raw grayscale values inside the mask.
double texture_raw(const SoftMask& mask, const GrayImage& image);

enum class FeatureMode { training, evaluation };

/// Full feature vector. In training mode the raw roughness/texture values
/// update the normalizers (single-sample batch) before being applied; the
/// trainer performs batch-level updates itself and calls this in evaluation
/// mode. Normalizers must be initialized in evaluation mode.
FeatureVector feature_vector(const SoftMask& mask, const GrayImage& image, EmaNormalizer& norm_roughness,
                             EmaNormalizer& norm_texture, FeatureMode mode);

}  // namespace softmorph
