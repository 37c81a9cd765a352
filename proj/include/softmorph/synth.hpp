#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "softmorph/grid.hpp"

namespace softmorph {

enum class LesionKind { benign_ellipse, malignant_star, no_tumor };

const char* lesion_kind_name(LesionKind kind);
LesionKind lesion_kind_from_name(const std::string& name);

/// Procedural description of one sample. Benign lesions are smooth ellipses
/// with homogeneous interiors; malignant ones are star polygons
/// r(theta) = r * (1 - spike_depth * |sin(spike_count * theta / 2)|)
/// with heterogeneous interiors.
struct LesionSpec {
    LesionKind kind = LesionKind::benign_ellipse;
    int height = 64;
    int width = 64;
    double center_row = 32.0;
    double center_col = 32.0;
    double radius_row = 12.0;  // r1
    double radius_col = 12.0;  // r2
    int spike_count = 8;       // stars only, >= 5
    double spike_depth = 0.4;  // stars only, in (0,1)
    double interior_noise_sd = 0.02;
    double background_noise_sd = 0.03;
    double lesion_mean = 0.3;
    double background_mean = 0.65;
    uint64_t seed = 0;
};

struct SyntheticSample {
    GrayImage image;
    Grid mask_gt;  // binary {0,1}, the thresholded rasterization
    int label;     // 1 iff malignant_star
    LesionSpec spec;
};

/// Anti-aliased coverage of the lesion outline, in [0,1] per pixel; the
/// ground-truth mask is this thresholded at 0.5.
Grid rasterize_coverage(const LesionSpec& spec);

/// Deterministic per seed. Throws InvalidSpecError when the lesion does not
/// fit with a 2-pixel margin.
SyntheticSample generate(const LesionSpec& spec);

enum class Domain { source, shifted };

/// Fixed offsets emulating a cross-center acquisition shift:
/// background +0.15, noise x1.5, lesion scale x0.8.
struct DomainShift {
    static constexpr double background_offset = 0.15;
    static constexpr double noise_factor = 1.5;
    static constexpr double scale_factor = 0.8;
};

struct ClassMix {
    double benign = 0.5;
    double malignant = 0.4;
    double no_tumor = 0.1;
};

/// Deterministic dataset: exact per-class counts by largest remainder, specs
/// drawn from a seeded stream, order shuffled by the same seed.
std::vector<SyntheticSample> make_dataset(int n, const ClassMix& mix, Domain domain, uint64_t seed, int height = 64,
                                          int width = 64);

/// A (benign disc, malignant star) pair whose soft-mask areas match, for
/// feature-ordering studies. Intensity settings are identical except the
/// interior heterogeneity.
std::pair<SyntheticSample, SyntheticSample> make_equal_area_pair(uint64_t seed, int size = 64);

}  // namespace softmorph
