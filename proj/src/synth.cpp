#include "softmorph/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "softmorph/errors.hpp"
#include "softmorph/rng.hpp"

namespace softmorph {

namespace {

constexpr int kSupersample = 4;  // 4x4 coverage samples per pixel

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Fraction of the pixel [r, r+1) x [c, c+1) inside the lesion outline.
double pixel_coverage(const LesionSpec& spec, int r, int c) {
    int hits = 0;
    for (int i = 0; i < kSupersample; ++i) {
        const double y = r + (i + 0.5) / kSupersample - spec.center_row;
        for (int j = 0; j < kSupersample; ++j) {
            const double x = c + (j + 0.5) / kSupersample - spec.center_col;
            const double ny = y / spec.radius_row;
            const double nx = x / spec.radius_col;
            const double rho = std::sqrt(nx * nx + ny * ny);
            double boundary = 1.0;
            if (spec.kind == LesionKind::malignant_star) {
                const double theta = std::atan2(ny, nx);
                boundary = 1.0 - spec.spike_depth * std::abs(std::sin(0.5 * spec.spike_count * theta));
            }
            if (rho <= boundary) ++hits;
        }
    }
    return static_cast<double>(hits) / (kSupersample * kSupersample);
}

void validate_spec(const LesionSpec& spec) {
    if (spec.height < 8 || spec.width < 8) throw InvalidSpecError("image must be at least 8x8");
    if (spec.kind == LesionKind::no_tumor) return;
    if (spec.radius_row <= 0.0 || spec.radius_col <= 0.0) throw InvalidSpecError("radii must be positive");
    if (spec.kind == LesionKind::malignant_star) {
        if (spec.spike_count < 5) throw InvalidSpecError("star needs at least 5 spikes");
        if (!(spec.spike_depth > 0.0 && spec.spike_depth < 1.0)) {
            throw InvalidSpecError("spike depth must lie in (0,1)");
        }
    }
    const double margin = 2.0;
    if (spec.center_row - spec.radius_row < margin || spec.center_row + spec.radius_row > spec.height - margin ||
        spec.center_col - spec.radius_col < margin || spec.center_col + spec.radius_col > spec.width - margin) {
        throw InvalidSpecError("lesion does not fit inside the image with a 2-pixel margin");
    }
}

}  // namespace

const char* lesion_kind_name(LesionKind kind) {
    switch (kind) {
        case LesionKind::benign_ellipse: return "benign_ellipse";
        case LesionKind::malignant_star: return "malignant_star";
        case LesionKind::no_tumor: return "no_tumor";
    }
    return "unknown";
}

LesionKind lesion_kind_from_name(const std::string& name) {
    if (name == "benign_ellipse") return LesionKind::benign_ellipse;
    if (name == "malignant_star") return LesionKind::malignant_star;
    if (name == "no_tumor") return LesionKind::no_tumor;
    throw InvalidInputError("unknown lesion kind: " + name);
}

Grid rasterize_coverage(const LesionSpec& spec) {
    validate_spec(spec);
    Grid coverage(spec.height, spec.width, 0.0);
    if (spec.kind == LesionKind::no_tumor) return coverage;
    for (int r = 0; r < spec.height; ++r) {
        for (int c = 0; c < spec.width; ++c) coverage(r, c) = pixel_coverage(spec, r, c);
    }
    return coverage;
}

SyntheticSample generate(const LesionSpec& spec) {
    validate_spec(spec);
    Rng rng(spec.seed);

    Grid image(spec.height, spec.width);
    Grid mask(spec.height, spec.width, 0.0);

    for (int r = 0; r < spec.height; ++r) {
        for (int c = 0; c < spec.width; ++c) {
            const double background = spec.background_mean + rng.normal(0.0, spec.background_noise_sd);
            double value = background;
            if (spec.kind != LesionKind::no_tumor) {
                const double coverage = pixel_coverage(spec, r, c);
                if (coverage > 0.0) {
                    const double interior = spec.lesion_mean + rng.normal(0.0, spec.interior_noise_sd);
                    value = (1.0 - coverage) * background + coverage * interior;
                }
                if (coverage >= 0.5) mask(r, c) = 1.0;
            }
            image(r, c) = clamp01(value);
        }
    }

    const int label = spec.kind == LesionKind::malignant_star ? 1 : 0;
    return SyntheticSample{GrayImage(std::move(image)), std::move(mask), label, spec};
}

namespace {

// Draws a source-domain spec; the shifted domain is a pure transform of it,
// so equal seeds give field-for-field comparable specs across domains.
LesionSpec random_spec(LesionKind kind, int height, int width, Rng& rng) {
    LesionSpec spec;
    spec.kind = kind;
    spec.height = height;
    spec.width = width;
    spec.seed = rng.next_u64();

    const double shorter = std::min(height, width);
    const double base_radius = rng.uniform(0.14, 0.24) * shorter;
    const double aspect = rng.uniform(0.8, 1.25);

    spec.radius_row = base_radius;
    spec.radius_col = std::min(base_radius * aspect, 0.5 * shorter - 3.0);
    const double margin_r = spec.radius_row + 3.0;
    const double margin_c = spec.radius_col + 3.0;
    spec.center_row = rng.uniform(margin_r, height - margin_r);
    spec.center_col = rng.uniform(margin_c, width - margin_c);

    if (kind == LesionKind::malignant_star) {
        spec.spike_count = rng.uniform_int(5, 9);
        spec.spike_depth = rng.uniform(0.3, 0.5);
        spec.interior_noise_sd = 0.12;
    } else {
        spec.interior_noise_sd = 0.02;
    }
    spec.background_noise_sd = 0.03;
    // malignant lesions skew darker (hypoechoic) with heterogeneous
    // interiors, benign ones lighter and homogeneous
    const double intensity = rng.uniform(0.0, 1.0);
    spec.lesion_mean = kind == LesionKind::malignant_star ? 0.22 + 0.08 * intensity : 0.32 + 0.08 * intensity;
    spec.background_mean = rng.uniform(0.6, 0.7);
    return spec;
}

LesionSpec apply_domain_shift(LesionSpec spec) {
    spec.radius_row *= DomainShift::scale_factor;
    spec.radius_col *= DomainShift::scale_factor;
    spec.background_mean += DomainShift::background_offset;
    spec.interior_noise_sd *= DomainShift::noise_factor;
    spec.background_noise_sd *= DomainShift::noise_factor;
    return spec;
}

}  // namespace

std::vector<SyntheticSample> make_dataset(int n, const ClassMix& mix, Domain domain, uint64_t seed, int height,
                                          int width) {
    if (n <= 0) throw InvalidInputError("dataset size must be positive");
    const double mix_sum = mix.benign + mix.malignant + mix.no_tumor;
    if (std::abs(mix_sum - 1.0) > 1e-9 || mix.benign < 0.0 || mix.malignant < 0.0 || mix.no_tumor < 0.0) {
        throw InvalidInputError("class mix must be non-negative and sum to 1");
    }

    // Largest-remainder allocation for exact, deterministic class counts.
    const double exact[3] = {n * mix.benign, n * mix.malignant, n * mix.no_tumor};
    int counts[3];
    int assigned = 0;
    for (int k = 0; k < 3; ++k) {
        counts[k] = static_cast<int>(std::floor(exact[k]));
        assigned += counts[k];
    }
    while (assigned < n) {
        int best = 0;
        double best_frac = -1.0;
        for (int k = 0; k < 3; ++k) {
            const double frac = exact[k] - counts[k];
            if (frac > best_frac + 1e-12) {
                best_frac = frac;
                best = k;
            }
        }
        ++counts[best];
        ++assigned;
    }

    static constexpr LesionKind kKinds[3] = {LesionKind::benign_ellipse, LesionKind::malignant_star,
                                             LesionKind::no_tumor};
    Rng rng(seed);
    std::vector<SyntheticSample> samples;
    samples.reserve(n);
    for (int k = 0; k < 3; ++k) {
        for (int i = 0; i < counts[k]; ++i) {
            LesionSpec spec = random_spec(kKinds[k], height, width, rng);
            if (domain == Domain::shifted) spec = apply_domain_shift(spec);
            samples.push_back(generate(spec));
        }
    }
    // Seeded Fisher-Yates so classes interleave deterministically.
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(i + 1));
        std::swap(samples[i], samples[j]);
    }
    return samples;
}

std::pair<SyntheticSample, SyntheticSample> make_equal_area_pair(uint64_t seed, int size) {
    Rng rng(seed);

    LesionSpec star;
    star.kind = LesionKind::malignant_star;
    star.height = size;
    star.width = size;
    star.center_row = size / 2.0 + rng.uniform(-2.0, 2.0);
    star.center_col = size / 2.0 + rng.uniform(-2.0, 2.0);
    const double base_radius = rng.uniform(0.16, 0.26) * size;
    star.radius_row = base_radius;
    star.radius_col = base_radius;
    star.spike_count = rng.uniform_int(5, 9);
    star.spike_depth = rng.uniform(0.35, 0.5);
    star.interior_noise_sd = 0.12;
    star.lesion_mean = 0.3;
    star.background_mean = 0.65;
    star.seed = rng.next_u64();

    // Area of r(t) = R(1 - d|sin(k t / 2)|) is pi R^2 (1 - 4d/pi + d^2/2);
    // shrink the disc radius to match.
    const double d = star.spike_depth;
    const double area_ratio = 1.0 - 4.0 * d / std::numbers::pi + 0.5 * d * d;
    LesionSpec disc = star;
    disc.kind = LesionKind::benign_ellipse;
    disc.radius_row = base_radius * std::sqrt(area_ratio);
    disc.radius_col = disc.radius_row;
    disc.interior_noise_sd = 0.02;
    disc.seed = rng.next_u64();

    return {generate(disc), generate(star)};
}

}  // namespace softmorph
