#pragma once

#include <span>
#include <utility>
#include <vector>

namespace softmorph {

/// Dense row-major 2-D array of 64-bit reals. The storage type behind every
/// image-shaped quantity in the library.
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, double fill = 0.0);

    static Grid from_values(int height, int width, std::vector<double> values);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return values_.size(); }

    double& operator()(int row, int col) { return values_[static_cast<std::size_t>(row) * width_ + col]; }
    double operator()(int row, int col) const { return values_[static_cast<std::size_t>(row) * width_ + col]; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }

    bool same_shape(const Grid& other) const { return height_ == other.height_ && width_ == other.width_; }

    bool all_finite() const;
    std::pair<double, double> min_max() const;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> values_;
};

/// Raw grayscale image g, values in [0, 1]. At least 3x3 so the edge kernels
/// always have a full neighborhood.
class GrayImage {
public:
    explicit GrayImage(Grid grid);
    const Grid& grid() const { return grid_; }
    int height() const { return grid_.height(); }
    int width() const { return grid_.width(); }
    double operator()(int r, int c) const { return grid_(r, c); }

private:
    Grid grid_;
};

/// Segmentation logits s, unrestricted finite reals.
class LogitGrid {
public:
    explicit LogitGrid(Grid grid);
    const Grid& grid() const { return grid_; }
    int height() const { return grid_.height(); }
    int width() const { return grid_.width(); }
    double operator()(int r, int c) const { return grid_(r, c); }

private:
    Grid grid_;
};

/// Soft mask y = sigmoid(s), values in [0, 1]. Values are strictly inside
/// (0, 1) when produced from finite logits; masks loaded from 8-bit images
/// may touch the endpoints.
class SoftMask {
public:
    explicit SoftMask(Grid grid);
    const Grid& grid() const { return grid_; }
    int height() const { return grid_.height(); }
    int width() const { return grid_.width(); }
    double operator()(int r, int c) const { return grid_(r, c); }

private:
    Grid grid_;
};

/// Non-negative edge magnitude E.
class EdgeMap {
public:
    explicit EdgeMap(Grid grid);
    const Grid& grid() const { return grid_; }
    int height() const { return grid_.height(); }
    int width() const { return grid_.width(); }
    double operator()(int r, int c) const { return grid_(r, c); }

private:
    Grid grid_;
};

// Smoothing constant inside the edge magnitude: E = sqrt(Gx^2 + Gy^2 + kEdgeEps),
// keeps the map differentiable where the gradient field vanishes.
inline constexpr double kEdgeEps = 1e-12;

/// Numerically stable elementwise sigmoid (sign-split form, no overflow for
/// |s| up to 1e3 and beyond).
SoftMask sigmoid_grid(const LogitGrid& logits);

double sigmoid(double logit);

/// Horizontal and vertical Sobel responses with replicate (clamp-to-edge)
/// border padding. Kernels are the unnormalized [-1 0 1; -2 0 2; -1 0 1]
/// and its transpose.
struct SobelComponents {
    Grid gx;
    Grid gy;
};
SobelComponents sobel_components(const Grid& values);

/// Edge magnitude sqrt(Gx^2 + Gy^2 + kEdgeEps). Input must be at least 3x3.
EdgeMap sobel_edge_magnitude(const SoftMask& mask);

double masked_sum(const SoftMask& mask);
double masked_mean(const SoftMask& mask);

double grid_sum(const Grid& values);

}  // namespace softmorph
