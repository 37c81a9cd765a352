#include "softmorph/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "softmorph/errors.hpp"

namespace softmorph {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw InvalidInputError(message);
}

}  // namespace

Grid::Grid(int height, int width, double fill) : height_(height), width_(width) {
    require(height > 0 && width > 0, "grid dimensions must be positive");
    values_.assign(static_cast<std::size_t>(height) * width, fill);
}

Grid Grid::from_values(int height, int width, std::vector<double> values) {
    require(height > 0 && width > 0, "grid dimensions must be positive");
    require(values.size() == static_cast<std::size_t>(height) * width,
            "value count does not match grid shape");
    Grid g;
    g.height_ = height;
    g.width_ = width;
    g.values_ = std::move(values);
    return g;
}

bool Grid::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::pair<double, double> Grid::min_max() const {
    auto [lo, hi] = std::minmax_element(values_.begin(), values_.end());
    return {*lo, *hi};
}

GrayImage::GrayImage(Grid grid) : grid_(std::move(grid)) {
    require(grid_.height() >= 3 && grid_.width() >= 3, "gray image must be at least 3x3");
    for (double v : grid_.values()) {
        require(std::isfinite(v) && v >= 0.0 && v <= 1.0, "gray image values must lie in [0,1]");
    }
}

LogitGrid::LogitGrid(Grid grid) : grid_(std::move(grid)) {
    require(grid_.all_finite(), "logit grid values must be finite");
}

SoftMask::SoftMask(Grid grid) : grid_(std::move(grid)) {
    for (double v : grid_.values()) {
        require(std::isfinite(v) && v >= 0.0 && v <= 1.0, "soft mask values must lie in [0,1]");
    }
}

EdgeMap::EdgeMap(Grid grid) : grid_(std::move(grid)) {
    for (double v : grid_.values()) {
        require(std::isfinite(v) && v >= 0.0, "edge map values must be non-negative");
    }
}

double sigmoid(double logit) {
    if (logit >= 0.0) {
        return 1.0 / (1.0 + std::exp(-logit));
    }
    const double e = std::exp(logit);
    return e / (1.0 + e);
}

SoftMask sigmoid_grid(const LogitGrid& logits) {
    const Grid& s = logits.grid();
    Grid out(s.height(), s.width());
    const std::size_t n = s.size();
    for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid(s[i]);
    return SoftMask(std::move(out));
}

SobelComponents sobel_components(const Grid& values) {
    if (values.height() < 3 || values.width() < 3) {
        throw InvalidInputError("sobel requires a grid of at least 3x3");
    }
    const int h = values.height();
    const int w = values.width();
    SobelComponents out{Grid(h, w), Grid(h, w)};
    auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    for (int r = 0; r < h; ++r) {
        const int rm = clamp(r - 1, h - 1);
        const int rp = clamp(r + 1, h - 1);
        for (int c = 0; c < w; ++c) {
            const int cm = clamp(c - 1, w - 1);
            const int cp = clamp(c + 1, w - 1);
            const double tl = values(rm, cm), tc = values(rm, c), tr = values(rm, cp);
            const double ml = values(r, cm), mr = values(r, cp);
            const double bl = values(rp, cm), bc = values(rp, c), br = values(rp, cp);
            out.gx(r, c) = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
            out.gy(r, c) = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
        }
    }
    return out;
}

EdgeMap sobel_edge_magnitude(const SoftMask& mask) {
    const SobelComponents g = sobel_components(mask.grid());
    const int h = mask.height();
    const int w = mask.width();
    Grid e(h, w);
    for (std::size_t i = 0; i < e.size(); ++i) {
        e[i] = std::sqrt(g.gx[i] * g.gx[i] + g.gy[i] * g.gy[i] + kEdgeEps);
    }
    return EdgeMap(std::move(e));
}

double grid_sum(const Grid& values) {
    double acc = 0.0;
    for (double v : values.values()) acc += v;
    return acc;
}

double masked_sum(const SoftMask& mask) { return grid_sum(mask.grid()); }

double masked_mean(const SoftMask& mask) {
    return grid_sum(mask.grid()) / static_cast<double>(mask.grid().size());
}

}  // namespace softmorph
