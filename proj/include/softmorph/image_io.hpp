#pragma once

#include <filesystem>

#include "softmorph/grid.hpp"

namespace softmorph {

/// Load an 8-bit grayscale image as reals in [0,1] (pixel k maps to
/// k / maxval; maxval is 255 for everything this tool writes).
/// Supports binary PGM (P5) and 8-bit grayscale PNG, picked by content.
Grid read_gray_image(const std::filesystem::path& path);

/// Write a grid of [0,1] values as binary PGM (P5, maxval 255), rounding to
/// the nearest 8-bit level.
void write_pgm(const std::filesystem::path& path, const Grid& values);

}  // namespace softmorph
