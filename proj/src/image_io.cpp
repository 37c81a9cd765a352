#include "softmorph/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "softmorph/errors.hpp"

namespace softmorph {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& why) {
    throw IoError(path.string() + ": " + why);
}

int read_pnm_token(std::istream& in, const std::filesystem::path& path) {
    // Skips whitespace and '#' comments between header fields.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) fail(path, "truncated PGM header");
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) fail(path, "malformed PGM header");
    return value;
}

Grid read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open file");
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] != 'P' || magic[1] != '5') fail(path, "not a binary PGM (P5) file");
    const int width = read_pnm_token(in, path);
    const int height = read_pnm_token(in, path);
    const int maxval = read_pnm_token(in, path);
    if (width <= 0 || height <= 0) fail(path, "non-positive PGM dimensions");
    if (maxval <= 0 || maxval > 255) fail(path, "only 8-bit PGM supported");
    std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) fail(path, "truncated PGM pixel data");
    Grid g(height, width);
    for (std::size_t i = 0; i < raw.size(); ++i) g[i] = static_cast<double>(raw[i]) / maxval;
    return g;
}

Grid read_png(const std::filesystem::path& path) {
    std::FILE* fp = std::fopen(path.string().c_str(), "rb");
    if (!fp) fail(path, "cannot open file");
    auto closer = std::unique_ptr<std::FILE, int (*)(std::FILE*)>(fp, &std::fclose);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail(path, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail(path, "libpng init failed");
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<unsigned char> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, "corrupt PNG data");
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int color_type = png_get_color_type(png, info);
    const int bit_depth = png_get_bit_depth(png, info);

    if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, "PNG must be grayscale");
    }
    if (bit_depth == 16) png_set_strip_16(png);
    if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    pixels.resize(static_cast<std::size_t>(width) * height);
    row_ptrs.resize(height);
    for (png_uint_32 r = 0; r < height; ++r) row_ptrs[r] = pixels.data() + static_cast<std::size_t>(r) * width;
    png_read_image(png, row_ptrs.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Grid g(static_cast<int>(height), static_cast<int>(width));
    for (std::size_t i = 0; i < pixels.size(); ++i) g[i] = static_cast<double>(pixels[i]) / 255.0;
    return g;
}

}  // namespace

Grid read_gray_image(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) fail(path, "cannot open file");
    unsigned char sig[8] = {0};
    probe.read(reinterpret_cast<char*>(sig), 8);
    probe.close();
    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (std::memcmp(sig, png_sig, 8) == 0) return read_png(path);
    if (sig[0] == 'P' && sig[1] == '5') return read_pgm(path);
    fail(path, "unrecognized image format (expected PGM P5 or grayscale PNG)");
}

void write_pgm(const std::filesystem::path& path, const Grid& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot open file for writing");
    out << "P5\n" << values.width() << " " << values.height() << "\n255\n";
    std::vector<unsigned char> raw(values.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        double v = values[i];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) fail(path, "write failed");
}

}  // namespace softmorph
