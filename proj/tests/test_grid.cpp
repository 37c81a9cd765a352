#include <cmath>
#include <filesystem>
#include <fstream>

#include <png.h>

#include "doctest.h"
#include "softmorph/errors.hpp"
#include "softmorph/grid.hpp"
#include "softmorph/image_io.hpp"
#include "softmorph/rng.hpp"

using namespace softmorph;

namespace {

Grid random_grid(int h, int w, uint64_t seed, double lo = -3.0, double hi = 3.0) {
    Rng rng(seed);
    Grid g(h, w);
    for (double& v : g.values()) v = rng.uniform(lo, hi);
    return g;
}

// Independent Sobel oracle: per-pixel 3x3 loop with explicit clamping.
double sobel_oracle_at(const Grid& m, int r, int c, bool horizontal) {
    static const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    double acc = 0.0;
    for (int i = -1; i <= 1; ++i) {
        for (int j = -1; j <= 1; ++j) {
            int rr = std::min(std::max(r + i, 0), m.height() - 1);
            int cc = std::min(std::max(c + j, 0), m.width() - 1);
            acc += (horizontal ? kx[i + 1][j + 1] : ky[i + 1][j + 1]) * m(rr, cc);
        }
    }
    return acc;
}

}  // namespace

TEST_SUITE("grid") {
    TEST_CASE("sigmoid of zero logits is exactly one half") {
        LogitGrid logits(Grid(4, 4, 0.0));
        const SoftMask mask = sigmoid_grid(logits);
        for (double v : mask.grid().values()) CHECK(v == 0.5);
    }

    TEST_CASE("sigmoid saturates cleanly at +-20") {
        Grid g(3, 3, 20.0);
        g(1, 1) = 0.0;
        g(2, 2) = -20.0;
        const SoftMask mask = sigmoid_grid(LogitGrid(g));
        CHECK(mask(1, 1) == 0.5);
        CHECK(mask(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
        CHECK(mask(2, 2) == doctest::Approx(0.0).epsilon(1e-8));
        CHECK(mask(2, 2) > 0.0);
    }

    TEST_CASE("sigmoid matches scalar oracle on a random 8x8 grid") {
        const Grid s = random_grid(8, 8, 42);
        const SoftMask mask = sigmoid_grid(LogitGrid(s));
        for (int r = 0; r < 8; ++r) {
            for (int c = 0; c < 8; ++c) {
                const double expected = 1.0 / (1.0 + std::exp(-s(r, c)));
                CHECK(mask(r, c) == doctest::Approx(expected).epsilon(1e-15));
            }
        }
    }

    TEST_CASE("sigmoid survives |s| = 1e3 without overflow and stays in (0,1)") {
        Grid g(3, 3, 1000.0);
        g(0, 1) = -1000.0;
        const SoftMask mask = sigmoid_grid(LogitGrid(g));
        CHECK(mask(0, 0) <= 1.0);
        CHECK(mask(0, 1) >= 0.0);
        for (double v : mask.grid().values()) CHECK(std::isfinite(v));
    }

    TEST_CASE("non-finite logits are rejected") {
        Grid g(3, 3, 0.0);
        g(1, 1) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(LogitGrid{g}, InvalidInputError);
    }

    TEST_CASE("sobel of a constant mask is uniformly sqrt(edge eps)") {
        const SoftMask mask{Grid(6, 7, 0.7)};
        const EdgeMap edges = sobel_edge_magnitude(mask);
        for (double v : edges.grid().values()) CHECK(v == doctest::Approx(std::sqrt(kEdgeEps)).epsilon(1e-12));
    }

    TEST_CASE("vertical step: boundary columns carry |Gx| = 4, Gy = 0") {
        Grid g(8, 8, 0.0);
        for (int r = 0; r < 8; ++r) {
            for (int c = 4; c < 8; ++c) g(r, c) = 1.0;
        }
        const SobelComponents sc = sobel_components(g);
        for (int r = 0; r < 8; ++r) {
            CHECK(sc.gx(r, 3) == 4.0);
            CHECK(sc.gx(r, 4) == 4.0);
            CHECK(sc.gx(r, 2) == 0.0);
            CHECK(sc.gy(r, 3) == 0.0);
        }
        // full map against the direct convolution oracle
        const EdgeMap e = sobel_edge_magnitude(SoftMask{g});
        for (int r = 0; r < 8; ++r) {
            for (int c = 0; c < 8; ++c) {
                const double gx = sobel_oracle_at(g, r, c, true);
                const double gy = sobel_oracle_at(g, r, c, false);
                CHECK(e(r, c) == doctest::Approx(std::sqrt(gx * gx + gy * gy + kEdgeEps)).epsilon(1e-12));
            }
        }
    }

    TEST_CASE("single bright pixel matches hand convolution") {
        Grid g(5, 5, 0.0);
        g(2, 2) = 1.0;
        const EdgeMap e = sobel_edge_magnitude(SoftMask{g});
        for (int r = 0; r < 5; ++r) {
            for (int c = 0; c < 5; ++c) {
                const double gx = sobel_oracle_at(g, r, c, true);
                const double gy = sobel_oracle_at(g, r, c, false);
                CHECK(e(r, c) == doctest::Approx(std::sqrt(gx * gx + gy * gy + kEdgeEps)).epsilon(1e-12));
            }
        }
        // hand-checked taps: diagonal neighbors see (|Gx|,|Gy|) = (1,1)
        CHECK(e(1, 1) == doctest::Approx(std::sqrt(2.0 + kEdgeEps)));
        CHECK(e(2, 1) == doctest::Approx(std::sqrt(4.0 + kEdgeEps)));  // |Gx| = 2
        CHECK(e(2, 2) == doctest::Approx(std::sqrt(kEdgeEps)));        // center: both zero
    }

    TEST_CASE("sobel rejects grids smaller than 3x3") {
        CHECK_THROWS_AS(sobel_edge_magnitude(SoftMask{Grid(2, 5, 0.1)}), InvalidInputError);
    }

    TEST_CASE("flipping the mask left-right flips the edge map left-right") {
        Rng rng(7);
        Grid g(9, 11);
        for (double& v : g.values()) v = rng.uniform();
        Grid flipped(9, 11);
        for (int r = 0; r < 9; ++r) {
            for (int c = 0; c < 11; ++c) flipped(r, c) = g(r, 10 - c);
        }
        const EdgeMap e = sobel_edge_magnitude(SoftMask{g});
        const EdgeMap ef = sobel_edge_magnitude(SoftMask{flipped});
        for (int r = 0; r < 9; ++r) {
            for (int c = 0; c < 11; ++c) CHECK(ef(r, c) == doctest::Approx(e(r, 10 - c)).epsilon(1e-14));
        }
    }

    TEST_CASE("masked sum and mean: all-ones and all-zeros") {
        const SoftMask ones{Grid(4, 4, 1.0)};
        CHECK(masked_sum(ones) == 16.0);
        CHECK(masked_mean(ones) == 1.0);
        const SoftMask zeros{Grid(4, 4, 0.0)};
        CHECK(masked_sum(zeros) == 0.0);
        CHECK(masked_mean(zeros) == 0.0);
    }

    TEST_CASE("masked sum matches scalar accumulation oracle") {
        Rng rng(11);
        Grid g(7, 5);
        double expected = 0.0;
        for (double& v : g.values()) {
            v = rng.uniform();
            expected += v;
        }
        const SoftMask mask{g};
        CHECK(masked_sum(mask) == doctest::Approx(expected).epsilon(1e-15));
        CHECK(masked_mean(mask) == doctest::Approx(expected / 35.0).epsilon(1e-15));
        CHECK(masked_mean(mask) >= 0.0);
        CHECK(masked_mean(mask) <= 1.0);
    }

    TEST_CASE("pgm round trip preserves 8-bit levels") {
        const auto dir = std::filesystem::temp_directory_path() / "softmorph_grid_test";
        std::filesystem::create_directories(dir);
        Grid g(5, 9);
        Rng rng(3);
        for (double& v : g.values()) v = rng.uniform_int(0, 255) / 255.0;
        write_pgm(dir / "probe.pgm", g);
        const Grid back = read_gray_image(dir / "probe.pgm");
        REQUIRE(back.height() == 5);
        REQUIRE(back.width() == 9);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(back[i] == doctest::Approx(g[i]).epsilon(1e-12));
    }

    TEST_CASE("grayscale png round trip") {
        const auto dir = std::filesystem::temp_directory_path() / "softmorph_grid_test";
        std::filesystem::create_directories(dir);
        const auto path = dir / "probe.png";

        // write an 8-bit grayscale PNG with libpng
        Rng rng(9);
        const int h = 6, w = 11;
        std::vector<unsigned char> pixels(h * w);
        for (auto& p : pixels) p = static_cast<unsigned char>(rng.uniform_int(0, 255));
        {
            std::FILE* fp = std::fopen(path.string().c_str(), "wb");
            REQUIRE(fp != nullptr);
            png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
            png_infop info = png_create_info_struct(png);
            REQUIRE(setjmp(png_jmpbuf(png)) == 0);
            png_init_io(png, fp);
            png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                         PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
            png_write_info(png, info);
            for (int r = 0; r < h; ++r) png_write_row(png, pixels.data() + r * w);
            png_write_end(png, nullptr);
            png_destroy_write_struct(&png, &info);
            std::fclose(fp);
        }

        const Grid back = read_gray_image(path);
        REQUIRE(back.height() == h);
        REQUIRE(back.width() == w);
        for (int i = 0; i < h * w; ++i) {
            CHECK(back[static_cast<std::size_t>(i)] == doctest::Approx(pixels[i] / 255.0).epsilon(1e-12));
        }
    }

    TEST_CASE("missing image file raises an I/O error naming the path") {
        try {
            read_gray_image("/nonexistent/foo.pgm");
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("/nonexistent/foo.pgm") != std::string::npos);
        }
    }

    TEST_CASE("gray image invariants") {
        CHECK_THROWS_AS(GrayImage{Grid(2, 3, 0.5)}, InvalidInputError);   // too small
        CHECK_THROWS_AS(GrayImage{Grid(4, 4, 1.5)}, InvalidInputError);   // out of range
        CHECK_NOTHROW(GrayImage{Grid(3, 3, 1.0)});
    }
}
