#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "softmorph/errors.hpp"
#include "softmorph/metrics.hpp"
#include "softmorph/rng.hpp"

using namespace softmorph;

namespace {

// Exhaustive pair-counting AUC oracle.
double auc_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

// Brute-force Wilcoxon: enumerate all 2^n sign assignments of the ranked
// |differences| and read the two-sided p off the null distribution.
double wilcoxon_exact_oracle(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> abs_d;
    std::vector<int> sign;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        if (d == 0.0) continue;
        abs_d.push_back(std::abs(d));
        sign.push_back(d > 0 ? 1 : -1);
    }
    const int n = static_cast<int>(abs_d.size());
    REQUIRE(n >= 5);
    REQUIRE(n <= 20);

    // average ranks
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return abs_d[a] < abs_d[b]; });
    std::vector<double> rank(n);
    int i = 0;
    while (i < n) {
        int j = i;
        while (j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]]) ++j;
        for (int k = i; k <= j; ++k) rank[order[k]] = 0.5 * (i + j) + 1.0;
        i = j + 1;
    }

    double w_plus = 0.0, w_minus = 0.0;
    for (int k = 0; k < n; ++k) (sign[k] > 0 ? w_plus : w_minus) += rank[k];
    const double w_obs = std::min(w_plus, w_minus);

    long count_leq = 0;
    const long patterns = 1L << n;
    for (long mask = 0; mask < patterns; ++mask) {
        double wp = 0.0;
        for (int k = 0; k < n; ++k) {
            if (mask & (1L << k)) wp += rank[k];
        }
        if (wp <= w_obs + 1e-9) ++count_leq;
    }
    return std::min(1.0, 2.0 * static_cast<double>(count_leq) / static_cast<double>(patterns));
}

}  // namespace

TEST_SUITE("metrics") {
    TEST_CASE("dice of identical masks is 1, of disjoint masks 0") {
        Grid gt(6, 6, 0.0);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) gt(r, c) = 1.0;
        }
        Grid same = gt;
        CHECK(dice(SoftMask{same}, gt) == 1.0);
        Grid disjoint(6, 6, 0.0);
        for (int r = 3; r < 6; ++r) {
            for (int c = 3; c < 6; ++c) disjoint(r, c) = 1.0;
        }
        CHECK(dice(SoftMask{disjoint}, gt) == 0.0);
    }

    TEST_CASE("half coverage gives 2*50/(50+100)") {
        Grid gt(10, 10, 1.0);  // 100 pixels
        Grid pred(10, 10, 0.0);
        int painted = 0;
        for (int r = 0; r < 10 && painted < 50; ++r) {
            for (int c = 0; c < 10 && painted < 50; ++c) {
                pred(r, c) = 1.0;
                ++painted;
            }
        }
        CHECK(dice(SoftMask{pred}, gt) == doctest::Approx(2.0 * 50 / 150.0).epsilon(1e-12));
        CHECK(dice(SoftMask{pred}, gt) == doctest::Approx(0.6667).epsilon(1e-4));
    }

    TEST_CASE("both-empty dice is defined as 1") {
        CHECK(dice(SoftMask{Grid(4, 4, 0.0)}, Grid(4, 4, 0.0)) == 1.0);
        CHECK(dice(SoftMask{Grid(4, 4, 0.2)}, Grid(4, 4, 0.0)) == 1.0);  // below threshold
    }

    TEST_CASE("dice is symmetric in its two binary arguments after thresholding") {
        Rng rng(3);
        for (int trial = 0; trial < 10; ++trial) {
            Grid a(8, 8), b(8, 8);
            for (double& v : a.values()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
            for (double& v : b.values()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
            CHECK(dice(SoftMask{a}, b) == doctest::Approx(dice(SoftMask{b}, a)).epsilon(1e-14));
        }
    }

    TEST_CASE("dice shape mismatch is invalid input") {
        CHECK_THROWS_AS(dice(SoftMask{Grid(3, 3, 0.0)}, Grid(3, 4, 0.0)), InvalidInputError);
    }

    TEST_CASE("auc: separated scores, all ties, and the worked pair example") {
        {
            const std::vector<double> s{0.9, 0.8, 0.2, 0.1};
            const std::vector<int> l{1, 1, 0, 0};
            CHECK(auc(s, l) == 1.0);
        }
        {
            const std::vector<double> s{0.5, 0.5, 0.5, 0.5};
            const std::vector<int> l{1, 0, 1, 0};
            CHECK(auc(s, l) == 0.5);
        }
        {
            const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
            const std::vector<int> l{0, 0, 1, 1};
            CHECK(auc(s, l) == doctest::Approx(0.75).epsilon(1e-12));
        }
    }

    TEST_CASE("auc matches exhaustive pair counting on random score sets") {
        Rng rng(19);
        for (int trial = 0; trial < 60; ++trial) {
            const int n = rng.uniform_int(4, 30);
            std::vector<double> scores(n);
            std::vector<int> labels(n);
            bool pos = false, neg = false;
            for (int i = 0; i < n; ++i) {
                // quantized scores force plenty of ties
                scores[i] = rng.uniform_int(0, 9) / 10.0;
                labels[i] = rng.uniform() < 0.5 ? 1 : 0;
                pos = pos || labels[i] == 1;
                neg = neg || labels[i] == 0;
            }
            if (!pos || !neg) continue;
            CHECK(auc(scores, labels) == doctest::Approx(auc_oracle(scores, labels)).epsilon(1e-12));
        }
    }

    TEST_CASE("auc complement identities") {
        Rng rng(23);
        std::vector<double> scores(20);
        std::vector<int> labels(20);
        for (int i = 0; i < 20; ++i) {
            scores[i] = rng.uniform_int(0, 12) / 12.0;
            labels[i] = i < 8 ? 1 : 0;
        }
        std::vector<int> flipped(20);
        for (int i = 0; i < 20; ++i) flipped[i] = 1 - labels[i];
        CHECK(auc(scores, labels) + auc(scores, flipped) == doctest::Approx(1.0).epsilon(1e-12));
        std::vector<double> negated(20);
        for (int i = 0; i < 20; ++i) negated[i] = -scores[i];
        CHECK(auc(negated, labels) == doctest::Approx(1.0 - auc(scores, labels)).epsilon(1e-12));
    }

    TEST_CASE("auc is undefined for single-class labels") {
        const std::vector<double> s{0.1, 0.2};
        const std::vector<int> l{1, 1};
        CHECK_THROWS_AS(auc(s, l), UndefinedMetricError);
    }

    TEST_CASE("wilcoxon rejects all-zero differences") {
        const std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
        CHECK_THROWS_AS(wilcoxon_signed_rank(x, x), InsufficientDataError);
    }

    TEST_CASE("differences (+1..+5): W = 0 and exact two-sided p = 2/32") {
        const std::vector<double> y{0.0, 0.0, 0.0, 0.0, 0.0};
        const std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0};
        const WilcoxonResult w = wilcoxon_signed_rank(x, y);
        CHECK(w.statistic == 0.0);
        CHECK(w.n_effective == 5);
        CHECK(w.method == WilcoxonResult::Method::exact);
        CHECK(w.p_value == doctest::Approx(0.0625).epsilon(1e-12));
    }

    TEST_CASE("exact p matches full sign-pattern enumeration, n <= 12, with ties") {
        Rng rng(29);
        for (int trial = 0; trial < 40; ++trial) {
            const int n = rng.uniform_int(5, 12);
            std::vector<double> x(n), y(n);
            for (int i = 0; i < n; ++i) {
                x[i] = rng.uniform_int(0, 8) / 4.0;
                y[i] = rng.uniform_int(0, 8) / 4.0;
            }
            int nonzero = 0;
            for (int i = 0; i < n; ++i) nonzero += x[i] != y[i];
            if (nonzero < 5) continue;
            const WilcoxonResult w = wilcoxon_signed_rank(x, y);
            CHECK(w.p_value == doctest::Approx(wilcoxon_exact_oracle(x, y)).epsilon(1e-12));
        }
    }

    TEST_CASE("exact and normal-approximation p agree within 0.02 at n = 10") {
        Rng rng(31);
        for (int trial = 0; trial < 25; ++trial) {
            std::vector<double> x(10), y(10);
            for (int i = 0; i < 10; ++i) {
                x[i] = rng.normal(0.1, 1.0);
                y[i] = rng.normal(0.0, 1.0);
            }
            const WilcoxonResult exact = detail::wilcoxon_forced(x, y, true, WilcoxonResult::Method::exact);
            const WilcoxonResult approx =
                detail::wilcoxon_forced(x, y, true, WilcoxonResult::Method::normal_approx);
            CHECK(std::abs(exact.p_value - approx.p_value) < 0.02);
        }
    }

    TEST_CASE("large n switches to the normal approximation") {
        Rng rng(37);
        std::vector<double> x(40), y(40);
        for (int i = 0; i < 40; ++i) {
            x[i] = rng.normal(0.3, 1.0);
            y[i] = rng.normal(0.0, 1.0);
        }
        const WilcoxonResult w = wilcoxon_signed_rank(x, y);
        CHECK(w.method == WilcoxonResult::Method::normal_approx);
        CHECK(w.p_value > 0.0);
        CHECK(w.p_value <= 1.0);
    }

    TEST_CASE("one-sided p is half the two-sided p away from the cap") {
        const std::vector<double> y{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
        const std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
        const WilcoxonResult two = detail::wilcoxon_forced(x, y, true, WilcoxonResult::Method::exact);
        const WilcoxonResult one = detail::wilcoxon_forced(x, y, false, WilcoxonResult::Method::exact);
        CHECK(one.p_value == doctest::Approx(0.5 * two.p_value).epsilon(1e-12));
    }
}
