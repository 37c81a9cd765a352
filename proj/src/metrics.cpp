#include "softmorph/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "softmorph/errors.hpp"

namespace softmorph {

namespace {

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double shared = 0.5 * static_cast<double>(i + j) + 1.0;  // mean of ranks i+1..j+1
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct RankedDiffs {
    std::vector<double> abs_diff;
    std::vector<int> sign;
    std::vector<double> ranks;
    double w_plus = 0.0;
    double w_minus = 0.0;
};

RankedDiffs rank_differences(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InvalidInputError("wilcoxon: paired samples must have equal length");
    RankedDiffs rd;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        if (d == 0.0) continue;  // zero differences are dropped
        rd.abs_diff.push_back(std::abs(d));
        rd.sign.push_back(d > 0.0 ? 1 : -1);
    }
    if (rd.abs_diff.size() < 5) {
        throw InsufficientDataError("wilcoxon needs at least 5 non-zero differences");
    }
    rd.ranks = average_ranks(rd.abs_diff);
    for (std::size_t i = 0; i < rd.ranks.size(); ++i) {
        (rd.sign[i] > 0 ? rd.w_plus : rd.w_minus) += rd.ranks[i];
    }
    return rd;
}

// Exact null distribution of W+ over all 2^n sign assignments, as counts
// indexed by doubled rank sums (average ranks are multiples of 1/2).
std::vector<double> exact_wplus_counts(const std::vector<double>& ranks) {
    int total2 = 0;
    std::vector<int> doubled(ranks.size());
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        doubled[i] = static_cast<int>(std::llround(2.0 * ranks[i]));
        total2 += doubled[i];
    }
    std::vector<double> ways(static_cast<std::size_t>(total2) + 1, 0.0);
    ways[0] = 1.0;
    int reach = 0;
    for (const int dr : doubled) {
        for (int w = reach; w >= 0; --w) {
            if (ways[w] != 0.0) ways[w + dr] += ways[w];
        }
        reach += dr;
    }
    return ways;
}

WilcoxonResult wilcoxon_from_ranked(const RankedDiffs& rd, bool two_sided, WilcoxonResult::Method method) {
    const int n = static_cast<int>(rd.ranks.size());
    WilcoxonResult result;
    result.n_effective = n;
    result.statistic = std::min(rd.w_plus, rd.w_minus);
    result.method = method;

    if (method == WilcoxonResult::Method::exact) {
        const std::vector<double> counts = exact_wplus_counts(rd.ranks);
        const double total = std::ldexp(1.0, n);  // 2^n
        auto cdf_leq = [&](double w) {
            const int w2 = static_cast<int>(std::floor(2.0 * w + 1e-9));
            double acc = 0.0;
            for (int i = 0; i <= w2 && i < static_cast<int>(counts.size()); ++i) acc += counts[i];
            return acc / total;
        };
        if (two_sided) {
            // W+ is symmetric about S/2, so 2 * P(W+ <= min(W+, W-)), capped.
            result.p_value = std::min(1.0, 2.0 * cdf_leq(result.statistic));
        } else {
            // alternative: x > y, small W- is evidence
            result.p_value = cdf_leq(rd.w_minus);
        }
        return result;
    }

    const double mean = n * (n + 1) / 4.0;
    double tie_term = 0.0;
    {
        std::vector<double> sorted(rd.abs_diff);
        std::sort(sorted.begin(), sorted.end());
        std::size_t i = 0;
        while (i < sorted.size()) {
            std::size_t j = i;
            while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i + 1);
            tie_term += t * t * t - t;
            i = j + 1;
        }
    }
    const double var = n * (n + 1) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    const double sd = std::sqrt(var);
    if (two_sided) {
        const double z = (result.statistic - mean + 0.5) / sd;  // continuity correction
        result.p_value = std::min(1.0, 2.0 * normal_cdf(z));
    } else {
        const double z = (rd.w_minus - mean + 0.5) / sd;
        result.p_value = normal_cdf(z);
    }
    result.p_value = std::max(result.p_value, 1e-300);
    return result;
}

}  // namespace

double dice(const SoftMask& prediction, const Grid& ground_truth, double threshold) {
    if (!prediction.grid().same_shape(ground_truth)) {
        throw InvalidInputError("dice: prediction and ground truth shapes differ");
    }
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (std::size_t i = 0; i < ground_truth.size(); ++i) {
        const double gt = ground_truth[i];
        if (gt != 0.0 && gt != 1.0) throw InvalidInputError("dice: ground truth must be binary");
        const bool pred = prediction.grid()[i] >= threshold;
        if (pred && gt == 1.0) tp += 1.0;
        else if (pred) fp += 1.0;
        else if (gt == 1.0) fn += 1.0;
    }
    const double denom = 2.0 * tp + fp + fn;
    if (denom == 0.0) return 1.0;  // both empty: agreement
    return 2.0 * tp / denom;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw InvalidInputError("auc: scores and labels sizes differ");
    std::size_t n_pos = 0, n_neg = 0;
    for (const int l : labels) {
        if (l == 1) ++n_pos;
        else if (l == 0) ++n_neg;
        else throw InvalidInputError("auc: labels must be 0 or 1");
    }
    if (n_pos == 0 || n_neg == 0) {
        throw UndefinedMetricError("auc undefined: both classes must be present");
    }
    const std::vector<double> ranks = average_ranks(scores);
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) rank_sum_pos += ranks[i];
    }
    const double np = static_cast<double>(n_pos);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
    const RankedDiffs rd = rank_differences(x, y);
    const auto method = rd.ranks.size() <= 25 ? WilcoxonResult::Method::exact : WilcoxonResult::Method::normal_approx;
    return wilcoxon_from_ranked(rd, /*two_sided=*/true, method);
}

namespace detail {

WilcoxonResult wilcoxon_forced(std::span<const double> x, std::span<const double> y, bool two_sided,
                               WilcoxonResult::Method method) {
    return wilcoxon_from_ranked(rank_differences(x, y), two_sided, method);
}

}  // namespace detail

}  // namespace softmorph
