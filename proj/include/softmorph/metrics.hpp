#pragma once

#include <span>
#include <vector>

#include "softmorph/grid.hpp"

namespace softmorph {

/// Dice coefficient 2TP / (2TP + FP + FN) after binarizing the prediction at
/// `threshold`. Both-empty is defined as 1.0 (agreement that nothing is
/// there), which tumor-free samples make reachable.
double dice(const SoftMask& prediction, const Grid& ground_truth, double threshold = 0.5);

/// ROC AUC in the Mann-Whitney form P(score_pos > score_neg) + 0.5 P(tie),
/// via average ranks. Throws UndefinedMetricError unless both classes are
/// present.
double auc(std::span<const double> scores, std::span<const int> labels);

struct WilcoxonResult {
    double statistic = 0.0;  // W = min(W+, W-) on ranked |differences|
    double p_value = 1.0;    // two-sided
    int n_effective = 0;     // pairs with non-zero difference
    enum class Method { exact, normal_approx } method = Method::exact;
};

/// Paired Wilcoxon signed-rank test on x - y, average ranks for ties.
/// Exact null distribution (all 2^n sign assignments) when n_effective <= 25,
/// otherwise the normal approximation with tie and continuity corrections.
/// Throws InsufficientDataError with fewer than 5 non-zero differences.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

namespace detail {
/// Method/sidedness-forcing variant for cross-method consistency tests.
WilcoxonResult wilcoxon_forced(std::span<const double> x, std::span<const double> y, bool two_sided,
                               WilcoxonResult::Method method);
}  // namespace detail

}  // namespace softmorph
