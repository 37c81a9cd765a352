#pragma once

#include "softmorph/grid.hpp"
#include "softmorph/prior.hpp"

namespace softmorph {

/// The five loss-term weights. All must be non-negative.
struct Hyper {
    double w_seg = 0.9;
    double w_cls = 0.1;
    double alpha = 0.0;      // consistency strength; 0 = plain multi-task baseline
    double lambda_nt = 0.5;  // no-tumor penalty weight (scaled by alpha)
    double beta = 0.001;     // L2 on the prior-weight logits

    void validate() const;
};

/// Per-sample supervision: binary ground-truth mask and malignancy label.
/// has_tumor is derived from the mask, never set independently.
struct SampleTargets {
    Grid mask_gt;  // values in {0,1}
    int label;     // 0 benign, 1 malignant
    bool has_tumor;

    static SampleTargets from_mask(Grid mask_gt, int label);
};

/// The addends of the training objective and their weighted total.
struct LossBreakdown {
    double seg = 0.0;          // BCE-with-logits on the mask
    double cls = 0.0;          // BCE-with-logits on the malignancy logit
    double consistency = 0.0;  // (p_hat - phi)^2
    double no_tumor = 0.0;     // mean(y) on tumor-free samples, else 0
    double l2 = 0.0;           // ||u||^2
    double total = 0.0;
    Hyper weights;
};

/// Mean binary cross-entropy from logits, log-sum-exp stabilized.
double bce_with_logits(const Grid& logits, const Grid& targets);
double bce_with_logits(double logit, double target);

double consistency_loss(double p_hat, double phi);

/// mean(y) when the sample has no tumor pixel, exactly 0 otherwise.
double no_tumor_penalty(const SoftMask& mask, const SampleTargets& targets);

/// total = w_seg*seg + w_cls*cls + alpha*cons + alpha*lambda_nt*ntp + beta*l2.
LossBreakdown compose_breakdown(double seg, double cls, double consistency, double no_tumor, double l2,
                                const Hyper& hyper);

/// Where consistency-term gradients flow: into both the prediction p_hat and
/// the morphology score phi (default), or into only one of them.
enum class ConsistencyGrad { both, prior_only, pred_only };

/// Full forward evaluation of the objective for one sample.
/// Normalizers must be initialized; they are read-only here (frozen stats).
LossBreakdown total_loss(const LogitGrid& logits, double malig_logit, const GrayImage& image,
                         const SampleTargets& targets, const PriorWeights& prior, const EmaNormalizer& norm_roughness,
                         const EmaNormalizer& norm_texture, const Hyper& hyper);

}  // namespace softmorph
