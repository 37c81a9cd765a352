#include "softmorph/loss.hpp"

#include <cmath>

#include "softmorph/errors.hpp"

namespace softmorph {

void Hyper::validate() const {
    if (w_seg < 0.0 || w_cls < 0.0 || alpha < 0.0 || lambda_nt < 0.0 || beta < 0.0) {
        throw InvalidInputError("loss weights must be non-negative");
    }
}

SampleTargets SampleTargets::from_mask(Grid mask_gt, int label) {
    if (label != 0 && label != 1) throw InvalidInputError("label must be 0 or 1");
    bool any = false;
    for (double v : mask_gt.values()) {
        if (v != 0.0 && v != 1.0) throw InvalidInputError("ground-truth mask must be binary");
        any = any || v == 1.0;
    }
    return SampleTargets{std::move(mask_gt), label, any};
}

double bce_with_logits(double logit, double target) {
    if (!(target >= 0.0 && target <= 1.0)) throw InvalidInputError("BCE target must lie in [0,1]");
    // max(s,0) - s*t + log(1 + exp(-|s|))
    const double positive = logit > 0.0 ? logit : 0.0;
    return positive - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

double bce_with_logits(const Grid& logits, const Grid& targets) {
    if (!logits.same_shape(targets)) throw InvalidInputError("BCE: logits and targets shapes differ");
    double acc = 0.0;
    const std::size_t n = logits.size();
    for (std::size_t i = 0; i < n; ++i) acc += bce_with_logits(logits[i], targets[i]);
    return acc / static_cast<double>(n);
}

double consistency_loss(double p_hat, double phi) {
    const double d = p_hat - phi;
    return d * d;
}

double no_tumor_penalty(const SoftMask& mask, const SampleTargets& targets) {
    return targets.has_tumor ? 0.0 : masked_mean(mask);
}

LossBreakdown compose_breakdown(double seg, double cls, double consistency, double no_tumor, double l2,
                                const Hyper& hyper) {
    hyper.validate();
    LossBreakdown b;
    b.seg = seg;
    b.cls = cls;
    b.consistency = consistency;
    b.no_tumor = no_tumor;
    b.l2 = l2;
    b.weights = hyper;
    b.total = hyper.w_seg * seg + hyper.w_cls * cls + hyper.alpha * consistency +
              hyper.alpha * hyper.lambda_nt * no_tumor + hyper.beta * l2;
    return b;
}

LossBreakdown total_loss(const LogitGrid& logits, double malig_logit, const GrayImage& image,
                         const SampleTargets& targets, const PriorWeights& prior, const EmaNormalizer& norm_roughness,
                         const EmaNormalizer& norm_texture, const Hyper& hyper) {
    const SoftMask mask = sigmoid_grid(logits);
    const double seg = bce_with_logits(logits.grid(), targets.mask_gt);
    const double cls = bce_with_logits(malig_logit, static_cast<double>(targets.label));

    FeatureVector fv;
    fv.area = area(mask);
    const RoughnessRaw rough = roughness_raw(mask);
    fv.perimeter = rough.perimeter;
    fv.roughness = norm_roughness.apply(rough.value);
    fv.compactness = compactness(mask);
    fv.texture = norm_texture.apply(texture_raw(mask, image));

    const PriorScore score = composite_score(fv, prior);
    const double p_hat = sigmoid(malig_logit);
    const double cons = consistency_loss(p_hat, score.phi);
    const double ntp = no_tumor_penalty(mask, targets);
    return compose_breakdown(seg, cls, cons, ntp, prior.penalty(), hyper);
}

}  // namespace softmorph
