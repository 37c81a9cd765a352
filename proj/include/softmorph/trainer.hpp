#pragma once

#include <filesystem>
#include <optional>
#include <span>

#include "softmorph/autodiff.hpp"
#include "softmorph/checkpoint.hpp"
#include "softmorph/metrics.hpp"
#include "softmorph/synth.hpp"

#include "json.hpp"

namespace softmorph {

/// Training protocol knobs. Defaults are the published protocol constants
/// except batch size, which defaults to the desk-scale 16 (the full-scale
/// value is 32).
struct TrainConfig {
    double learning_rate = 9.2e-4;
    double weight_decay = 1e-4;
    int batch_size = 16;
    int max_epochs = 60;
    int patience = 10;
    Hyper hyper;  // w_seg 0.9, w_cls 0.1, alpha, lambda_nt 0.5, beta 0.001
    uint64_t seed = 1;
    NetConfig net;
    ConsistencyGrad routing = ConsistencyGrad::both;
    Vec4 init_weights{0.15, 0.35, 0.25, 0.25};
    // global-norm gradient clip over the network parameters; <= 0 disables.
    // The morphology terms can spike early in training (the normalizer
    // window starts narrow), and unclipped spikes poison the adaptive
    // second moments.
    double clip_norm = 5.0;

    void validate() const;

    /// Strict parse: unknown keys are named-field errors, every field
    /// optional with the defaults above. "mode": "baseline" forces alpha 0.
    static TrainConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct StepRecord {
    int64_t step;
    LossBreakdown breakdown;
};

struct EpochRecord {
    int epoch;
    double lr;
    double train_loss;
    double val_loss;
    double val_dice;
    double val_auc;  // NaN when the validation set is single-class
    Vec4 prior_weights;
    double ema_roughness_min, ema_roughness_max;
    double ema_texture_min, ema_texture_max;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
};

struct TrainResult {
    Checkpoint best;
    TrainHistory history;
    int best_epoch = -1;
    int stopped_epoch = -1;  // last epoch actually run
    double best_val_loss = 0.0;
    double best_val_dice = 0.0;
    double best_val_auc = 0.0;
};

/// Full optimization run: AdamW with decoupled decay, per-epoch cosine
/// annealing over max_epochs, early stopping on validation total loss
/// (strict improvement, `patience` epochs), returning the checkpoint of the
/// best validation epoch. Deterministic per (config, sets).
TrainResult train(const TrainConfig& config, std::span<const SyntheticSample> train_set,
                  std::span<const SyntheticSample> val_set);

// Exact CSV layouts the acceptance suite diffs byte-for-byte.
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);
void write_epochs_csv(const TrainHistory& history, const std::filesystem::path& path);

struct EvalReport {
    std::vector<double> per_image_dice;
    std::vector<double> scores;  // sigmoid(malignancy logit)
    std::vector<int> labels;
    double mean_dice = 0.0;
    double auc = 0.0;  // NaN when single-class
    int n_benign = 0;
    int n_malignant = 0;
};

/// Frozen-EMA evaluation path: rebuilds the float network from the
/// checkpoint and scores every sample. Bitwise reproducible.
EvalReport evaluate_model(const Checkpoint& checkpoint, std::span<const SyntheticSample> samples);

struct SweepEntry {
    double alpha;
    double val_auc;
    double val_dice;
    int best_epoch;
    TrainResult result;
};

struct SweepResult {
    std::vector<SweepEntry> entries;  // ascending alpha
    int best_cls_index = -1;          // argmax val AUC, ties -> smaller alpha
    int best_seg_index = -1;          // argmax val Dice, ties -> smaller alpha

    const SweepEntry& best_cls() const { return entries[best_cls_index]; }
    const SweepEntry& best_seg() const { return entries[best_seg_index]; }
};

/// One training run per alpha (shared seed and data), recording internal
/// validation AUC and Dice of each best checkpoint and selecting
/// best-classification / best-segmentation models. `jobs` > 1 runs
/// trainings concurrently; results are identical either way.
SweepResult alpha_sweep(std::vector<double> alphas, const TrainConfig& base_config,
                        std::span<const SyntheticSample> train_set, std::span<const SyntheticSample> val_set,
                        int jobs = 1);

}  // namespace softmorph
