#include "softmorph/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <thread>

#include "softmorph/optim.hpp"
#include "softmorph/rng.hpp"

namespace softmorph {

double cosine_annealed_lr(double base_lr, int epoch, int max_epochs) {
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / max_epochs));
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidInputError("learning_rate must be positive");
    if (weight_decay < 0.0) throw InvalidInputError("weight_decay must be non-negative");
    if (batch_size < 1) throw InvalidInputError("batch_size must be at least 1");
    if (max_epochs < 1) throw InvalidInputError("max_epochs must be at least 1");
    if (patience < 1) throw InvalidInputError("patience must be at least 1");
    hyper.validate();
}

namespace {

ConsistencyGrad routing_from_string(const std::string& s) {
    if (s == "both") return ConsistencyGrad::both;
    if (s == "prior_only") return ConsistencyGrad::prior_only;
    if (s == "pred_only") return ConsistencyGrad::pred_only;
    throw InvalidInputError("consistency_grad must be both, prior_only, or pred_only");
}

const char* routing_to_string(ConsistencyGrad r) {
    switch (r) {
        case ConsistencyGrad::both: return "both";
        case ConsistencyGrad::prior_only: return "prior_only";
        case ConsistencyGrad::pred_only: return "pred_only";
    }
    return "both";
}

}  // namespace

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    bool baseline = false;
    for (const auto& [key, value] : j.items()) {
        if (key == "learning_rate") c.learning_rate = value.get<double>();
        else if (key == "weight_decay") c.weight_decay = value.get<double>();
        else if (key == "batch_size") c.batch_size = value.get<int>();
        else if (key == "max_epochs") c.max_epochs = value.get<int>();
        else if (key == "patience") c.patience = value.get<int>();
        else if (key == "w_seg") c.hyper.w_seg = value.get<double>();
        else if (key == "w_cls") c.hyper.w_cls = value.get<double>();
        else if (key == "alpha") c.hyper.alpha = value.get<double>();
        else if (key == "lambda_nt") c.hyper.lambda_nt = value.get<double>();
        else if (key == "beta") c.hyper.beta = value.get<double>();
        else if (key == "seed") c.seed = value.get<uint64_t>();
        else if (key == "clip_norm") c.clip_norm = value.get<double>();
        else if (key == "in_channels") c.net.in_channels = value.get<int>();
        else if (key == "widths") {
            const auto w = value.get<std::vector<int>>();
            if (w.size() != 3) throw InvalidInputError("config field 'widths' must have 3 entries");
            std::copy(w.begin(), w.end(), c.net.widths.begin());
        } else if (key == "consistency_grad") c.routing = routing_from_string(value.get<std::string>());
        else if (key == "init_weights") {
            const auto w = value.get<std::vector<double>>();
            if (w.size() != 4) throw InvalidInputError("config field 'init_weights' must have 4 entries");
            std::copy(w.begin(), w.end(), c.init_weights.begin());
        } else if (key == "mode") {
            const auto mode = value.get<std::string>();
            if (mode == "baseline") baseline = true;
            else if (mode != "proposed") throw InvalidInputError("config field 'mode' must be baseline or proposed");
        } else {
            throw InvalidInputError("unknown config field '" + key + "'");
        }
    }
    if (baseline) c.hyper.alpha = 0.0;
    c.validate();
    return c;
}

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"learning_rate", learning_rate},
                          {"weight_decay", weight_decay},
                          {"batch_size", batch_size},
                          {"max_epochs", max_epochs},
                          {"patience", patience},
                          {"w_seg", hyper.w_seg},
                          {"w_cls", hyper.w_cls},
                          {"alpha", hyper.alpha},
                          {"lambda_nt", hyper.lambda_nt},
                          {"beta", hyper.beta},
                          {"seed", seed},
                          {"clip_norm", clip_norm},
                          {"in_channels", net.in_channels},
                          {"widths", std::vector<int>(net.widths.begin(), net.widths.end())},
                          {"consistency_grad", routing_to_string(routing)},
                          {"init_weights", std::vector<double>(init_weights.begin(), init_weights.end())},
                          {"mode", hyper.alpha == 0.0 ? "baseline" : "proposed"}};
}

namespace {

struct ValMetrics {
    double loss = 0.0;
    double dice = 0.0;
    double auc = std::numeric_limits<double>::quiet_NaN();
};

ValMetrics validate_pass(const ToyNet<float>& net, std::span<const SyntheticSample> val_set,
                         const GraphContext& ctx) {
    ValMetrics out;
    std::vector<double> scores, dices;
    std::vector<int> labels;
    double loss_sum = 0.0;
    for (const SyntheticSample& sample : val_set) {
        const auto fwd = net.forward(sample.image);
        LogitGrid logits(fwd.logits);
        const SampleTargets targets = SampleTargets::from_mask(sample.mask_gt, sample.label);
        const LossBreakdown b = total_loss(logits, fwd.malig_logit, sample.image, targets, ctx.prior,
                                           ctx.norm_roughness, ctx.norm_texture, ctx.hyper);
        loss_sum += b.total;
        dices.push_back(dice(sigmoid_grid(logits), sample.mask_gt));
        scores.push_back(sigmoid(fwd.malig_logit));
        labels.push_back(sample.label);
    }
    const double n = static_cast<double>(val_set.size());
    out.loss = loss_sum / n;
    double dice_sum = 0.0;
    for (const double d : dices) dice_sum += d;
    out.dice = dice_sum / n;
    const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
    const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
    if (has_pos && has_neg) out.auc = auc(scores, labels);
    return out;
}

}  // namespace

TrainResult train(const TrainConfig& config, std::span<const SyntheticSample> train_set,
                  std::span<const SyntheticSample> val_set) {
    config.validate();
    if (train_set.empty() || val_set.empty()) throw InvalidInputError("train and validation sets must be non-empty");

    Rng master(config.seed);
    const uint64_t net_seed = master.next_u64();
    Rng order_rng = master.fork(1);

    ToyNet<float> net(config.net, net_seed);
    PriorWeights prior = PriorWeights::from_target_weights(config.init_weights);
    EmaNormalizer norm_r, norm_t;

    AdamW<float>::Options net_opt;
    net_opt.lr = config.learning_rate;
    net_opt.weight_decay = config.weight_decay;
    AdamW<float> opt_net(net_opt, net.params());

    std::vector<ParamBlock<double>> prior_block(1);
    prior_block[0].name = "prior.u";
    prior_block[0].shape = {4};
    prior_block[0].value.assign(prior.u.begin(), prior.u.end());
    prior_block[0].grad.assign(4, 0.0);
    AdamW<double>::Options prior_opt;
    prior_opt.lr = config.learning_rate;
    prior_opt.weight_decay = config.weight_decay;
    AdamW<double> opt_prior(prior_opt, prior_block);

    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    int64_t step_counter = 0;
    int epochs_since_improvement = 0;

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<typename ToyNet<float>::Trace> traces(config.batch_size);

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        const double lr = cosine_annealed_lr(config.learning_rate, epoch, config.max_epochs);
        opt_net.set_lr(lr);
        opt_prior.set_lr(lr);

        // seeded shuffle, one continuous stream across epochs
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            const std::size_t j = order_rng.next_u64() % (i + 1);
            std::swap(order[i], order[j]);
        }

        double epoch_loss_sum = 0.0;
        int epoch_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            const int batch_n = static_cast<int>(stop - start);
            const double inv_b = 1.0 / batch_n;

            // Pass 1: forward with kept traces, collect the raw feature
            // values that feed the EMA update.
            std::vector<typename ToyNet<float>::Output> outputs;
            outputs.reserve(batch_n);
            std::vector<double> rough_raws, tex_raws;
            for (std::size_t k = start; k < stop; ++k) {
                const SyntheticSample& sample = train_set[order[k]];
                outputs.push_back(net.forward(sample.image, traces[k - start]));
                const SoftMask mask = sigmoid_grid(LogitGrid(outputs.back().logits));
                rough_raws.push_back(roughness_raw(mask).value);
                tex_raws.push_back(texture_raw(mask, sample.image));
            }
            norm_r.update(rough_raws);
            norm_t.update(tex_raws);

            // Pass 2: per-sample loss and gradients with the stats frozen,
            // reusing the stored activations.
            GraphContext ctx{prior, norm_r, norm_t, config.hyper, config.routing};
            net.zero_grad();
            std::fill(prior_block[0].grad.begin(), prior_block[0].grad.end(), 0.0);
            LossBreakdown batch_b{};
            batch_b.weights = config.hyper;
            for (std::size_t k = start; k < stop; ++k) {
                const SyntheticSample& sample = train_set[order[k]];
                const auto& fwd = outputs[k - start];
                SampleInputs inputs{LogitGrid(fwd.logits), fwd.malig_logit, sample.image,
                                    SampleTargets::from_mask(sample.mask_gt, sample.label)};
                const GraphEvaluation eval = total_loss_with_gradients(inputs, ctx);

                batch_b.seg += eval.breakdown.seg * inv_b;
                batch_b.cls += eval.breakdown.cls * inv_b;
                batch_b.consistency += eval.breakdown.consistency * inv_b;
                batch_b.no_tumor += eval.breakdown.no_tumor * inv_b;
                batch_b.l2 = eval.breakdown.l2;  // parameter-only, identical per sample
                batch_b.total += eval.breakdown.total * inv_b;

                Grid dlogits = eval.grads.wrt_logits;
                for (double& v : dlogits.values()) v *= inv_b;
                net.backward(traces[k - start], dlogits, eval.grads.wrt_malig_logit * inv_b);
                for (int i = 0; i < 4; ++i) prior_block[0].grad[i] += eval.grads.wrt_prior_logits[i] * inv_b;
            }

            if (config.clip_norm > 0.0) {
                double sq = 0.0;
                for (const ParamBlock<float>& p : net.params()) {
                    for (const float g : p.grad) sq += static_cast<double>(g) * g;
                }
                const double norm = std::sqrt(sq);
                if (norm > config.clip_norm) {
                    const float scale = static_cast<float>(config.clip_norm / norm);
                    for (ParamBlock<float>& p : net.params()) {
                        for (float& g : p.grad) g *= scale;
                    }
                }
            }
            opt_net.step(net.params());
            opt_prior.step(prior_block);
            std::copy(prior_block[0].value.begin(), prior_block[0].value.end(), prior.u.begin());

            result.history.steps.push_back({step_counter++, batch_b});
            epoch_loss_sum += batch_b.total;
            ++epoch_steps;
        }

        GraphContext eval_ctx{prior, norm_r, norm_t, config.hyper, config.routing};
        const ValMetrics val = validate_pass(net, val_set, eval_ctx);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = epoch_loss_sum / epoch_steps;
        rec.val_loss = val.loss;
        rec.val_dice = val.dice;
        rec.val_auc = val.auc;
        rec.prior_weights = prior.weights();
        rec.ema_roughness_min = norm_r.running_min();
        rec.ema_roughness_max = norm_r.running_max();
        rec.ema_texture_min = norm_t.running_min();
        rec.ema_texture_max = norm_t.running_max();
        result.history.epochs.push_back(rec);
        result.stopped_epoch = epoch;

        if (val.loss < result.best_val_loss) {
            result.best_val_loss = val.loss;
            result.best_val_dice = val.dice;
            result.best_val_auc = val.auc;
            result.best_epoch = epoch;
            result.best = Checkpoint::capture(net, prior, norm_r, norm_t, step_counter, config.seed);
            epochs_since_improvement = 0;
        } else {
            ++epochs_since_improvement;
            if (epochs_since_improvement >= config.patience) break;
        }
    }
    return result;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << "step,L_seg,L_cls,L_cons,NTP,L2,total\n";
    for (const StepRecord& s : history.steps) {
        out << s.step << ',' << num(s.breakdown.seg) << ',' << num(s.breakdown.cls) << ','
            << num(s.breakdown.consistency) << ',' << num(s.breakdown.no_tumor) << ',' << num(s.breakdown.l2) << ','
            << num(s.breakdown.total) << '\n';
    }
}

void write_epochs_csv(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << "epoch,lr,train_loss,val_loss,val_dice,val_auc,w_A,w_R,w_C,w_T,"
           "ema_R_min,ema_R_max,ema_T_min,ema_T_max\n";
    for (const EpochRecord& e : history.epochs) {
        out << e.epoch << ',' << num(e.lr) << ',' << num(e.train_loss) << ',' << num(e.val_loss) << ','
            << num(e.val_dice) << ',' << num(e.val_auc) << ',' << num(e.prior_weights[0]) << ','
            << num(e.prior_weights[1]) << ',' << num(e.prior_weights[2]) << ',' << num(e.prior_weights[3]) << ','
            << num(e.ema_roughness_min) << ',' << num(e.ema_roughness_max) << ',' << num(e.ema_texture_min) << ','
            << num(e.ema_texture_max) << '\n';
    }
}

EvalReport evaluate_model(const Checkpoint& checkpoint, std::span<const SyntheticSample> samples) {
    if (samples.empty()) throw InvalidInputError("evaluation set must be non-empty");
    const ToyNet<float> net = checkpoint.build_net<float>();

    EvalReport report;
    for (const SyntheticSample& sample : samples) {
        const auto fwd = net.forward(sample.image);
        const SoftMask mask = sigmoid_grid(LogitGrid(fwd.logits));
        report.per_image_dice.push_back(dice(mask, sample.mask_gt));
        report.scores.push_back(sigmoid(fwd.malig_logit));
        report.labels.push_back(sample.label);
        if (sample.label == 1) ++report.n_malignant;
        else ++report.n_benign;
    }
    double dice_sum = 0.0;
    for (const double d : report.per_image_dice) dice_sum += d;
    report.mean_dice = dice_sum / static_cast<double>(report.per_image_dice.size());
    if (report.n_benign > 0 && report.n_malignant > 0) {
        report.auc = auc(report.scores, report.labels);
    } else {
        report.auc = std::numeric_limits<double>::quiet_NaN();
    }
    return report;
}

SweepResult alpha_sweep(std::vector<double> alphas, const TrainConfig& base_config,
                        std::span<const SyntheticSample> train_set, std::span<const SyntheticSample> val_set,
                        int jobs) {
    if (alphas.empty()) throw InvalidInputError("alpha grid must be non-empty");
    std::sort(alphas.begin(), alphas.end());

    SweepResult sweep;
    sweep.entries.resize(alphas.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= alphas.size()) break;
            TrainConfig config = base_config;
            config.hyper.alpha = alphas[i];
            TrainResult r = train(config, train_set, val_set);
            sweep.entries[i] =
                SweepEntry{alphas[i], r.best_val_auc, r.best_val_dice, r.best_epoch, std::move(r)};
        }
    };
    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(alphas.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    // argmax with ties resolved toward the smaller alpha (entries ascend);
    // NaN AUC entries (single-class validation) lose to any real value
    for (std::size_t i = 0; i < sweep.entries.size(); ++i) {
        const SweepEntry& e = sweep.entries[i];
        if (sweep.best_cls_index < 0) {
            sweep.best_cls_index = static_cast<int>(i);
        } else if (!std::isnan(e.val_auc)) {
            const double incumbent = sweep.entries[sweep.best_cls_index].val_auc;
            if (std::isnan(incumbent) || e.val_auc > incumbent) sweep.best_cls_index = static_cast<int>(i);
        }
        if (sweep.best_seg_index < 0 || e.val_dice > sweep.entries[sweep.best_seg_index].val_dice) {
            sweep.best_seg_index = static_cast<int>(i);
        }
    }
    return sweep;
}

}  // namespace softmorph
