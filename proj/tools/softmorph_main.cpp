// softmorph command-line tool: feature extraction, synthetic data generation,
// training, evaluation, and the gradient-check harness behind one entry point.

#include <chrono>
#include <cstdlib>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "softmorph/autodiff.hpp"
#include "softmorph/image_io.hpp"
#include "softmorph/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace softmorph;

namespace {

constexpr const char* kVersion = "0.1.0";

// Exit codes, also documented in the README.
enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kIoError = 3,
    kDataError = 4,
    kNumericalFailure = 5,
};

/// Configuration problems (bad config file, bad schema) exit with their own
/// code, distinct from bad runtime data.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

fs::path resolve_out(const std::string& out) {
    fs::path p(out);
    const char* root = std::getenv("SOFTMORPH_OUTPUT_ROOT");
    if (root != nullptr && p.is_relative()) p = fs::path(root) / p;
    return p;
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

void write_run_manifest(const fs::path& out_dir, const std::string& subcommand, const json& details) {
    json manifest{{"tool", "softmorph"},
                  {"version", kVersion},
                  {"subcommand", subcommand},
                  {"timestamp", timestamp_utc()}};
    manifest.update(details);
    std::ofstream f(out_dir / "run_manifest.json");
    f << manifest.dump(2) << "\n";
}

TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path + ": cannot open config");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": config parse error: " + e.what());
    }
    try {
        return TrainConfig::from_json(j);
    } catch (const InvalidInputError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

// ---------------------------------------------------------------------------
// dataset files (synth output <-> train/eval input)
// ---------------------------------------------------------------------------

void save_dataset(const std::vector<SyntheticSample>& samples, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
    manifest << "filename_image,filename_mask,label,kind,seed\n";
    char name[64];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::snprintf(name, sizeof(name), "img_%05zu.pgm", i);
        const std::string img_name = name;
        std::snprintf(name, sizeof(name), "mask_%05zu.pgm", i);
        const std::string mask_name = name;
        write_pgm(dir / img_name, samples[i].image.grid());
        write_pgm(dir / mask_name, samples[i].mask_gt);
        manifest << img_name << ',' << mask_name << ',' << samples[i].label << ','
                 << lesion_kind_name(samples[i].spec.kind) << ',' << samples[i].spec.seed << '\n';
    }
}

struct LoadedDataset {
    std::vector<SyntheticSample> samples;
    std::vector<std::string> image_names;
};

LoadedDataset load_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.csv";
    std::ifstream manifest(manifest_path);
    if (!manifest) throw IoError(manifest_path.string() + ": cannot open dataset manifest");
    LoadedDataset out;
    std::string line;
    std::getline(manifest, line);  // header
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string img_name, mask_name, label_str, kind_str, seed_str;
        std::getline(ss, img_name, ',');
        std::getline(ss, mask_name, ',');
        std::getline(ss, label_str, ',');
        std::getline(ss, kind_str, ',');
        std::getline(ss, seed_str, ',');
        GrayImage image(read_gray_image(dir / img_name));
        Grid mask = read_gray_image(dir / mask_name);
        for (double& v : mask.values()) v = v >= 0.5 ? 1.0 : 0.0;
        LesionSpec spec;
        spec.kind = lesion_kind_from_name(kind_str);
        spec.seed = std::stoull(seed_str);
        spec.height = image.height();
        spec.width = image.width();
        out.samples.push_back(SyntheticSample{std::move(image), std::move(mask), std::stoi(label_str), spec});
        out.image_names.push_back(img_name);
    }
    if (out.samples.empty()) throw InvalidInputError(manifest_path.string() + ": dataset is empty");
    return out;
}

void write_per_image_csv(const fs::path& path, const EvalReport& report, const std::vector<std::string>& names,
                         const std::vector<SyntheticSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << "index,filename,kind,label,score,dice\n";
    char buf[40];
    for (std::size_t i = 0; i < report.per_image_dice.size(); ++i) {
        out << i << ',' << names[i] << ',' << lesion_kind_name(samples[i].spec.kind) << ',' << report.labels[i]
            << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", report.scores[i]);
        out << buf << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", report.per_image_dice[i]);
        out << buf << '\n';
    }
}

std::vector<double> read_dice_column(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string() + ": cannot open per-image CSV");
    std::string header;
    std::getline(in, header);
    int dice_col = -1;
    {
        std::stringstream ss(header);
        std::string col;
        int idx = 0;
        while (std::getline(ss, col, ',')) {
            if (col == "dice") dice_col = idx;
            ++idx;
        }
    }
    if (dice_col < 0) throw InvalidInputError(path.string() + ": no 'dice' column");
    std::vector<double> dice;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        for (int c = 0; c <= dice_col; ++c) std::getline(ss, cell, ',');
        dice.push_back(std::stod(cell));
    }
    return dice;
}

json report_to_json(const EvalReport& report) {
    return json{{"mean_dice", report.mean_dice},
                {"auc", std::isnan(report.auc) ? json(nullptr) : json(report.auc)},
                {"n_benign", report.n_benign},
                {"n_malignant", report.n_malignant},
                {"n_images", report.per_image_dice.size()}};
}

json sweep_to_json(const SweepResult& sweep) {
    json entries = json::array();
    for (const SweepEntry& e : sweep.entries) {
        entries.push_back({{"alpha", e.alpha},
                           {"val_auc", std::isnan(e.val_auc) ? json(nullptr) : json(e.val_auc)},
                           {"val_dice", e.val_dice},
                           {"best_epoch", e.best_epoch}});
    }
    return json{{"entries", entries},
                {"best_cls_alpha", sweep.best_cls().alpha},
                {"best_seg_alpha", sweep.best_seg().alpha}};
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

int cmd_features(const std::string& mask_path, const std::string& image_path, const std::string& checkpoint_path,
                 const std::string& out) {
    SoftMask mask{read_gray_image(mask_path)};
    GrayImage image{read_gray_image(image_path)};

    json result;
    result["area"] = area(mask);
    const RoughnessRaw rough = roughness_raw(mask);
    result["perimeter"] = rough.perimeter;
    result["roughness_raw"] = rough.value;
    result["compactness"] = compactness(mask);
    result["texture_raw"] = texture_raw(mask, image);

    if (!checkpoint_path.empty()) {
        const Checkpoint ck = Checkpoint::load(checkpoint_path);
        EmaNormalizer norm_r = ck.norm_roughness;
        EmaNormalizer norm_t = ck.norm_texture;
        const FeatureVector fv = feature_vector(mask, image, norm_r, norm_t, FeatureMode::evaluation);
        const PriorWeights prior = ck.prior();
        const PriorScore score = composite_score(fv, prior);
        const Vec4 w = prior.weights();
        result["roughness"] = fv.roughness;
        result["texture"] = fv.texture;
        result["prior_score"] = score.phi;
        result["prior_weights"] = {{"w_A", w[0]}, {"w_R", w[1]}, {"w_C", w[2]}, {"w_T", w[3]}};
    }
    std::cout << result.dump(2) << "\n";
    if (!out.empty()) {
        const fs::path out_dir = resolve_out(out);
        fs::create_directories(out_dir);
        std::ofstream f(out_dir / "features.json");
        f << result.dump(2) << "\n";
        write_run_manifest(out_dir, "features",
                           {{"inputs", {mask_path, image_path}}, {"outputs", {"features.json"}}});
    }
    return kOk;
}

int cmd_synth(const std::string& out, int n, const std::string& mix_csv, const std::string& domain_str,
              uint64_t seed, int height, int width) {
    const std::vector<double> mix_values = parse_double_list(mix_csv);
    if (mix_values.size() != 3) throw InvalidInputError("--mix needs three comma-separated proportions");
    const ClassMix mix{mix_values[0], mix_values[1], mix_values[2]};
    Domain domain;
    if (domain_str == "source") domain = Domain::source;
    else if (domain_str == "shifted") domain = Domain::shifted;
    else throw InvalidInputError("--domain must be source or shifted");

    const auto samples = make_dataset(n, mix, domain, seed, height, width);
    const fs::path out_dir = resolve_out(out);
    save_dataset(samples, out_dir);
    write_run_manifest(out_dir, "synth",
                       {{"seed", seed},
                        {"n", n},
                        {"mix", mix_values},
                        {"domain", domain_str},
                        {"outputs", {"manifest.csv"}}});
    std::cout << "wrote " << samples.size() << " samples to " << out_dir.string() << "\n";
    return kOk;
}

int cmd_train(const std::string& config_path, const std::string& train_dir, const std::string& val_dir,
              const std::string& out, uint64_t seed, double alpha_override) {
    TrainConfig config = config_path.empty() ? TrainConfig{} : load_config(config_path);
    config.seed = seed;
    if (alpha_override >= 0.0) config.hyper.alpha = alpha_override;

    const LoadedDataset train_data = load_dataset(train_dir);
    const LoadedDataset val_data = load_dataset(val_dir);
    const TrainResult result = train(config, train_data.samples, val_data.samples);

    const fs::path out_dir = resolve_out(out);
    fs::create_directories(out_dir);
    result.best.save(out_dir / "checkpoint.bin");
    write_history_csv(result.history, out_dir / "history.csv");
    write_epochs_csv(result.history, out_dir / "epochs.csv");
    json summary{{"best_epoch", result.best_epoch},
                 {"stopped_epoch", result.stopped_epoch},
                 {"best_val_loss", result.best_val_loss},
                 {"best_val_dice", result.best_val_dice},
                 {"best_val_auc", std::isnan(result.best_val_auc) ? json(nullptr) : json(result.best_val_auc)},
                 {"config", config.to_json()}};
    {
        std::ofstream f(out_dir / "result.json");
        f << summary.dump(2) << "\n";
    }
    write_run_manifest(out_dir, "train",
                       {{"seed", seed},
                        {"config", config_path.empty() ? json(nullptr) : json(config_path)},
                        {"inputs", {train_dir, val_dir}},
                        {"outputs", {"checkpoint.bin", "history.csv", "epochs.csv", "result.json"}}});
    std::cout << summary.dump(2) << "\n";
    return kOk;
}

int cmd_sweep(const std::string& config_path, const std::string& alphas_csv, const std::string& train_dir,
              const std::string& val_dir, const std::string& out, uint64_t seed, int jobs) {
    TrainConfig config = config_path.empty() ? TrainConfig{} : load_config(config_path);
    config.seed = seed;
    const std::vector<double> alphas = parse_double_list(alphas_csv);
    if (alphas.empty()) throw InvalidInputError("--alphas needs at least one value");

    const LoadedDataset train_data = load_dataset(train_dir);
    const LoadedDataset val_data = load_dataset(val_dir);
    const SweepResult sweep = alpha_sweep(alphas, config, train_data.samples, val_data.samples, jobs);

    const fs::path out_dir = resolve_out(out);
    fs::create_directories(out_dir);
    std::ofstream csv(out_dir / "sweep.csv", std::ios::binary);
    csv << "alpha,val_auc,val_dice,best_epoch,checkpoint\n";
    char buf[64];
    for (const SweepEntry& e : sweep.entries) {
        std::snprintf(buf, sizeof(buf), "alpha_%g", e.alpha);
        const fs::path run_dir = out_dir / buf;
        fs::create_directories(run_dir);
        e.result.best.save(run_dir / "checkpoint.bin");
        write_history_csv(e.result.history, run_dir / "history.csv");
        write_epochs_csv(e.result.history, run_dir / "epochs.csv");
        csv << e.alpha << ',' << e.val_auc << ',' << e.val_dice << ',' << e.best_epoch << ','
            << (fs::path(buf) / "checkpoint.bin").string() << '\n';
    }
    const json selection = sweep_to_json(sweep);
    {
        std::ofstream f(out_dir / "selection.json");
        f << selection.dump(2) << "\n";
    }
    write_run_manifest(out_dir, "sweep",
                       {{"seed", seed},
                        {"alphas", alphas},
                        {"inputs", {train_dir, val_dir}},
                        {"outputs", {"sweep.csv", "selection.json"}}});
    std::cout << selection.dump(2) << "\n";
    return kOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir, const std::string& out) {
    const Checkpoint ck = Checkpoint::load(checkpoint_path);
    const LoadedDataset data = load_dataset(data_dir);
    const EvalReport report = evaluate_model(ck, data.samples);

    const json report_json = report_to_json(report);
    std::cout << report_json.dump(2) << "\n";
    if (!out.empty()) {
        const fs::path out_dir = resolve_out(out);
        fs::create_directories(out_dir);
        {
            std::ofstream f(out_dir / "report.json");
            f << report_json.dump(2) << "\n";
        }
        write_per_image_csv(out_dir / "per_image.csv", report, data.image_names, data.samples);
        write_run_manifest(out_dir, "eval",
                           {{"inputs", {checkpoint_path, data_dir}},
                            {"outputs", {"report.json", "per_image.csv"}}});
    }
    return kOk;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, const std::string& out) {
    const std::vector<double> a = read_dice_column(a_path);
    const std::vector<double> b = read_dice_column(b_path);
    if (a.size() != b.size()) {
        throw InvalidInputError("per-image CSVs have different row counts; comparison must be paired");
    }
    const WilcoxonResult w = wilcoxon_signed_rank(a, b);
    const json result{{"statistic", w.statistic},
                      {"p_value", w.p_value},
                      {"n_effective", w.n_effective},
                      {"method", w.method == WilcoxonResult::Method::exact ? "exact" : "normal_approx"},
                      {"mean_a", std::accumulate(a.begin(), a.end(), 0.0) / a.size()},
                      {"mean_b", std::accumulate(b.begin(), b.end(), 0.0) / b.size()}};
    std::cout << result.dump(2) << "\n";
    if (!out.empty()) {
        const fs::path out_dir = resolve_out(out);
        fs::create_directories(out_dir);
        std::ofstream f(out_dir / "wilcoxon.json");
        f << result.dump(2) << "\n";
        write_run_manifest(out_dir, "compare", {{"inputs", {a_path, b_path}}, {"outputs", {"wilcoxon.json"}}});
    }
    return kOk;
}

int cmd_gradcheck(int size, int probes, double step, int instances, uint64_t seed, const std::string& out) {
    FdCheckConfig config;
    config.step = step;
    config.probes = probes;
    bool all_passed = true;
    json cases = json::array();
    for (int k = 0; k < instances; ++k) {
        for (const GradCheckCase& c : run_graph_gradcheck(size, size, seed + k, config)) {
            all_passed = all_passed && c.report.passed;
            cases.push_back({{"instance_seed", seed + k},
                             {"scalar", graph_scalar_name(c.scalar)},
                             {"parameter", c.parameter},
                             {"max_abs_err", c.report.max_abs_err},
                             {"max_rel_err", c.report.max_rel_err},
                             {"probed_entries", c.report.probed_entries},
                             {"step", c.report.step},
                             {"passed", c.report.passed}});
        }
    }
    const json result{{"size", size},       {"instances", instances}, {"step", step},
                      {"rel_tol", config.rel_tol}, {"abs_tol", config.abs_tol}, {"all_passed", all_passed},
                      {"cases", cases}};
    std::cout << result.dump(2) << "\n";
    if (!out.empty()) {
        const fs::path out_dir = resolve_out(out);
        fs::create_directories(out_dir);
        std::ofstream f(out_dir / "gradcheck.json");
        f << result.dump(2) << "\n";
        write_run_manifest(out_dir, "gradcheck", {{"seed", seed}, {"outputs", {"gradcheck.json"}}});
    }
    return all_passed ? kOk : kNumericalFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"differentiable soft-mask morphology features, consistency-regularized multi-task training, and evaluation statistics"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // features
    auto* features_cmd = app.add_subcommand("features", "compute morphology features for a mask/image pair");
    std::string f_mask, f_image, f_checkpoint, f_out;
    features_cmd->add_option("--mask", f_mask, "soft mask image (PGM/PNG)")->required();
    features_cmd->add_option("--image", f_image, "grayscale image (PGM/PNG)")->required();
    features_cmd->add_option("--checkpoint", f_checkpoint, "checkpoint supplying normalizer and prior-weight state");
    features_cmd->add_option("--out", f_out, "directory for features.json and the run manifest");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic lesion dataset");
    std::string s_out, s_mix = "0.5,0.4,0.1", s_domain = "source";
    int s_n = 200, s_height = 64, s_width = 64;
    uint64_t s_seed = 0;
    synth_cmd->add_option("--out", s_out, "output directory")->required();
    synth_cmd->add_option("--n", s_n, "number of samples")->capture_default_str();
    synth_cmd->add_option("--mix", s_mix, "benign,malignant,no_tumor proportions")->capture_default_str();
    synth_cmd->add_option("--domain", s_domain, "source or shifted")->capture_default_str();
    synth_cmd->add_option("--seed", s_seed, "generator seed")->required();
    synth_cmd->add_option("--height", s_height, "image height")->capture_default_str();
    synth_cmd->add_option("--width", s_width, "image width")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand(
        "train",
        "train on a synthetic dataset (config defaults: learning_rate 9.2e-4, weight_decay 1e-4, "
        "batch_size 16, w_seg 0.9, w_cls 0.1, lambda_nt 0.5, beta 0.001, max_epochs 60, patience 10)");
    std::string t_config, t_train, t_val, t_out;
    uint64_t t_seed = 0;
    double t_alpha = -1.0;
    train_cmd->add_option("--config", t_config, "JSON config; defaults to the published protocol constants");
    train_cmd->add_option("--train", t_train, "training dataset directory")->required();
    train_cmd->add_option("--val", t_val, "validation dataset directory")->required();
    train_cmd->add_option("--out", t_out, "output directory")->required();
    train_cmd->add_option("--seed", t_seed, "run seed (overrides config)")->required();
    train_cmd->add_option("--alpha", t_alpha, "override consistency strength");

    // sweep
    auto* sweep_cmd = app.add_subcommand(
        "sweep",
        "alpha sweep with best-cls (val AUC) and best-seg (val Dice) selection; "
        "training defaults as in train");
    std::string w_config, w_alphas, w_train, w_val, w_out;
    uint64_t w_seed = 0;
    int w_jobs = 1;
    sweep_cmd->add_option("--config", w_config, "JSON config");
    sweep_cmd->add_option("--alphas", w_alphas, "comma-separated alpha grid")->required();
    sweep_cmd->add_option("--train", w_train, "training dataset directory")->required();
    sweep_cmd->add_option("--val", w_val, "validation dataset directory")->required();
    sweep_cmd->add_option("--out", w_out, "output directory")->required();
    sweep_cmd->add_option("--seed", w_seed, "run seed shared across the grid")->required();
    sweep_cmd->add_option("--jobs", w_jobs, "parallel training runs")->capture_default_str();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string e_checkpoint, e_data, e_out;
    eval_cmd->add_option("--checkpoint", e_checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--data", e_data, "dataset directory")->required();
    eval_cmd->add_option("--out", e_out, "directory for report.json and per_image.csv");

    // compare
    auto* compare_cmd = app.add_subcommand("compare", "paired Wilcoxon signed-rank on two per-image CSVs");
    std::string c_a, c_b, c_out;
    compare_cmd->add_option("a", c_a, "first per-image CSV")->required();
    compare_cmd->add_option("b", c_b, "second per-image CSV")->required();
    compare_cmd->add_option("--out", c_out, "directory for wilcoxon.json");

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
    int g_size = 16, g_probes = 0, g_instances = 1;
    double g_step = 1e-5;
    uint64_t g_seed = 0;
    grad_cmd->add_option("--size", g_size, "logit grid side length")->capture_default_str();
    grad_cmd->add_option("--probes", g_probes, "probed coordinates per check (0 = all)")->capture_default_str();
    grad_cmd->add_option("--step", g_step, "central-difference step")->capture_default_str();
    grad_cmd->add_option("--instances", g_instances, "number of seeded instances")->capture_default_str();
    grad_cmd->add_option("--seed", g_seed, "base seed")->required();
    std::string g_out;
    grad_cmd->add_option("--out", g_out, "directory for gradcheck.json and the run manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (features_cmd->parsed()) return cmd_features(f_mask, f_image, f_checkpoint, f_out);
        if (synth_cmd->parsed()) return cmd_synth(s_out, s_n, s_mix, s_domain, s_seed, s_height, s_width);
        if (train_cmd->parsed()) return cmd_train(t_config, t_train, t_val, t_out, t_seed, t_alpha);
        if (sweep_cmd->parsed()) return cmd_sweep(w_config, w_alphas, w_train, w_val, w_out, w_seed, w_jobs);
        if (eval_cmd->parsed()) return cmd_eval(e_checkpoint, e_data, e_out);
        if (compare_cmd->parsed()) return cmd_compare(c_a, c_b, c_out);
        if (grad_cmd->parsed()) return cmd_gradcheck(g_size, g_probes, g_step, g_instances, g_seed, g_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIoError;
    } catch (const InsufficientDataError& e) {
        std::cerr << "insufficient data: " << e.what() << "\n";
        return kDataError;
    } catch (const UndefinedMetricError& e) {
        std::cerr << "undefined metric: " << e.what() << "\n";
        return kDataError;
    } catch (const InvalidInputError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kOk;
}
