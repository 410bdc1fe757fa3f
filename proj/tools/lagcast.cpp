/**
 * @file lagcast.cpp
 * @brief Command-line entry point: data generation, training, nowcasting,
 *        evaluation, motion comparison, and gradient checks.
 *
 * Every file-producing run writes a `run_manifest.json` beside its outputs
 * recording the resolved configuration (with per-key provenance: flag, file,
 * or default), an FNV-1a hash of that configuration, the seed, and format
 * versions. Manifests carry no timestamps, so identical runs produce
 * byte-identical manifests and outputs.
 */
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lagcast/checkpoint.hpp"
#include "lagcast/errors.hpp"
#include "lagcast/gradcheck.hpp"
#include "lagcast/models.hpp"
#include "lagcast/stack_io.hpp"
#include "lagcast/synthetic.hpp"
#include "lagcast/training.hpp"
#include "lagcast/units.hpp"
#include "lagcast/verification.hpp"

#ifndef LAGCAST_VERSION_STRING
#define LAGCAST_VERSION_STRING "0.0.0"
#endif

namespace {

using nlohmann::json;
using namespace lagcast;

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Resolved configuration of one run, with the provenance of every key.
struct ConfigLog {
    json values = json::object();
    json sources = json::object();

    template <typename T>
    void set(const std::string& key, const T& value, const char* source) {
        values[key] = value;
        sources[key] = source;
    }
};

/// Flag > config file > built-in default. `flag_count` is the number of times
/// the CLI flag was given (0 when the knob has no flag).
template <typename T>
T resolve(ConfigLog& log, const std::string& key, const T& builtin, const json& file_cfg,
          std::size_t flag_count, const T& flag_value) {
    if (flag_count > 0) {
        log.set(key, flag_value, "flag");
        return flag_value;
    }
    if (file_cfg.contains(key)) {
        T v{};
        try {
            v = file_cfg.at(key).get<T>();
        } catch (const json::exception&) {
            throw ValidationError("config: key '" + key + "' has the wrong type");
        }
        log.set(key, v, "file");
        return v;
    }
    log.set(key, builtin, "default");
    return builtin;
}

void write_run_manifest(const std::filesystem::path& path, const std::string& command,
                        const ConfigLog& log, std::uint64_t seed, const json& inputs) {
    json manifest;
    manifest["command"] = command;
    manifest["config"] = log.values;
    // The hash covers the semantic configuration only; input paths are
    // recorded for provenance but do not pin content.
    manifest["config_hash"] = hex64(fnv1a64(log.values.dump()));
    manifest["config_sources"] = log.sources;
    manifest["inputs"] = inputs;
    manifest["seed"] = seed;
    manifest["versions"] = {{"checkpoint_format", "LNCKPT01"},
                            {"lagcast", LAGCAST_VERSION_STRING},
                            {"stack_format", "RFSTACK1"}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
    out << manifest.dump(2) << "\n";
}

json load_config_file(const std::string& path, const std::vector<std::string>& allowed) {
    if (path.empty()) return json::object();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("config file '" + path + "' not found");
    json cfg;
    try {
        cfg = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("config file '" + path + "': " + e.what());
    }
    if (!cfg.is_object()) throw ValidationError("config file '" + path + "' must hold a JSON object");
    for (const auto& [key, value] : cfg.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ValidationError("config file '" + path + "': unknown key '" + key + "'");
    }
    return cfg;
}

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> parts;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        const std::size_t end = text.find(',', begin);
        if (end == std::string::npos) {
            parts.push_back(text.substr(begin));
            break;
        }
        parts.push_back(text.substr(begin, end - begin));
        begin = end + 1;
    }
    return parts;
}

models::NowcastModel load_model(const std::string& path) {
    return models::NowcastModel::from_checkpoint(load_checkpoint(path));
}

/// Test windows keyed by the normalization scale they were transformed with;
/// models with different scales must not share tensors.
class WindowCache {
public:
    explicit WindowCache(std::string path) : path_(std::move(path)) {}

    const std::vector<TensorF>& at_scale(float norm_scale) {
        auto it = cache_.find(norm_scale);
        if (it == cache_.end()) {
            auto windows = train::load_window_stack(path_, norm_scale);
            if (windows.empty())
                throw ValidationError("no evaluation windows in '" + path_ + "'");
            it = cache_.emplace(norm_scale, std::move(windows)).first;
        }
        return it->second;
    }

private:
    std::string path_;
    std::map<float, std::vector<TensorF>> cache_;
};

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& preset, const std::string& out_dir, std::uint64_t seed,
                 std::size_t seed_count) {
    ConfigLog log;
    json file_cfg = json::object();
    const std::string use_preset = resolve<std::string>(log, "preset", preset, file_cfg, 1, preset);
    const std::uint64_t use_seed = resolve<std::uint64_t>(log, "seed", 1, file_cfg, seed_count, seed);

    const auto summary = synth::write_corpus(use_preset, out_dir, use_seed);
    write_run_manifest(std::filesystem::path(out_dir) / "run_manifest.json", "gen-data", log,
                       use_seed, json{{"out", out_dir}});
    std::printf("gen-data: preset %s seed %llu -> %s (%d frames; train %zu, validation %zu, test %zu)\n",
                use_preset.c_str(), static_cast<unsigned long long>(use_seed), out_dir.c_str(),
                summary.spec.frames, summary.split.train.size(), summary.split.validation.size(),
                summary.split.test.size());
    return 0;
}

struct TrainFlags {
    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    std::string stage = "all";
    std::string model_kind = "lagrangian";
    float beta = 0.0f;
    float gamma = 0.0f;
    std::uint64_t seed = 1;
    bool single_stage = false;
};

int cmd_train(const TrainFlags& flags, const CLI::App* cmd) {
    static const std::vector<std::string> kKeys = {
        "model_kind", "window", "depth", "base_channels", "leaky_slope", "motion_cap",
        "norm_scale", "beta", "gamma", "batch_size", "patience", "seed", "lr_early",
        "lr_joint", "epochs_mf", "epochs_af", "epochs_joint", "include_target_pair",
        "single_stage", "stage"};
    const json file_cfg = load_config_file(flags.config_path, kKeys);
    ConfigLog log;
    auto count = [&](const char* name) { return cmd->count(name); };

    models::ModelConfig mcfg;
    mcfg.kind = models::parse_model_kind(resolve<std::string>(
        log, "model_kind", "lagrangian", file_cfg, count("--model-kind"), flags.model_kind));
    mcfg.window = resolve<int>(log, "window", mcfg.window, file_cfg, 0, 0);
    mcfg.depth = resolve<int>(log, "depth", mcfg.depth, file_cfg, 0, 0);
    mcfg.base_channels = resolve<int>(log, "base_channels", mcfg.base_channels, file_cfg, 0, 0);
    mcfg.leaky_slope = resolve<float>(log, "leaky_slope", mcfg.leaky_slope, file_cfg, 0, 0);
    mcfg.motion_cap = resolve<float>(log, "motion_cap", mcfg.motion_cap, file_cfg, 0, 0);
    mcfg.norm_scale = resolve<float>(log, "norm_scale", mcfg.norm_scale, file_cfg, 0, 0);

    train::TrainConfig tcfg;
    tcfg.weights.beta =
        resolve<float>(log, "beta", tcfg.weights.beta, file_cfg, count("--beta"), flags.beta);
    tcfg.weights.gamma =
        resolve<float>(log, "gamma", tcfg.weights.gamma, file_cfg, count("--gamma"), flags.gamma);
    tcfg.batch_size = resolve<int>(log, "batch_size", tcfg.batch_size, file_cfg, 0, 0);
    tcfg.patience = resolve<int>(log, "patience", tcfg.patience, file_cfg, 0, 0);
    tcfg.seed = resolve<std::uint64_t>(log, "seed", tcfg.seed, file_cfg, count("--seed"), flags.seed);
    tcfg.lr_early = resolve<float>(log, "lr_early", tcfg.lr_early, file_cfg, 0, 0);
    tcfg.lr_joint = resolve<float>(log, "lr_joint", tcfg.lr_joint, file_cfg, 0, 0);
    tcfg.epochs_mf = resolve<int>(log, "epochs_mf", tcfg.epochs_mf, file_cfg, 0, 0);
    tcfg.epochs_af = resolve<int>(log, "epochs_af", tcfg.epochs_af, file_cfg, 0, 0);
    tcfg.epochs_joint = resolve<int>(log, "epochs_joint", tcfg.epochs_joint, file_cfg, 0, 0);
    tcfg.include_target_pair = resolve<bool>(log, "include_target_pair", tcfg.include_target_pair,
                                             file_cfg, 0, false);
    tcfg.single_stage = resolve<bool>(log, "single_stage", tcfg.single_stage, file_cfg,
                                      count("--single-stage"), flags.single_stage);

    const std::string stage =
        resolve<std::string>(log, "stage", "all", file_cfg, count("--stage"), flags.stage);
    if (stage == "all") {
        tcfg.stages.clear();
    } else if (stage == "mf" || stage == "af" || stage == "joint") {
        tcfg.stages = {stage};
    } else {
        throw ValidationError("train: --stage must be mf, af, joint, or all (got '" + stage + "')");
    }

    models::NowcastModel model(mcfg, tcfg.seed);
    const train::TrainData data = train::load_train_data(flags.data_dir, mcfg.norm_scale);
    const train::TrainResult result = train::train(model, data, tcfg, flags.out_dir);

    write_run_manifest(std::filesystem::path(flags.out_dir) / "run_manifest.json", "train", log,
                       tcfg.seed, json{{"config", flags.config_path}, {"data", flags.data_dir},
                                       {"out", flags.out_dir}});
    for (const auto& s : result.stages)
        std::printf("train: stage %-5s %2d epochs  train %.6g  val %.6g\n", s.stage.c_str(),
                    s.epochs_run, s.final_train_loss, s.final_val_loss);
    std::printf("train: %d steps -> %s\n", result.total_steps, result.final_checkpoint.c_str());
    return 0;
}

int cmd_nowcast(const std::string& model_path, const std::string& input_path, int leads,
                const std::string& out_path) {
    if (leads < 1) throw ValidationError("nowcast: leads must be >= 1");
    const models::NowcastModel model = load_model(model_path);
    const int window = model.config().window;

    RawStack raw = read_raw_stack(input_path);
    const StackHeader& h = raw.header;
    if (h.window > 0)
        throw ValidationError("nowcast: input is a training window stack; pass a plain sequence");
    if (h.channels != 1) throw ValidationError("nowcast: input must be single-channel");
    if (h.units == "dBZ") {
        for (float& v : raw.payload) v = units::dbz_to_rain_value(v);
    } else if (h.units != "mm/h") {
        throw ValidationError("nowcast: input units must be mm/h or dBZ, got '" + h.units + "'");
    }
    if (h.frames < window)
        throw ValidationError("nowcast: input has " + std::to_string(h.frames) +
                              " frames, the model needs " + std::to_string(window));

    const std::size_t frame_size = static_cast<std::size_t>(h.height) * h.width;
    TensorF inputs(Shape{1, window, h.height, h.width});
    std::memcpy(inputs.data(),
                raw.payload.data() + static_cast<std::size_t>(h.frames - window) * frame_size,
                sizeof(float) * frame_size * static_cast<std::size_t>(window));

    ad::NoGradGuard guard;
    const auto steps = model.rollout(
        ad::Var<float>::constant(models::to_network_space(inputs, model.config().norm_scale)),
        leads);

    RawStack out;
    out.header = h;
    out.header.frames = leads;
    out.header.units = "mm/h";
    out.header.t0_index = h.t0_index + h.frames;  // first forecast frame
    out.payload.resize(static_cast<std::size_t>(leads) * frame_size);
    for (int k = 0; k < leads; ++k) {
        const TensorF rain = models::to_rain_space(steps[static_cast<std::size_t>(k)].nowcast.value(),
                                                   model.config().norm_scale);
        std::memcpy(out.payload.data() + static_cast<std::size_t>(k) * frame_size, rain.data(),
                    sizeof(float) * frame_size);
    }
    write_raw_stack(out_path, out);

    ConfigLog log;
    log.set("leads", leads, "flag");
    log.set("model_kind", models::to_string(model.config().kind), "file");
    log.set("window", window, "file");
    log.set("norm_scale", model.config().norm_scale, "file");
    write_run_manifest(out_path + ".manifest.json", "nowcast", log, 0,
                       json{{"input", input_path}, {"model", model_path}, {"out", out_path}});
    std::printf("nowcast: %d leads of %dx%d -> %s\n", leads, h.height, h.width, out_path.c_str());
    return 0;
}

int cmd_evaluate(const std::vector<std::string>& model_paths, const std::string& data_dir,
                 const std::string& out_dir, int leads) {
    if (leads < 1) throw ValidationError("evaluate: leads must be >= 1");
    const std::string test_path = data_dir + "/test.rfs";
    const StackHeader header = read_raw_stack(test_path).header;
    WindowCache windows(test_path);

    verify::EvaluateOptions opts;
    opts.leads = leads;
    opts.step_minutes = header.step_minutes;

    std::vector<verify::EvaluationReport> reports;
    std::vector<std::string> names;
    for (const auto& path : model_paths) {
        const models::NowcastModel model = load_model(path);
        std::string name = std::filesystem::path(path).stem().string();
        for (int suffix = 2; std::find(names.begin(), names.end(), name) != names.end(); ++suffix)
            name = std::filesystem::path(path).stem().string() + "-" + std::to_string(suffix);
        names.push_back(name);
        reports.push_back(
            verify::evaluate_model(model, name, windows.at_scale(model.config().norm_scale), opts));
    }

    std::filesystem::create_directories(out_dir);
    const std::string csv_path = out_dir + "/scores.csv";
    verify::write_scores_csv(csv_path, reports);

    ConfigLog log;
    log.set("leads", leads, reports.empty() ? "default" : "flag");
    log.set("models", names, "flag");
    log.set("step_minutes", header.step_minutes, "file");
    write_run_manifest(std::filesystem::path(out_dir) / "run_manifest.json", "evaluate", log, 0,
                       json{{"data", data_dir}, {"models", model_paths}, {"out", out_dir}});
    std::printf("evaluate: %zu model(s) over %lld test windows -> %s\n", reports.size(),
                static_cast<long long>(header.window > 0 ? header.frames / header.window : 0),
                csv_path.c_str());
    return 0;
}

struct CompareMotionFlags {
    std::string sources = "lk,mf-reg,mf-noreg";
    std::string data_dir;
    std::string out_dir;
    std::string reg_path;
    std::string noreg_path;
    float norm_scale = 1.0f;
    int input_frames = 6;
    int leads = 6;
};

int cmd_compare_motion(const CompareMotionFlags& flags) {
    if (flags.leads < 1) throw ValidationError("compare-motion: leads must be >= 1");
    const std::vector<std::string> sources = split_csv(flags.sources);
    if (sources.empty()) throw ValidationError("compare-motion: --sources must not be empty");
    WindowCache windows(flags.data_dir + "/test.rfs");

    std::vector<verify::MotionFitnessReport> reports;
    for (const auto& source : sources) {
        if (source == "lk") {
            reports.push_back(verify::motion_fitness_lk(flow::PyramidConfig{}, source,
                                                        windows.at_scale(flags.norm_scale),
                                                        flags.norm_scale, flags.input_frames,
                                                        flags.leads));
        } else if (source == "mf-reg" || source == "mf-noreg") {
            const std::string& path = source == "mf-reg" ? flags.reg_path : flags.noreg_path;
            if (path.empty())
                throw ValidationError("compare-motion: source '" + source + "' needs --" +
                                      (source == "mf-reg" ? std::string("reg") : std::string("noreg")) +
                                      " CKPT");
            const models::NowcastModel model = load_model(path);
            reports.push_back(verify::motion_fitness(
                model, source, windows.at_scale(model.config().norm_scale), flags.leads));
        } else {
            throw ValidationError("compare-motion: unknown source '" + source +
                                  "' (expected lk, mf-reg, or mf-noreg)");
        }
    }

    std::filesystem::create_directories(flags.out_dir);
    const std::string csv_path = flags.out_dir + "/motion.csv";
    verify::write_motion_csv(csv_path, reports);

    ConfigLog log;
    log.set("input_frames", flags.input_frames, "flag");
    log.set("leads", flags.leads, "flag");
    log.set("norm_scale", flags.norm_scale, "flag");
    log.set("sources", sources, "flag");
    write_run_manifest(std::filesystem::path(flags.out_dir) / "run_manifest.json", "compare-motion",
                       log, 0,
                       json{{"data", flags.data_dir}, {"noreg", flags.noreg_path},
                            {"out", flags.out_dir}, {"reg", flags.reg_path}});
    std::printf("compare-motion: %zu source(s) -> %s\n", reports.size(), csv_path.c_str());
    return 0;
}

int cmd_gradcheck() {
    const auto results = lagcast::gradcheck::run_suite();
    bool all_ok = true;
    for (const auto& r : results) {
        std::printf("%-24s %s  (max rel err %.3e, tol %.0e, %d instances)\n", r.name.c_str(),
                    r.pass() ? "pass" : "FAIL", r.max_rel_err, r.tolerance, r.instances);
        all_ok = all_ok && r.pass();
    }
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lagrangian precipitation nowcasting engine"};
    app.require_subcommand(1);

    // gen-data
    std::string gen_preset, gen_out;
    std::uint64_t gen_seed = 1;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic storm corpus");
    gen->add_option("--preset", gen_preset, "Corpus preset: translate, growdecay, or mixed")
        ->required();
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--seed", gen_seed, "Generator seed");

    // train
    TrainFlags tf;
    auto* trn = app.add_subcommand("train", "Train a nowcasting model on a corpus");
    trn->add_option("--config", tf.config_path, "JSON config file");
    trn->add_option("--data", tf.data_dir, "Corpus directory (train/validation/test stacks)")
        ->required();
    trn->add_option("--out", tf.out_dir, "Output directory for checkpoints and logs")->required();
    trn->add_option("--stage", tf.stage, "Stage to run: mf, af, joint, or all");
    trn->add_option("--model-kind", tf.model_kind, "lagrangian, lagrangian-lk, or eulerian");
    trn->add_option("--beta", tf.beta, "Physics-regularization weight in (0, 1)");
    trn->add_option("--gamma", tf.gamma, "Motion-loss share of the joint data term, in (0, 1)");
    trn->add_option("--seed", tf.seed, "Training seed");
    trn->add_flag("--single-stage", tf.single_stage, "Joint-only training (ablation)");

    // nowcast
    std::string nc_model, nc_input, nc_out;
    int nc_leads = 0;
    auto* now = app.add_subcommand("nowcast", "Roll a trained model forward from a frame stack");
    now->add_option("--model", nc_model, "Model checkpoint")->required();
    now->add_option("--input", nc_input, "Input frame stack (.rfs)")->required();
    now->add_option("--leads", nc_leads, "Number of forecast steps (>= 1)")->required();
    now->add_option("--out", nc_out, "Output forecast stack (.rfs)")->required();

    // evaluate
    std::vector<std::string> ev_models;
    std::string ev_data, ev_out;
    int ev_leads = 6;
    auto* ev = app.add_subcommand("evaluate", "Score models on a corpus test split");
    ev->add_option("--models", ev_models, "Model checkpoints")->required();
    ev->add_option("--data", ev_data, "Corpus directory")->required();
    ev->add_option("--out", ev_out, "Output directory for scores.csv")->required();
    ev->add_option("--leads", ev_leads, "Leads to score");

    // compare-motion
    CompareMotionFlags cm;
    auto* cmp = app.add_subcommand("compare-motion",
                                   "Divergence and extrapolation error of motion sources by lead");
    cmp->add_option("--sources", cm.sources, "Comma list of lk, mf-reg, mf-noreg");
    cmp->add_option("--data", cm.data_dir, "Corpus directory")->required();
    cmp->add_option("--out", cm.out_dir, "Output directory for motion.csv")->required();
    cmp->add_option("--reg", cm.reg_path, "Checkpoint for the regularized motion model");
    cmp->add_option("--noreg", cm.noreg_path, "Checkpoint for the unregularized motion model");
    cmp->add_option("--norm-scale", cm.norm_scale, "Network-space scale for the lk source");
    cmp->add_option("--input-frames", cm.input_frames, "Frames the lk source diagnoses flow from");
    cmp->add_option("--leads", cm.leads, "Leads to score");

    app.add_subcommand("gradcheck", "Run the 64-bit finite-difference gradient suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (app.got_subcommand("gen-data"))
            return cmd_gen_data(gen_preset, gen_out, gen_seed, gen->count("--seed"));
        if (app.got_subcommand("train")) return cmd_train(tf, trn);
        if (app.got_subcommand("nowcast")) return cmd_nowcast(nc_model, nc_input, nc_leads, nc_out);
        if (app.got_subcommand("evaluate")) return cmd_evaluate(ev_models, ev_data, ev_out, ev_leads);
        if (app.got_subcommand("compare-motion")) return cmd_compare_motion(cm);
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
