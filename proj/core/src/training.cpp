/// @file training.cpp
/// @brief Loss terms and the staged training loop.

#include "lagcast/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>

#include "lagcast/advection.hpp"
#include "lagcast/errors.hpp"
#include "lagcast/optimizer.hpp"
#include "lagcast/rng.hpp"
#include "lagcast/stack_io.hpp"

namespace lagcast::train {

using nlohmann::json;

void validate_loss_weights(const LossWeights& w) {
    if (!(w.beta > 0.0f && w.beta < 1.0f))
        throw ValidationError("LossWeights: beta must lie in (0, 1), got " + std::to_string(w.beta));
    if (!(w.gamma > 0.0f && w.gamma < 1.0f))
        throw ValidationError("LossWeights: gamma must lie in (0, 1), got " +
                              std::to_string(w.gamma));
}

ad::Var<float> criterion(const ad::Var<float>& pred, const ad::Var<float>& target) {
    if (!(pred.shape() == target.shape()))
        throw ShapeError("criterion: shape mismatch " + pred.shape().str() + " vs " +
                         target.shape().str());
    auto d = ad::sub(pred, target);
    return ad::mean_all(ad::mul(d, d));
}

ad::Var<float> loss_naive(const ad::Var<float>& motion, const ad::Var<float>& inputs,
                          const ad::Var<float>& target) {
    const int n = inputs.shape().c;
    auto last = ad::slice_channels(inputs, n - 1, n);
    return criterion(advect::extrapolate(last, motion, 1), target);
}

ad::Var<float> loss_mf(const ad::Var<float>& motion, const ad::Var<float>& inputs,
                       const ad::Var<float>& target, bool include_target_pair) {
    const int n = inputs.shape().c;
    if (n < 2) throw ShapeError("loss_mf: need at least 2 input frames");
    const int pairs = include_target_pair ? n : n - 1;

    // All one-step warps share the motion field, so a single multi-channel
    // warp covers every pair; the per-pair means then sum to
    // pairs * mean over the stacked channels.
    auto sources = include_target_pair ? inputs : ad::slice_channels(inputs, 0, n - 1);
    auto nexts = include_target_pair
                     ? ad::concat<float>({ad::slice_channels(inputs, 1, n), target})
                     : ad::slice_channels(inputs, 1, n);
    auto warped = advect::extrapolate(sources, motion, 1);
    auto d = ad::sub(warped, nexts);
    return ad::mul_scalar(ad::mean_all(ad::mul(d, d)), static_cast<float>(pairs));
}

ad::Var<float> stage_mf_loss(models::NowcastModel& model, const ad::Var<float>& inputs,
                             const ad::Var<float>& target, float beta, bool include_target_pair,
                             float* mf_term, float* pi_term) {
    auto motion = model.predict_motion(inputs);
    auto mf = loss_mf(motion, inputs, target, include_target_pair);
    auto pi = advect::divergence_penalty(motion, 1.0f);
    if (mf_term) *mf_term = mf.value().vec()[0];
    if (pi_term) *pi_term = pi.value().vec()[0];
    return ad::add(ad::mul_scalar(mf, 1.0f - beta), ad::mul_scalar(pi, beta));
}

ad::Var<float> stage_af_loss(models::NowcastModel& model, const ad::Var<float>& inputs,
                             const ad::Var<float>& target, float* af_term) {
    models::StepOptions opts;
    opts.detach_motion = true;
    auto out = model.step(inputs, opts);
    auto af = criterion(out.nowcast, target);
    if (af_term) *af_term = af.value().vec()[0];
    return af;
}

ad::Var<float> stage_joint_loss(models::NowcastModel& model, const ad::Var<float>& inputs,
                                const ad::Var<float>& target, float beta, float gamma,
                                bool include_target_pair, float* af_term, float* mf_term,
                                float* pi_term) {
    if (model.config().kind != models::ModelKind::kLagrangian)
        throw ValidationError("stage_joint_loss: only the learned-motion model has a joint stage");
    auto out = model.step(inputs);
    auto af = criterion(out.nowcast, target);
    auto mf = loss_mf(out.motion, inputs, target, include_target_pair);
    auto pi = advect::divergence_penalty(out.motion, 1.0f);
    if (af_term) *af_term = af.value().vec()[0];
    if (mf_term) *mf_term = mf.value().vec()[0];
    if (pi_term) *pi_term = pi.value().vec()[0];
    auto data_mix = ad::add(ad::mul_scalar(af, 1.0f - gamma), ad::mul_scalar(mf, gamma));
    return ad::add(ad::mul_scalar(data_mix, 1.0f - beta), ad::mul_scalar(pi, beta));
}

std::vector<TensorF> load_window_stack(const std::string& path, float norm_scale) {
    if (!std::filesystem::exists(path)) return {};
    RawStack raw = read_raw_stack(path);
    const auto& h = raw.header;
    if (h.window <= 0)
        throw IoError(path + ": stack does not carry training windows");
    if (h.channels != 1) throw IoError(path + ": expected single-channel frames");
    const int count = static_cast<int>(h.frames / h.window);
    std::vector<TensorF> windows;
    windows.reserve(static_cast<std::size_t>(count));
    const std::size_t frame_size = static_cast<std::size_t>(h.height) * h.width;
    for (int i = 0; i < count; ++i) {
        TensorF w(Shape{1, h.window, h.height, h.width});
        std::memcpy(w.data(), raw.payload.data() + static_cast<std::size_t>(i) * h.window * frame_size,
                    sizeof(float) * frame_size * static_cast<std::size_t>(h.window));
        windows.push_back(models::to_network_space(w, norm_scale));
    }
    return windows;
}

namespace {

struct Batch {
    ad::Var<float> inputs;
    ad::Var<float> target;
    int size = 0;
};

Batch make_batch(const std::vector<TensorF>& windows, const std::vector<std::size_t>& order,
                 std::size_t begin, std::size_t end, int input_frames) {
    const Shape ws = windows[order[begin]].shape();
    const int b = static_cast<int>(end - begin);
    TensorF x(Shape{b, input_frames, ws.h, ws.w});
    TensorF y(Shape{b, 1, ws.h, ws.w});
    const std::size_t frame_size = static_cast<std::size_t>(ws.h) * ws.w;
    for (int i = 0; i < b; ++i) {
        const TensorF& w = windows[order[begin + static_cast<std::size_t>(i)]];
        std::memcpy(x.plane(i, 0), w.plane(0, 0), sizeof(float) * frame_size *
                    static_cast<std::size_t>(input_frames));
        std::memcpy(y.plane(i, 0), w.plane(0, input_frames), sizeof(float) * frame_size);
    }
    Batch batch;
    batch.inputs = ad::Var<float>::constant(x);
    batch.target = ad::Var<float>::constant(y);
    batch.size = b;
    return batch;
}

struct TermAccumulator {
    double loss = 0, af = 0, mf = 0, pi = 0;
    long count = 0;
    bool has_af = false, has_mf = false, has_pi = false;

    void add(float l, int n, const float* af_t, const float* mf_t, const float* pi_t) {
        loss += static_cast<double>(l) * n;
        count += n;
        if (af_t) {
            af += static_cast<double>(*af_t) * n;
            has_af = true;
        }
        if (mf_t) {
            mf += static_cast<double>(*mf_t) * n;
            has_mf = true;
        }
        if (pi_t) {
            pi += static_cast<double>(*pi_t) * n;
            has_pi = true;
        }
    }
};

}  // namespace

TrainData load_train_data(const std::string& dir, float norm_scale) {
    TrainData data;
    data.train = load_window_stack(dir + "/train.rfs", norm_scale);
    data.validation = load_window_stack(dir + "/validation.rfs", norm_scale);
    data.test = load_window_stack(dir + "/test.rfs", norm_scale);
    if (data.train.empty())
        throw IoError("load_train_data: no training windows under '" + dir + "'");
    const Shape s = data.train.front().shape();
    data.window_frames = s.c;
    for (const auto& split : {&data.train, &data.validation, &data.test})
        for (const auto& w : *split)
            if (!(w.shape() == s))
                throw IoError("load_train_data: inconsistent window geometry under '" + dir + "'");
    return data;
}

std::vector<std::string> resolve_stage_plan(const models::NowcastModel& model,
                                            const TrainConfig& cfg) {
    std::vector<std::string> canonical;
    if (model.config().kind == models::ModelKind::kLagrangian)
        canonical = cfg.single_stage ? std::vector<std::string>{"joint"}
                                     : std::vector<std::string>{"mf", "af", "joint"};
    else
        canonical = {"af"};
    if (cfg.stages.empty()) return canonical;

    std::size_t pos = 0;
    for (const auto& s : cfg.stages) {
        while (pos < canonical.size() && canonical[pos] != s) ++pos;
        if (pos == canonical.size())
            throw ValidationError(
                "stage plan: '" + s + "' is not available here or breaks the required order (" +
                (canonical.size() == 3 ? "mf, af, joint" : canonical.front()) + ")");
        ++pos;
    }
    return cfg.stages;
}

TrainResult train(models::NowcastModel& model, const TrainData& data, const TrainConfig& cfg,
                  const std::string& out_dir) {
    validate_loss_weights(cfg.weights);
    if (cfg.batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (cfg.patience < 1) throw ValidationError("train: patience must be >= 1");
    if (data.train.empty()) throw ValidationError("train: no training windows");
    if (data.window_frames < data.input_frames + 1)
        throw ValidationError("train: windows must hold the inputs plus a target frame");
    if (model.config().window != data.input_frames)
        throw ValidationError("train: model window (" + std::to_string(model.config().window) +
                              ") does not match data input frames (" +
                              std::to_string(data.input_frames) + ")");

    const auto plan = resolve_stage_plan(model, cfg);
    std::filesystem::create_directories(out_dir);
    std::ofstream run_log(out_dir + "/run.ldjson", std::ios::trunc);
    if (!run_log) throw IoError("train: cannot open run log under '" + out_dir + "'");

    const bool is_lagrangian = model.config().kind == models::ModelKind::kLagrangian;
    Rng rng(cfg.seed);
    TrainResult result;

    auto batch_loss = [&](const std::string& stage, Batch& batch, TermAccumulator& acc) {
        float af_t = 0, mf_t = 0, pi_t = 0;
        ad::Var<float> loss;
        if (stage == "mf") {
            loss = stage_mf_loss(model, batch.inputs, batch.target, cfg.weights.beta,
                                 cfg.include_target_pair, &mf_t, &pi_t);
            acc.add(loss.value().vec()[0], batch.size, nullptr, &mf_t, &pi_t);
        } else if (stage == "af") {
            loss = stage_af_loss(model, batch.inputs, batch.target, &af_t);
            acc.add(loss.value().vec()[0], batch.size, &af_t, nullptr, nullptr);
        } else {
            loss = stage_joint_loss(model, batch.inputs, batch.target, cfg.weights.beta,
                                    cfg.weights.gamma, cfg.include_target_pair, &af_t, &mf_t,
                                    &pi_t);
            acc.add(loss.value().vec()[0], batch.size, &af_t, &mf_t, &pi_t);
        }
        return loss;
    };

    auto evaluate_split = [&](const std::string& stage, const std::vector<TensorF>& windows) {
        ad::NoGradGuard guard;
        TermAccumulator acc;
        std::vector<std::size_t> order(windows.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            Batch batch = make_batch(windows, order, begin, end, data.input_frames);
            batch_loss(stage, batch, acc);
        }
        return static_cast<float>(acc.loss / std::max<long>(1, acc.count));
    };

    for (std::size_t stage_idx = 0; stage_idx < plan.size(); ++stage_idx) {
        const std::string& stage = plan[stage_idx];
        const int epochs = stage == "mf"   ? cfg.epochs_mf
                           : stage == "af" ? cfg.epochs_af
                                           : cfg.epochs_joint;
        if (epochs < 1) throw ValidationError("train: stage '" + stage + "' needs >= 1 epochs");
        const float lr = stage == "joint" ? cfg.lr_joint : cfg.lr_early;

        AdamConfig<float> adam_cfg;
        adam_cfg.lr = lr;
        Adam<float> opt(model.params(), adam_cfg);

        float best_val = std::numeric_limits<float>::infinity();
        int bad_epochs = 0;
        StageMetrics metrics;
        metrics.stage = stage;

        for (int epoch = 1; epoch <= epochs; ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            Rng epoch_rng = rng.fork(stage_idx * 1000003ull + static_cast<std::uint64_t>(epoch));
            std::vector<std::size_t> order(data.train.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            epoch_rng.shuffle(order);

            TermAccumulator acc;
            for (std::size_t begin = 0; begin < order.size();
                 begin += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t end =
                    std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
                Batch batch = make_batch(data.train, order, begin, end, data.input_frames);
                model.params().zero_grad();
                ad::Var<float> loss = batch_loss(stage, batch, acc);
                const float value = loss.value().vec()[0];
                if (!std::isfinite(value))
                    throw TrainingError("train: non-finite loss in stage '" + stage + "', epoch " +
                                        std::to_string(epoch) + ", step " +
                                        std::to_string(result.total_steps));
                ad::backward(loss);
                if (stage == "af" && is_lagrangian) {
                    for (const auto& p : model.params().items()) {
                        if (!model.is_motion_param(p.name) || p.var.grad().numel() == 0) continue;
                        for (float g : p.var.grad().vec())
                            if (g != 0.0f)
                                throw TrainingError(
                                    "train: frozen motion parameter '" + p.name +
                                    "' received gradient during the source-sink stage");
                    }
                }
                opt.step();
                ++result.total_steps;
            }

            const float train_loss = static_cast<float>(acc.loss / std::max<long>(1, acc.count));
            const bool has_val = !data.validation.empty();
            const float val_loss = has_val ? evaluate_split(stage, data.validation) : train_loss;
            const auto wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                     std::chrono::steady_clock::now() - t0)
                                     .count();

            json line;
            line["stage"] = stage;
            line["epoch"] = epoch;
            line["step"] = result.total_steps;
            line["loss"] = train_loss;
            if (acc.has_af) line["loss_af"] = acc.af / std::max<long>(1, acc.count);
            if (acc.has_mf) line["loss_mf"] = acc.mf / std::max<long>(1, acc.count);
            if (acc.has_pi) line["loss_pi"] = acc.pi / std::max<long>(1, acc.count);
            if (has_val)
                line["val_loss"] = val_loss;
            else
                line["val_loss"] = nullptr;
            line["wall_ms"] = wall_ms;
            run_log << line.dump() << "\n";
            run_log.flush();

            metrics.epochs_run = epoch;
            metrics.final_train_loss = train_loss;
            metrics.final_val_loss = val_loss;

            if (has_val) {
                if (val_loss < best_val) {
                    best_val = val_loss;
                    bad_epochs = 0;
                } else if (++bad_epochs >= cfg.patience) {
                    break;
                }
            }
        }

        CheckpointData ckpt = model.to_checkpoint();
        ckpt.has_optimizer = true;
        ckpt.optimizer_step = opt.step_count();
        for (std::size_t i = 0; i < model.params().size(); ++i) {
            ckpt.adam_m.push_back(opt.moment1(i));
            ckpt.adam_v.push_back(opt.moment2(i));
        }
        metrics.checkpoint_path = out_dir + "/stage_" + stage + ".ckpt";
        save_checkpoint(metrics.checkpoint_path, ckpt);
        result.stages.push_back(metrics);
    }

    result.final_checkpoint = out_dir + "/model.ckpt";
    save_checkpoint(result.final_checkpoint, model.to_checkpoint());
    return result;
}

}  // namespace lagcast::train
