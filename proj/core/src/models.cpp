/// @file models.cpp
/// @brief Model assemblies and their checkpoint round trip.

#include "lagcast/models.hpp"

#include <cmath>
#include <json.hpp>

#include "lagcast/advection.hpp"
#include "lagcast/errors.hpp"

namespace lagcast::models {

using nlohmann::json;

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::kLagrangian: return "lagrangian";
        case ModelKind::kLagrangianLk: return "lagrangian-lk";
        case ModelKind::kEulerian: return "eulerian";
    }
    throw ValidationError("to_string: unknown model kind");
}

ModelKind parse_model_kind(const std::string& name) {
    if (name == "lagrangian") return ModelKind::kLagrangian;
    if (name == "lagrangian-lk") return ModelKind::kLagrangianLk;
    if (name == "eulerian") return ModelKind::kEulerian;
    throw ValidationError("unknown model kind: '" + name +
                          "' (expected lagrangian, lagrangian-lk, or eulerian)");
}

void validate_model_config(const ModelConfig& cfg) {
    if (cfg.window < 2) throw ValidationError("ModelConfig: window must be >= 2");
    if (!(cfg.motion_cap > 0.0f)) throw ValidationError("ModelConfig: motion_cap must be positive");
    if (!(cfg.norm_scale > 0.0f)) throw ValidationError("ModelConfig: norm_scale must be positive");
    nets::UNetConfig probe;
    probe.depth = cfg.depth;
    probe.base_channels = cfg.base_channels;
    probe.leaky_slope = cfg.leaky_slope;
    probe.in_channels = cfg.window;
    probe.out_channels = 1;
    nets::validate_unet_config(probe);
}

TensorF to_network_space(const TensorF& rain, float norm_scale) {
    TensorF out(rain.shape());
    for (std::size_t i = 0; i < rain.vec().size(); ++i)
        out.vec()[i] = std::log1p(std::max(rain.vec()[i], 0.0f)) * norm_scale;
    return out;
}

TensorF to_rain_space(const TensorF& transformed, float norm_scale) {
    TensorF out(transformed.shape());
    for (std::size_t i = 0; i < transformed.vec().size(); ++i)
        out.vec()[i] = std::expm1(std::max(transformed.vec()[i], 0.0f) / norm_scale);
    return out;
}

namespace {

nets::UNetConfig unet_config(const ModelConfig& cfg, int in_channels, int out_channels) {
    nets::UNetConfig u;
    u.in_channels = in_channels;
    u.out_channels = out_channels;
    u.depth = cfg.depth;
    u.base_channels = cfg.base_channels;
    u.leaky_slope = cfg.leaky_slope;
    return u;
}

}  // namespace

NowcastModel::NowcastModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    validate_model_config(cfg);
    Rng rng(seed);
    switch (cfg.kind) {
        case ModelKind::kLagrangian:
            mf_net_.emplace(unet_config(cfg, cfg.window, 2), store_, "mf.", rng);
            af_net_.emplace(unet_config(cfg, cfg.window - 1, 1), store_, "af.", rng);
            break;
        case ModelKind::kLagrangianLk:
            af_net_.emplace(unet_config(cfg, cfg.window - 1, 1), store_, "af.", rng);
            break;
        case ModelKind::kEulerian:
            direct_net_.emplace(unet_config(cfg, cfg.window, 1), store_, "net.", rng);
            break;
    }
}

bool NowcastModel::is_motion_param(const std::string& name) const {
    return name.rfind("mf.", 0) == 0;
}

ad::Var<float> NowcastModel::predict_motion(const ad::Var<float>& frames) const {
    if (!mf_net_)
        throw ValidationError("predict_motion: model '" + to_string(cfg_.kind) +
                              "' has no learned motion net");
    if (frames.shape().c != cfg_.window)
        throw ShapeError("predict_motion: expected " + std::to_string(cfg_.window) +
                         " frames, got " + std::to_string(frames.shape().c));
    const float cap = cfg_.motion_cap;
    auto raw = mf_net_->forward(frames);
    return ad::mul_scalar(ad::tanh(ad::mul_scalar(raw, 1.0f / cap)), cap);
}

StepOutput NowcastModel::step(const ad::Var<float>& frames, const StepOptions& opts) const {
    const Shape s = frames.shape();
    if (s.c != cfg_.window)
        throw ShapeError("step: expected " + std::to_string(cfg_.window) + " frames, got " +
                         std::to_string(s.c));

    StepOutput out;
    if (cfg_.kind == ModelKind::kEulerian) {
        out.nowcast = ad::clamp_min(direct_net_->forward(frames), 0.0f);
        return out;
    }

    // Motion source: learned, Lucas-Kanade, or forced to zero.
    if (opts.zero_motion) {
        out.motion = ad::Var<float>::constant(TensorF(Shape{s.b, 2, s.h, s.w}));
    } else if (cfg_.kind == ModelKind::kLagrangian) {
        out.motion = predict_motion(frames);
        if (opts.detach_motion) out.motion = ad::detach(out.motion);
    } else {
        TensorF motion(Shape{s.b, 2, s.h, s.w});
        const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
        for (int b = 0; b < s.b; ++b) {
            std::vector<std::vector<float>> planes;
            planes.reserve(static_cast<std::size_t>(s.c));
            for (int c = 0; c < s.c; ++c) {
                const float* p = frames.value().plane(b, c);
                planes.emplace_back(p, p + plane);
            }
            auto lk = flow::lucas_kanade_flow_planes(planes, s.h, s.w, lk_cfg_);
            std::copy(lk.motion.plane(0, 0), lk.motion.plane(0, 0) + plane, motion.plane(b, 0));
            std::copy(lk.motion.plane(0, 1), lk.motion.plane(0, 1) + plane, motion.plane(b, 1));
        }
        out.motion = ad::Var<float>::constant(motion);
    }

    // Common-reference transform at t+1: frame i is warped (window - i) steps,
    // so the most recent frame is carried exactly one step forward.
    auto lag = advect::to_lagrangian(frames, out.motion, cfg_.window + 1);
    auto diffs = advect::temporal_difference(lag);

    if (opts.zero_source) {
        out.source = ad::Var<float>::constant(TensorF(Shape{s.b, 1, s.h, s.w}));
    } else {
        out.source = af_net_->forward(diffs);
    }

    auto warped_last = ad::slice_channels(lag, cfg_.window - 1, cfg_.window);
    out.nowcast = ad::clamp_min(ad::add(warped_last, out.source), 0.0f);
    return out;
}

std::vector<StepOutput> NowcastModel::rollout(const ad::Var<float>& frames, int leads,
                                              const StepOptions& opts) const {
    if (leads < 1)
        throw ValidationError("rollout: leads must be >= 1, got " + std::to_string(leads));
    std::vector<StepOutput> outputs;
    outputs.reserve(static_cast<std::size_t>(leads));
    ad::Var<float> window = frames;
    for (int k = 0; k < leads; ++k) {
        StepOutput step_out = step(window, opts);
        outputs.push_back(step_out);
        if (k + 1 < leads)
            window = ad::concat<float>(
                {ad::slice_channels(window, 1, cfg_.window), step_out.nowcast});
    }
    return outputs;
}

CheckpointData NowcastModel::to_checkpoint() const {
    CheckpointData data;
    data.model_kind = to_string(cfg_.kind);
    json cfg;
    cfg["kind"] = to_string(cfg_.kind);
    cfg["window"] = cfg_.window;
    cfg["depth"] = cfg_.depth;
    cfg["base_channels"] = cfg_.base_channels;
    cfg["leaky_slope"] = cfg_.leaky_slope;
    cfg["motion_cap"] = cfg_.motion_cap;
    cfg["norm_scale"] = cfg_.norm_scale;
    data.config_json = cfg.dump();
    for (const auto& p : store_.items()) data.params.emplace_back(p.name, p.var.value());
    return data;
}

NowcastModel NowcastModel::from_checkpoint(const CheckpointData& data) {
    json cfg = json::parse(data.config_json, nullptr, false);
    if (cfg.is_discarded() || !cfg.is_object())
        throw IoError("checkpoint: malformed model config");
    ModelConfig mc;
    try {
        mc.kind = parse_model_kind(cfg.at("kind").get<std::string>());
        mc.window = cfg.at("window").get<int>();
        mc.depth = cfg.at("depth").get<int>();
        mc.base_channels = cfg.at("base_channels").get<int>();
        mc.leaky_slope = cfg.at("leaky_slope").get<float>();
        mc.motion_cap = cfg.at("motion_cap").get<float>();
        mc.norm_scale = cfg.at("norm_scale").get<float>();
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint: incomplete model config: ") + e.what());
    }
    if (to_string(mc.kind) != data.model_kind)
        throw IoError("checkpoint: model kind mismatch between header and config");

    NowcastModel model(mc, /*seed=*/0);
    const auto& items = model.store_.items();
    if (items.size() != data.params.size())
        throw IoError("checkpoint: expected " + std::to_string(items.size()) +
                      " parameters, found " + std::to_string(data.params.size()));
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].name != data.params[i].first)
            throw IoError("checkpoint: parameter name mismatch at index " + std::to_string(i) +
                          ": expected '" + items[i].name + "', found '" + data.params[i].first +
                          "'");
        ad::Var<float> var = items[i].var;
        if (!(var.shape() == data.params[i].second.shape()))
            throw IoError("checkpoint: shape mismatch for parameter '" + items[i].name + "'");
        var.value() = data.params[i].second;
    }
    return model;
}

}  // namespace lagcast::models
