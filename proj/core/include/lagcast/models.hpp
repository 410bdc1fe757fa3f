/**
 * @file models.hpp
 * @brief The three nowcasting model assemblies: Lagrangian double U-Net
 *        (learned motion + learned source-sink), its Lucas-Kanade-motion
 *        variant, and the direct Eulerian U-Net baseline.
 */
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lagcast/autodiff.hpp"
#include "lagcast/checkpoint.hpp"
#include "lagcast/optical_flow.hpp"
#include "lagcast/params.hpp"
#include "lagcast/unet.hpp"

namespace lagcast::models {

enum class ModelKind {
    kLagrangian,    ///< learned motion net + learned source-sink net
    kLagrangianLk,  ///< Lucas-Kanade motion + learned source-sink net
    kEulerian,      ///< single U-Net mapping the input window to the next frame
};

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ModelConfig {
    ModelKind kind = ModelKind::kLagrangian;
    int window = 6;           ///< input frames per step
    int depth = 3;            ///< U-Net down/up stages
    int base_channels = 16;   ///< U-Net width
    float leaky_slope = 0.1f;
    float motion_cap = 10.0f; ///< max |component| of predicted motion, px/step
    float norm_scale = 1.0f;  ///< network space is norm_scale * log(1 + R)
};

void validate_model_config(const ModelConfig& cfg);

/// Forward/backward transforms between rain rate (mm/h) and network space.
TensorF to_network_space(const TensorF& rain, float norm_scale);
TensorF to_rain_space(const TensorF& transformed, float norm_scale);

struct StepOptions {
    bool zero_motion = false;   ///< force u = 0 (Eulerian persistence path)
    bool zero_source = false;   ///< force S = 0 (Lagrangian persistence path)
    bool detach_motion = false; ///< block gradients into the motion net
};

/// One forecasting step. All tensors live in network space.
struct StepOutput {
    ad::Var<float> nowcast; ///< (B, 1, H, W), non-negative
    ad::Var<float> motion;  ///< (B, 2, H, W); undefined for the Eulerian model
    ad::Var<float> source;  ///< (B, 1, H, W); undefined for the Eulerian model
};

class NowcastModel {
public:
    NowcastModel(const ModelConfig& cfg, std::uint64_t seed);

    NowcastModel(NowcastModel&&) = default;
    NowcastModel& operator=(NowcastModel&&) = default;
    NowcastModel(const NowcastModel&) = delete;
    NowcastModel& operator=(const NowcastModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParamStore<float>& params() { return store_; }
    const ParamStore<float>& params() const { return store_; }

    /// Motion head: capped componentwise to (-motion_cap, motion_cap) via a
    /// scaled tanh. Only valid for the learned-motion model.
    ad::Var<float> predict_motion(const ad::Var<float>& frames) const;

    /// One step: motion -> common-reference transform at t+1 -> temporal
    /// differences -> source-sink net -> warped last frame plus source,
    /// clamped non-negative. The source net sees only differenced fields.
    StepOutput step(const ad::Var<float>& frames, const StepOptions& opts = {}) const;

    /// k nested steps, recomputing motion each step; the oldest frame falls
    /// out of the window and the newest nowcast enters it.
    std::vector<StepOutput> rollout(const ad::Var<float>& frames, int leads,
                                    const StepOptions& opts = {}) const;

    CheckpointData to_checkpoint() const;
    static NowcastModel from_checkpoint(const CheckpointData& data);

    /// Names of parameters belonging to the motion net (empty unless learned
    /// motion is present).
    bool is_motion_param(const std::string& name) const;

    const flow::PyramidConfig& lk_config() const { return lk_cfg_; }
    flow::PyramidConfig& lk_config() { return lk_cfg_; }

private:
    ModelConfig cfg_;
    ParamStore<float> store_;
    std::optional<nets::UNet<float>> mf_net_;
    std::optional<nets::UNet<float>> af_net_;
    std::optional<nets::UNet<float>> direct_net_;
    flow::PyramidConfig lk_cfg_;
};

}  // namespace lagcast::models
