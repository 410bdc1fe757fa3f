/**
 * @file training.hpp
 * @brief Loss terms (data-driven, physics-informed) and the staged training
 *        procedure: motion net first, source-sink net with frozen motion,
 *        then joint fine-tuning.
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lagcast/autodiff.hpp"
#include "lagcast/models.hpp"
#include "lagcast/tensor.hpp"

namespace lagcast::train {

/// Mixing weights: beta balances the physics penalty against data terms,
/// gamma balances nowcast error against motion error in the joint stage.
struct LossWeights {
    float beta = 0.1f;
    float gamma = 0.5f;
};

/// Enforces the open-interval bounds beta, gamma in (0, 1).
void validate_loss_weights(const LossWeights& w);

/// Criterion C: mean squared error in network (log-transformed) space.
/// Non-negative, zero iff prediction equals target.
ad::Var<float> criterion(const ad::Var<float>& pred, const ad::Var<float>& target);

/// One-step extrapolation error of the last input frame under `motion`.
ad::Var<float> loss_naive(const ad::Var<float>& motion, const ad::Var<float>& inputs,
                          const ad::Var<float>& target);

/// Pooled motion loss: sum of one-step extrapolation errors over consecutive
/// frame pairs under a single motion field. With `include_target_pair` the
/// final pair extrapolates the last input against the target (n pairs);
/// otherwise only the n-1 observed pairs contribute.
ad::Var<float> loss_mf(const ad::Var<float>& motion, const ad::Var<float>& inputs,
                       const ad::Var<float>& target, bool include_target_pair = true);

/// Stage losses. Terms are combined as exact weighted sums, so evaluating
/// the pieces separately and mixing with (beta, gamma) reproduces the fused
/// value. Optional out-parameters expose the unweighted terms.
ad::Var<float> stage_mf_loss(models::NowcastModel& model, const ad::Var<float>& inputs,
                             const ad::Var<float>& target, float beta,
                             bool include_target_pair = true, float* mf_term = nullptr,
                             float* pi_term = nullptr);
ad::Var<float> stage_af_loss(models::NowcastModel& model, const ad::Var<float>& inputs,
                             const ad::Var<float>& target, float* af_term = nullptr);
ad::Var<float> stage_joint_loss(models::NowcastModel& model, const ad::Var<float>& inputs,
                                const ad::Var<float>& target, float beta, float gamma,
                                bool include_target_pair = true, float* af_term = nullptr,
                                float* mf_term = nullptr, float* pi_term = nullptr);

/// Training windows in network space, one tensor of shape
/// (1, window_frames, H, W) per sample; the first `input_frames` planes are
/// the observations, the next plane is the one-step target, and the
/// remaining planes are the later leads used by evaluation.
struct TrainData {
    int window_frames = 12;
    int input_frames = 6;
    std::vector<TensorF> train;
    std::vector<TensorF> validation;
    std::vector<TensorF> test;
};

/// Reads <dir>/train.rfs, validation.rfs, and test.rfs window stacks and
/// transforms them to network space.
TrainData load_train_data(const std::string& dir, float norm_scale);

/// Reads a single window stack (one tensor per training window, transformed
/// to network space). A missing file yields an empty vector; a stack without
/// the window extension is an error.
std::vector<TensorF> load_window_stack(const std::string& path, float norm_scale);

struct TrainConfig {
    LossWeights weights;
    int batch_size = 4;
    int patience = 10;             ///< early-stopping patience, epochs
    std::uint64_t seed = 1;
    float lr_early = 1e-3f;        ///< motion and source-sink stages
    float lr_joint = 1e-4f;        ///< joint fine-tuning stage
    int epochs_mf = 8;
    int epochs_af = 8;
    int epochs_joint = 4;
    bool include_target_pair = true;
    bool single_stage = false;     ///< experimental: one joint stage from scratch
    std::vector<std::string> stages;  ///< subset filter; empty = full plan
};

/// Validates a stage list: a non-empty, in-order subsequence of the model's
/// canonical plan (mf, af, joint for learned motion; af otherwise).
std::vector<std::string> resolve_stage_plan(const models::NowcastModel& model,
                                            const TrainConfig& cfg);

struct StageMetrics {
    std::string stage;
    int epochs_run = 0;
    float final_train_loss = 0.0f;
    float final_val_loss = 0.0f;
    std::string checkpoint_path;
};

struct TrainResult {
    std::vector<StageMetrics> stages;
    std::string final_checkpoint;
    int total_steps = 0;
};

/// Runs the staged plan, writing one checkpoint per stage plus `model.ckpt`,
/// and appending one JSON line per epoch to <out_dir>/run.ldjson.
/// Throws TrainingError on non-finite losses or freeze violations.
TrainResult train(models::NowcastModel& model, const TrainData& data, const TrainConfig& cfg,
                  const std::string& out_dir);

}  // namespace lagcast::train
