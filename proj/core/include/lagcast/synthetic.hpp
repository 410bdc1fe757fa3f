/**
 * @file synthetic.hpp
 * @brief Synthetic storm sequences with exact ground truth: Gaussian rain
 *        cells advected by analytic flows, per-cell growth and decay, and
 *        scheduled genesis, so every frame decomposes into advection of the
 *        previous frame plus a known source term. Corpus presets write
 *        ready-to-train archives with train/validation/test window stacks.
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lagcast/dataset.hpp"
#include "lagcast/field.hpp"
#include "lagcast/tensor.hpp"

namespace lagcast::synth {

/// Analytic flow families. Translation and rotation have exactly zero
/// discrete divergence everywhere; the stream-function flow is divergence
/// free away from the border by construction.
enum class FlowKind { kTranslate, kRotate, kSolenoidal };

std::string to_string(FlowKind kind);

/// One Gaussian rain cell: initial centre and radius in pixels, initial peak
/// in mm/h, and a fractional per-step growth rate (negative decays).
struct CellSpec {
    float row = 0.0f;
    float col = 0.0f;
    float sigma = 4.0f;
    float peak = 10.0f;
    float growth = 0.0f;
};

/// Cell genesis: `cell` first appears in frame `frame` (>= 1), contributing
/// to the source term of the transition into that frame.
struct Injection {
    int frame = 1;
    CellSpec cell;
};

struct StormSpec {
    int height = 64;
    int width = 64;
    int frames = 24;
    FlowKind flow = FlowKind::kTranslate;
    float flow_col = 1.0f;          ///< translation, px/step (background for solenoidal)
    float flow_row = 0.0f;
    float omega = 0.05f;            ///< rotation rate, rad/step
    float center_row = -1.0f;       ///< rotation centre; negative = domain centre
    float center_col = -1.0f;
    float stream_speed = 1.0f;      ///< peak solenoidal speed, px/step
    int stream_modes = 2;           ///< sinusoidal modes per axis in the stream function
    std::vector<CellSpec> cells;    ///< cells present in frame 0
    std::vector<Injection> injections;
    float noise_sigma = 0.0f;       ///< log-normal observation noise; 0 disables
    double dx_km = 1.0;
    int step_minutes = 5;
};

void validate_storm_spec(const StormSpec& spec);

/// A generated storm. Latent frames follow the exact layered dynamics;
/// observations add multiplicative mean-one log-normal noise. Motion and
/// source describe each transition t -> t+1 (frames-1 of them): the latent
/// frame at t+1 equals the one-step advection of frame t plus the source.
struct SyntheticStorm {
    FieldSequence observations;
    FieldSequence latent;
    TensorF motion;  ///< (frames-1, 2, H, W), px/step
    TensorF source;  ///< (frames-1, 1, H, W), mm/h per step
};

SyntheticStorm generate(const StormSpec& spec, std::uint64_t seed);

/// Corpus presets, by size and difficulty:
///  - "translate":   pure advection, zero source, noise-free;
///  - "growdecay":   drifting cells that grow and decay, with genesis;
///  - "mixed":       multi-cell solenoidal flow over a drifting background,
///                   genesis, and observation noise.
StormSpec preset_storm(const std::string& preset, std::uint64_t seed);

struct CorpusSummary {
    StormSpec spec;
    DatasetSplit split;
    std::string manifest_path;
};

/// Generates the preset storm and writes a complete corpus under `out_dir`:
/// archive.rfs (observations), truth_motion.rfs, truth_source.rfs, the
/// train/validation/test.rfs window stacks (window = lead_count + 1 frames,
/// absent when a split is empty), and manifest.json.
CorpusSummary write_corpus(const std::string& preset, const std::string& out_dir,
                           std::uint64_t seed);

}  // namespace lagcast::synth
