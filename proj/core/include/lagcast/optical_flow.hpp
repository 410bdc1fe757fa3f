/**
 * @file optical_flow.hpp
 * @brief Pyramidal Lucas-Kanade motion estimation: sparse feature tracking
 *        densified to a full motion field. Non-differentiable baseline.
 */
#pragma once

#include <vector>

#include "lagcast/field.hpp"
#include "lagcast/tensor.hpp"

namespace lagcast::flow {

struct PyramidConfig {
    int levels = 3;              ///< pyramid levels (>= 1)
    int window_radius = 7;       ///< half-width of the tracking window (>= 2)
    int iterations = 10;         ///< Lucas-Kanade iterations per level
    double min_eigenvalue = 1e-4;   ///< solvability floor on the normalised
                                    ///< tracking-window structure tensor
    double smoothing_sigma = 12.0;  ///< Gaussian radius for densification (px)
    int max_features = 100;      ///< cap on tracked corners per frame pair
    double quality = 0.05;       ///< corner eigenvalue fraction of the maximum
};

/// Throws ValidationError on out-of-range settings.
void validate_pyramid_config(const PyramidConfig& cfg);

struct MotionField {
    TensorF motion;           ///< (1, 2, H, W); channel 0 = column (x), 1 = row (y) px/step
    bool no_features = false; ///< set when no trackable features existed anywhere
};

struct FeaturePoint {
    int row = 0;
    int col = 0;
    double score = 0.0;  ///< minimum eigenvalue of the local structure tensor
};

/**
 * Shi-Tomasi-style corner selection on one field: per-pixel minimum
 * eigenvalue of the gradient structure tensor, 3x3 non-maximum suppression,
 * then greedy minimum-distance thinning in descending score order.
 * Deterministic: ties break on (row, col).
 */
std::vector<FeaturePoint> feature_points(const RainField& field, int max_points,
                                         double quality = 0.05);

/**
 * Pyramidal Lucas-Kanade over a sequence: flows of consecutive frame pairs
 * are estimated sparsely, densified by Gaussian-weighted interpolation, and
 * averaged into a single field describing the whole sequence.
 *
 * Fields are log(1 + R)-compressed internally before tracking.
 * Featureless input (for example all-zero fields) yields zero motion with
 * `no_features` set.
 */
MotionField lucas_kanade_flow(const FieldSequence& seq, const PyramidConfig& cfg = {});

/// Same estimator over pre-transformed intensity planes laid out row-major,
/// one plane per frame. Used when frames are already in network space.
MotionField lucas_kanade_flow_planes(const std::vector<std::vector<float>>& planes, int height,
                                     int width, const PyramidConfig& cfg = {});

}  // namespace lagcast::flow
