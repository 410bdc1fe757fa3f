/**
 * @file advection.hpp
 * @brief Differentiable semi-Lagrangian extrapolation and the Lagrangian transform.
 *
 * Motion fields are (B,2,H,W) tensors in pixels per time step: channel 0 is
 * the column displacement u_x (+x points right), channel 1 the row
 * displacement u_y (+y points down). Warping is backward (pull): the output
 * cell at x samples the input bilinearly at x - u(x), and samples outside the
 * domain read zero.
 */
#pragma once

#include <vector>

#include "lagcast/autodiff.hpp"

namespace lagcast::advect {

/// Sample coordinates of one backward warp step: the identity grid minus the
/// motion field. Differentiable w.r.t. the motion.
template <typename T>
ad::Var<T> warp_coords(const ad::Var<T>& motion);

/// t composed one-step semi-Lagrangian warps along a single motion field;
/// t = 0 returns the input unchanged.
template <typename T>
ad::Var<T> extrapolate(const ad::Var<T>& field, const ad::Var<T>& motion, int steps);

/**
 * Lagrangian transform of a frame stack (B,n,H,W): frame i (0-based) is
 * extrapolated so that it lands on the reference time. reference must be n
 * (the last observation) or n + 1 (the one-step-ahead frame), counting frames
 * 1..n; frame i is warped (reference - 1 - i) steps.
 */
template <typename T>
ad::Var<T> to_lagrangian(const ad::Var<T>& frames, const ad::Var<T>& motion, int reference);

/// Signed consecutive differences along the channel axis: n-1 fields (B,1,H,W).
template <typename T>
ad::Var<T> temporal_difference(const ad::Var<T>& stack);

/// Mean of |divergence| over the interior cells (the 1-cell border, where
/// replicate padding distorts the stencil, is excluded).
template <typename T>
ad::Var<T> divergence_penalty(const ad::Var<T>& motion, T dx = T(1));

}  // namespace lagcast::advect
