/**
 * @file gradcheck.hpp
 * @brief Central finite-difference verification of the backward pass (64-bit).
 */
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lagcast/autodiff.hpp"

namespace lagcast::gradcheck {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    int instances = 0;
    bool pass() const { return max_rel_err < tolerance; }
};

/// Builds a scalar (1,1,1,1) output from differentiable leaf inputs.
using ScalarFn = std::function<ad::Var<double>(std::vector<ad::Var<double>>&)>;

/**
 * Max relative error between reverse-mode gradients and central finite
 * differences (f(x+h) - f(x-h)) / 2h, taken over every element of every
 * input. The relative denominator is max(1, |analytic|, |numeric|), so
 * near-zero gradients are compared absolutely.
 */
double max_rel_error(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs, double h = 1e-6);

/// Variant for functions over pre-built leaves (e.g. network parameters held
/// inside a model object): finite differences perturb the leaf values in
/// place while `fn` re-evaluates the captured graph.
double max_rel_error_inplace(const std::function<ad::Var<double>()>& fn,
                             const std::vector<ad::Var<double>>& leaves, double h = 1e-6);

/**
 * The full 64-bit suite: every primitive, the composed multi-step warp,
 * the divergence penalty, and a depth-1 U-Net, each over `instances`
 * random instances.
 */
std::vector<CheckResult> run_suite(std::uint64_t seed = 20260815ull, int instances = 20);

}  // namespace lagcast::gradcheck
