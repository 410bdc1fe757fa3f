/**
 * @file autodiff.hpp
 * @brief Reverse-mode automatic differentiation over dense 4-D tensors.
 *
 * The primitive set is exactly what the U-Nets and the differentiable
 * semi-Lagrangian warp need; there is no broadcasting and no batched matmul.
 * A computation graph is confined to one thread. Gradient accumulation runs
 * in reverse topological (construction) order, so results are deterministic.
 *
 * Scalar type T is float (training default) or double (used by the
 * finite-difference gradient checks, where float is too coarse).
 */
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lagcast/tensor.hpp"

namespace lagcast::ad {

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  ///< same shape as value; allocated on first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr<T>> parents;
    std::function<void(Node<T>&)> backward_fn;

    void ensure_grad() {
        if (grad.numel() == 0) grad = Tensor<T>(value.shape());
    }
    void zero_grad() {
        if (grad.numel() != 0) grad.fill(T(0));
    }
};

/// Thread-local graph recording switch (true by default).
bool& grad_mode();

/// RAII guard disabling graph recording, for inference paths.
class NoGradGuard {
public:
    NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Value-semantics handle to a graph node.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(NodePtr<T> n) : node_(std::move(n)) {}

    static Var leaf(Tensor<T> value, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }
    static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->value.shape(); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    const NodePtr<T>& node() const { return node_; }

    void zero_grad() { node_->zero_grad(); }

private:
    NodePtr<T> node_;
};

// ---- elementwise ----
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> mul_scalar(const Var<T>& a, T s);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> leaky_relu(const Var<T>& a, T slope);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> abs(const Var<T>& a);  ///< subgradient 0 at exact zero
template <typename T> Var<T> clamp_min(const Var<T>& a, T floor);

// ---- structure ----
/// Concatenate along the channel axis.
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts);
/// Channels [c0, c1) of the input.
template <typename T> Var<T> slice_channels(const Var<T>& a, int c0, int c1);
/// Spatial crop: rows [top, top+h), cols [left, left+w).
template <typename T> Var<T> crop(const Var<T>& a, int top, int left, int h, int w);
/// Copy with the graph cut: output is a leaf that never requires gradients.
template <typename T> Var<T> detach(const Var<T>& a);

// ---- reductions ----
template <typename T> Var<T> sum_all(const Var<T>& a);   ///< -> shape (1,1,1,1)
template <typename T> Var<T> mean_all(const Var<T>& a);  ///< -> shape (1,1,1,1)

// ---- spatial ----
/// 2-D convolution with odd kernel, given stride and zero padding; bias optional.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              int stride = 1, int padding = 1);
/// 2x2 max pooling, stride 2. Gradient routes to the first (row-major) maximum.
template <typename T> Var<T> max_pool2d(const Var<T>& x);
/// Nearest-neighbour x2 upsampling.
template <typename T> Var<T> upsample_nearest2(const Var<T>& x);

/**
 * Bilinear sampling of `x` (B,C,H,W) at absolute pixel coordinates
 * `coords` (B,2,Hs,Ws); channel 0 holds sample column (x), channel 1 sample
 * row (y). Samples outside the domain read zero; border samples use partial
 * bilinear weights and fully-outside samples propagate zero coordinate
 * gradients. Differentiable w.r.t. both the input values and the coordinates.
 */
template <typename T>
Var<T> grid_sample_bilinear(const Var<T>& x, const Var<T>& coords);

/**
 * Motion-field divergence du_x/dx + du_y/dy via 3x3 Sobel kernels scaled by
 * 1/(8*dx), with replicate padding at the borders. Input (B,2,H,W) with
 * channel 0 = u_x (column displacement), channel 1 = u_y (row displacement);
 * output (B,1,H,W).
 */
template <typename T>
Var<T> divergence(const Var<T>& motion, T dx = T(1));

/**
 * Reverse-mode sweep from a scalar root of shape (1,1,1,1). Interior node
 * gradients are reset each call; leaf gradients accumulate across calls.
 */
template <typename T>
void backward(const Var<T>& root);

}  // namespace lagcast::ad
