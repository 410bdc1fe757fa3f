/**
 * @file autodiff.cpp
 * @brief Primitive forward/backward kernels and the reverse sweep.
 */
#include "lagcast/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <unordered_set>

#include "lagcast/errors.hpp"

namespace lagcast::ad {

bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

namespace {

template <typename T>
void check_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
    if (!(a.shape() == b.shape()))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

/// Wrap a freshly computed value; record parents and the backward closure only
/// when grad mode is on and some parent requires gradients.
template <typename T, typename F>
Var<T> make_op(Tensor<T> value, const char* op, std::vector<Var<T>> parents, F&& backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = op;
    if (grad_mode()) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (auto& p : parents) n->parents.push_back(p.node());
            n->backward_fn = std::forward<F>(backward_fn);
        }
    }
    return Var<T>(std::move(n));
}

template <typename T>
Tensor<T>* grad_of(Node<T>& self, std::size_t i) {
    Node<T>& p = *self.parents[i];
    if (!p.requires_grad) return nullptr;
    p.ensure_grad();
    return &p.grad;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    const std::size_t n = out.vec().size();
    const T* pa = a.value().data();
    const T* pb = b.value().data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    return make_op(std::move(out), "add", {a, b}, [](Node<T>& self) {
        const T* g = self.grad.data();
        const std::size_t m = self.grad.vec().size();
        for (std::size_t k = 0; k < 2; ++k)
            if (Tensor<T>* gp = grad_of(self, k)) {
                T* d = gp->data();
                for (std::size_t i = 0; i < m; ++i) d[i] += g[i];
            }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same_shape("sub", a, b);
    Tensor<T> out(a.shape());
    const std::size_t n = out.vec().size();
    const T* pa = a.value().data();
    const T* pb = b.value().data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    return make_op(std::move(out), "sub", {a, b}, [](Node<T>& self) {
        const T* g = self.grad.data();
        const std::size_t m = self.grad.vec().size();
        if (Tensor<T>* gp = grad_of(self, 0)) {
            T* d = gp->data();
            for (std::size_t i = 0; i < m; ++i) d[i] += g[i];
        }
        if (Tensor<T>* gp = grad_of(self, 1)) {
            T* d = gp->data();
            for (std::size_t i = 0; i < m; ++i) d[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same_shape("mul", a, b);
    Tensor<T> out(a.shape());
    const std::size_t n = out.vec().size();
    const T* pa = a.value().data();
    const T* pb = b.value().data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    return make_op(std::move(out), "mul", {a, b}, [](Node<T>& self) {
        const T* g = self.grad.data();
        const std::size_t m = self.grad.vec().size();
        const T* va = self.parents[0]->value.data();
        const T* vb = self.parents[1]->value.data();
        if (Tensor<T>* gp = grad_of(self, 0)) {
            T* d = gp->data();
            for (std::size_t i = 0; i < m; ++i) d[i] += g[i] * vb[i];
        }
        if (Tensor<T>* gp = grad_of(self, 1)) {
            T* d = gp->data();
            for (std::size_t i = 0; i < m; ++i) d[i] += g[i] * va[i];
        }
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
    Tensor<T> out(a.shape());
    const std::size_t n = out.vec().size();
    const T* pa = a.value().data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + s;
    return make_op(std::move(out), "add_scalar", {a}, [](Node<T>& self) {
        if (Tensor<T>* gp = grad_of(self, 0)) {
            const T* g = self.grad.data();
            T* d = gp->data();
            const std::size_t m = self.grad.vec().size();
            for (std::size_t i = 0; i < m; ++i) d[i] += g[i];
        }
    });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
    Tensor<T> out(a.shape());
    const std::size_t n = out.vec().size();
    const T* pa = a.value().data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    return make_op(std::move(out), "mul_scalar", {a}, [s](Node<T>& self) {
        if (Tensor<T>* gp = grad_of(self, 0)) {
            const T* g = self.grad.data();
            T* d = gp->data();
            const std::size_t m = self.grad.vec().size();
            for (std::size_t i = 0; i < m; ++i) d[i] += s * g[i];
        }
    });
}

namespace {

/// Shared scaffolding for unary elementwise maps whose derivative is a
/// function of (input, output).
template <typename T, typename Fwd, typename Bwd>
Var<T> unary_op(const Var<T>& a, const char* op, Fwd&& f, Bwd&& dfdx) {
    Tensor<T> out(a.shape());
    const std::size_t n = out.vec().size();
    const T* pa = a.value().data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = f(pa[i]);
    return make_op(std::move(out), op, {a}, [dfdx](Node<T>& self) {
        if (Tensor<T>* gp = grad_of(self, 0)) {
            const T* g = self.grad.data();
            const T* x = self.parents[0]->value.data();
            const T* y = self.value.data();
            T* d = gp->data();
            const std::size_t m = self.grad.vec().size();
            for (std::size_t i = 0; i < m; ++i) d[i] += dfdx(x[i], y[i]) * g[i];
        }
    });
}

}  // namespace

template <typename T>
Var<T> relu(const Var<T>& a) {
    return unary_op(
        a, "relu", [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    return unary_op(
        a, "leaky_relu", [slope](T x) { return x > T(0) ? x : slope * x; },
        [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    return unary_op(
        a, "sigmoid", [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
    return unary_op(
        a, "tanh", [](T x) { return std::tanh(x); },
        [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
    return unary_op(
        a, "abs", [](T x) { return x < T(0) ? -x : x; },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> clamp_min(const Var<T>& a, T floor) {
    return unary_op(
        a, "clamp_min", [floor](T x) { return x > floor ? x : floor; },
        [floor](T x, T) { return x > floor ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape s0 = parts[0].shape();
    int ctotal = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.b != s0.b || s.h != s0.h || s.w != s0.w)
            throw ShapeError("concat: geometry mismatch " + s.str() + " vs " + s0.str());
        ctotal += s.c;
    }
    Tensor<T> out({s0.b, ctotal, s0.h, s0.w});
    const std::int64_t plane = s0.spatial();
    for (int b = 0; b < s0.b; ++b) {
        int coff = 0;
        for (const auto& p : parts) {
            const int pc = p.shape().c;
            std::copy_n(p.value().plane(b, 0), plane * pc, out.plane(b, coff));
            coff += pc;
        }
    }
    return make_op(std::move(out), "concat", parts, [](Node<T>& self) {
        const Shape& os = self.value.shape();
        const std::int64_t plane = os.spatial();
        for (int b = 0; b < os.b; ++b) {
            int coff = 0;
            for (std::size_t k = 0; k < self.parents.size(); ++k) {
                const int pc = self.parents[k]->value.shape().c;
                if (Tensor<T>* gp = grad_of(self, k)) {
                    const T* g = self.grad.plane(b, coff);
                    T* d = gp->plane(b, 0);
                    for (std::int64_t i = 0; i < plane * pc; ++i) d[i] += g[i];
                }
                coff += pc;
            }
        }
    });
}

template <typename T>
Var<T> slice_channels(const Var<T>& a, int c0, int c1) {
    const Shape& s = a.shape();
    if (c0 < 0 || c1 > s.c || c0 >= c1)
        throw ShapeError("slice_channels: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") for " + s.str());
    Tensor<T> out({s.b, c1 - c0, s.h, s.w});
    const std::int64_t plane = s.spatial();
    for (int b = 0; b < s.b; ++b)
        std::copy_n(a.value().plane(b, c0), plane * (c1 - c0), out.plane(b, 0));
    return make_op(std::move(out), "slice_channels", {a}, [c0](Node<T>& self) {
        if (Tensor<T>* gp = grad_of(self, 0)) {
            const Shape& os = self.value.shape();
            const std::int64_t n = os.spatial() * os.c;
            for (int b = 0; b < os.b; ++b) {
                const T* g = self.grad.plane(b, 0);
                T* d = gp->plane(b, c0);
                for (std::int64_t i = 0; i < n; ++i) d[i] += g[i];
            }
        }
    });
}

template <typename T>
Var<T> crop(const Var<T>& a, int top, int left, int h, int w) {
    const Shape& s = a.shape();
    if (top < 0 || left < 0 || h <= 0 || w <= 0 || top + h > s.h || left + w > s.w)
        throw ShapeError("crop: window out of bounds for " + s.str());
    Tensor<T> out({s.b, s.c, h, w});
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const T* ip = a.value().plane(b, c);
            T* op = out.plane(b, c);
            for (int r = 0; r < h; ++r)
                std::copy_n(ip + (top + r) * s.w + left, w, op + r * w);
        }
    return make_op(std::move(out), "crop", {a}, [top, left](Node<T>& self) {
        if (Tensor<T>* gp = grad_of(self, 0)) {
            const Shape& os = self.value.shape();
            const int W = gp->shape().w;
            for (int b = 0; b < os.b; ++b)
                for (int c = 0; c < os.c; ++c) {
                    const T* g = self.grad.plane(b, c);
                    T* d = gp->plane(b, c);
                    for (int r = 0; r < os.h; ++r) {
                        T* drow = d + (top + r) * W + left;
                        const T* grow = g + r * os.w;
                        for (int q = 0; q < os.w; ++q) drow[q] += grow[q];
                    }
                }
        }
    });
}

template <typename T>
Var<T> detach(const Var<T>& a) {
    return Var<T>::constant(a.value());
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    const T* pa = a.value().data();
    const std::size_t n = a.value().vec().size();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += pa[i];
    Tensor<T> out(Shape{1, 1, 1, 1});
    out.vec()[0] = acc;
    return make_op(std::move(out), "sum", {a}, [](Node<T>& self) {
        if (Tensor<T>* gp = grad_of(self, 0)) {
            const T g = self.grad.vec()[0];
            T* d = gp->data();
            const std::size_t m = gp->vec().size();
            for (std::size_t i = 0; i < m; ++i) d[i] += g;
        }
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    const T* pa = a.value().data();
    const std::size_t n = a.value().vec().size();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += pa[i];
    Tensor<T> out(Shape{1, 1, 1, 1});
    out.vec()[0] = acc / static_cast<T>(n);
    return make_op(std::move(out), "mean", {a}, [](Node<T>& self) {
        if (Tensor<T>* gp = grad_of(self, 0)) {
            const std::size_t m = gp->vec().size();
            const T g = self.grad.vec()[0] / static_cast<T>(m);
            T* d = gp->data();
            for (std::size_t i = 0; i < m; ++i) d[i] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace {

// All three convolution passes run as dense matrix products on an im2col
// layout: column k = (ci*Kh + kh)*Kw + kw matches the weight layout
// (Co, Ci, Kh, Kw), so the weight tensor is directly a (Co x K) matrix.
// This keeps the hot loops long even on the small-spatial deep layers of a
// U-Net, where direct per-tap loops degenerate into 8-wide rows.

/// C (MxN) += A (MxK) * B (KxN), all dense row-major.
template <typename T>
void gemm_add(const T* __restrict a, const T* __restrict b, T* __restrict c, int M, int N, int K) {
    constexpr int MR = 4;   // A rows per register tile
    constexpr int NR = 32;  // C columns per register tile
    for (int j0 = 0; j0 < N; j0 += NR) {
        const int jn = std::min(NR, N - j0);
        int i0 = 0;
        if (jn == NR) {
            for (; i0 + MR <= M; i0 += MR) {
                T acc[MR][NR];
                for (int i = 0; i < MR; ++i)
                    for (int j = 0; j < NR; ++j) acc[i][j] = c[(i0 + i) * N + j0 + j];
                const T* a0 = a + (i0 + 0) * K;
                const T* a1 = a + (i0 + 1) * K;
                const T* a2 = a + (i0 + 2) * K;
                const T* a3 = a + (i0 + 3) * K;
                for (int k = 0; k < K; ++k) {
                    const T* brow = b + static_cast<std::size_t>(k) * N + j0;
                    const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
#pragma omp simd
                    for (int j = 0; j < NR; ++j) {
                        const T bv = brow[j];
                        acc[0][j] += v0 * bv;
                        acc[1][j] += v1 * bv;
                        acc[2][j] += v2 * bv;
                        acc[3][j] += v3 * bv;
                    }
                }
                for (int i = 0; i < MR; ++i)
                    for (int j = 0; j < NR; ++j) c[(i0 + i) * N + j0 + j] = acc[i][j];
            }
        }
        for (; i0 < M; ++i0) {
            T* crow = c + static_cast<std::size_t>(i0) * N + j0;
            const T* arow = a + static_cast<std::size_t>(i0) * K;
            T acc[NR];
            for (int j = 0; j < jn; ++j) acc[j] = crow[j];
            for (int k = 0; k < K; ++k) {
                const T av = arow[k];
                const T* brow = b + static_cast<std::size_t>(k) * N + j0;
#pragma omp simd
                for (int j = 0; j < jn; ++j) acc[j] += av * brow[j];
            }
            for (int j = 0; j < jn; ++j) crow[j] = acc[j];
        }
    }
}

struct ConvDims {
    int Ci, H, W, Kh, Kw, Ho, Wo, stride, pad;
    int k_rows() const { return Ci * Kh * Kw; }
    std::size_t cols_size() const {
        return static_cast<std::size_t>(k_rows()) * Ho * Wo;
    }
};

/// Writes the padded patch matrix (k_rows x Ho*Wo) for one batch item.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
    const int N = d.Ho * d.Wo;
    T* dst = cols;
    for (int ci = 0; ci < d.Ci; ++ci) {
        const T* plane = x + static_cast<std::size_t>(ci) * d.H * d.W;
        for (int kh = 0; kh < d.Kh; ++kh)
            for (int kw = 0; kw < d.Kw; ++kw, dst += N) {
                for (int oh = 0; oh < d.Ho; ++oh) {
                    T* drow = dst + oh * d.Wo;
                    const int ih = oh * d.stride + kh - d.pad;
                    if (ih < 0 || ih >= d.H) {
                        std::fill_n(drow, d.Wo, T(0));
                        continue;
                    }
                    const T* irow = plane + static_cast<std::size_t>(ih) * d.W;
                    if (d.stride == 1) {
                        const int ow_lo = std::max(0, d.pad - kw);
                        const int ow_hi = std::min(d.Wo, d.W - 1 + d.pad - kw + 1);
                        std::fill_n(drow, d.Wo, T(0));
                        if (ow_lo < ow_hi)
                            std::memcpy(drow + ow_lo, irow + ow_lo + kw - d.pad,
                                        static_cast<std::size_t>(ow_hi - ow_lo) * sizeof(T));
                    } else {
                        for (int ow = 0; ow < d.Wo; ++ow) {
                            const int iw = ow * d.stride + kw - d.pad;
                            drow[ow] = (iw >= 0 && iw < d.W) ? irow[iw] : T(0);
                        }
                    }
                }
            }
    }
}

/// Scatter-adds a patch-matrix gradient back onto the input gradient planes.
template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* dx) {
    const int N = d.Ho * d.Wo;
    const T* src = cols;
    for (int ci = 0; ci < d.Ci; ++ci) {
        T* plane = dx + static_cast<std::size_t>(ci) * d.H * d.W;
        for (int kh = 0; kh < d.Kh; ++kh)
            for (int kw = 0; kw < d.Kw; ++kw, src += N) {
                for (int oh = 0; oh < d.Ho; ++oh) {
                    const T* srow = src + oh * d.Wo;
                    const int ih = oh * d.stride + kh - d.pad;
                    if (ih < 0 || ih >= d.H) continue;
                    T* irow = plane + static_cast<std::size_t>(ih) * d.W;
                    if (d.stride == 1) {
                        const int ow_lo = std::max(0, d.pad - kw);
                        const int ow_hi = std::min(d.Wo, d.W - 1 + d.pad - kw + 1);
                        const int di = kw - d.pad;
#pragma omp simd
                        for (int ow = ow_lo; ow < ow_hi; ++ow) irow[ow + di] += srow[ow];
                    } else {
                        for (int ow = 0; ow < d.Wo; ++ow) {
                            const int iw = ow * d.stride + kw - d.pad;
                            if (iw >= 0 && iw < d.W) irow[iw] += srow[ow];
                        }
                    }
                }
            }
    }
}

/// Per-thread scratch for the convolution passes (`which` selects a buffer).
template <typename T>
std::vector<T>& conv_scratch(int which) {
    thread_local std::vector<T> bufs[4];
    return bufs[static_cast<std::size_t>(which)];
}

/// True when the patch matrix would be the input itself (1x1, unit stride,
/// no padding), so im2col/col2im can be skipped.
inline bool conv_is_pointwise(const ConvDims& d) {
    return d.Kh == 1 && d.Kw == 1 && d.stride == 1 && d.pad == 0;
}

inline ConvDims conv_dims(const Shape& xs, const Shape& ws, const Shape& os, int stride, int pad) {
    return ConvDims{xs.c, xs.h, xs.w, ws.h, ws.w, os.h, os.w, stride, pad};
}

template <typename T>
void conv2d_forward_kernel(const Tensor<T>& x, const Tensor<T>& w, const T* bias, Tensor<T>& out,
                           int stride, int pad) {
    const Shape xs = x.shape(), ws = w.shape(), os = out.shape();
    const ConvDims d = conv_dims(xs, ws, os, stride, pad);
    const int Co = ws.b, K = d.k_rows(), N = d.Ho * d.Wo;
    std::vector<T>& cols = conv_scratch<T>(0);
    if (!conv_is_pointwise(d)) cols.resize(d.cols_size());
    for (int b = 0; b < xs.b; ++b) {
        T* op = out.plane(b, 0);
        for (int co = 0; co < Co; ++co)
            std::fill_n(op + static_cast<std::size_t>(co) * N, N, bias ? bias[co] : T(0));
        const T* patch = x.plane(b, 0);
        if (!conv_is_pointwise(d)) {
            im2col(patch, d, cols.data());
            patch = cols.data();
        }
        gemm_add(w.vec().data(), patch, op, Co, N, K);
    }
}

template <typename T>
void conv2d_backward_kernel(Node<T>& self, int stride, int pad) {
    const Tensor<T>& g = self.grad;
    const Tensor<T>& x = self.parents[0]->value;
    const Tensor<T>& w = self.parents[1]->value;
    const Shape xs = x.shape(), ws = w.shape(), os = g.shape();
    const ConvDims d = conv_dims(xs, ws, os, stride, pad);
    const int B = xs.b, Co = ws.b, K = d.k_rows(), N = d.Ho * d.Wo;
    const bool pointwise = conv_is_pointwise(d);

    Tensor<T>* gx = grad_of(self, 0);
    Tensor<T>* gw = grad_of(self, 1);

    std::vector<T>& wt = conv_scratch<T>(0);    // W^T, K x Co
    std::vector<T>& gt = conv_scratch<T>(1);    // g[b]^T, N x Co
    std::vector<T>& cols = conv_scratch<T>(2);  // input patches, K x N
    std::vector<T>& dwt = conv_scratch<T>(3);   // dW^T accumulator, K x Co

    if (gx) {
        wt.resize(static_cast<std::size_t>(K) * Co);
        const T* wp = w.vec().data();
        for (int co = 0; co < Co; ++co)
            for (int k = 0; k < K; ++k)
                wt[static_cast<std::size_t>(k) * Co + co] = wp[static_cast<std::size_t>(co) * K + k];
    }
    if (gw) {
        dwt.assign(static_cast<std::size_t>(K) * Co, T(0));
        gt.resize(static_cast<std::size_t>(N) * Co);
    }

    std::vector<T> colsg;  // patch gradients, K x N
    if (gx && !pointwise) colsg.resize(d.cols_size());

    for (int b = 0; b < B; ++b) {
        const T* gp = g.plane(b, 0);
        if (gx) {
            if (pointwise) {
                gemm_add(wt.data(), gp, gx->plane(b, 0), K, N, Co);
            } else {
                std::fill(colsg.begin(), colsg.end(), T(0));
                gemm_add(wt.data(), gp, colsg.data(), K, N, Co);
                col2im_add(colsg.data(), d, gx->plane(b, 0));
            }
        }
        if (gw) {
            for (int co = 0; co < Co; ++co)
                for (int n = 0; n < N; ++n)
                    gt[static_cast<std::size_t>(n) * Co + co] = gp[static_cast<std::size_t>(co) * N + n];
            const T* patch = x.plane(b, 0);
            if (!pointwise) {
                cols.resize(d.cols_size());
                im2col(x.plane(b, 0), d, cols.data());
                patch = cols.data();
            }
            gemm_add(patch, gt.data(), dwt.data(), K, Co, N);
        }
    }

    if (gw) {
        T* gwp = gw->vec().data();
        for (int co = 0; co < Co; ++co)
            for (int k = 0; k < K; ++k) gwp[static_cast<std::size_t>(co) * K + k] += dwt[static_cast<std::size_t>(k) * Co + co];
    }

    if (self.parents.size() > 2) {
        if (Tensor<T>* gb = grad_of(self, 2)) {
            for (int co = 0; co < Co; ++co) {
                T acc = T(0);
                for (int b = 0; b < B; ++b) {
                    const T* gp = g.plane(b, co);
                    T dot = T(0);
#pragma omp simd reduction(+ : dot)
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(d.Ho) * d.Wo; ++i) dot += gp[i];
                    acc += dot;
                }
                gb->vec()[static_cast<std::size_t>(co)] += acc;
            }
        }
    }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int padding) {
    const Shape xs = x.shape(), ws = weight.shape();
    if (ws.c != xs.c)
        throw ShapeError("conv2d: input channels " + std::to_string(xs.c) + " vs kernel " + std::to_string(ws.c));
    if (ws.h % 2 == 0 || ws.w % 2 == 0)
        throw ShapeError("conv2d: kernel must be odd-sized, got " + ws.str());
    if (stride < 1 || padding < 0) throw ShapeError("conv2d: bad stride/padding");
    const int Ho = (xs.h + 2 * padding - ws.h) / stride + 1;
    const int Wo = (xs.w + 2 * padding - ws.w) / stride + 1;
    if (Ho <= 0 || Wo <= 0)
        throw ShapeError("conv2d: kernel " + ws.str() + " larger than padded input " + xs.str());
    const T* bptr = nullptr;
    if (bias.defined()) {
        if (bias.shape().c != ws.b || bias.shape().numel() != ws.b)
            throw ShapeError("conv2d: bias shape " + bias.shape().str() + " does not match " +
                             std::to_string(ws.b) + " output channels");
        bptr = bias.value().data();
    }
    Tensor<T> out({xs.b, ws.b, Ho, Wo});
    conv2d_forward_kernel(x.value(), weight.value(), bptr, out, stride, padding);
    std::vector<Var<T>> parents = bias.defined() ? std::vector<Var<T>>{x, weight, bias}
                                                 : std::vector<Var<T>>{x, weight};
    return make_op(std::move(out), "conv2d", std::move(parents),
                   [stride, padding](Node<T>& self) { conv2d_backward_kernel(self, stride, padding); });
}

// ---------------------------------------------------------------------------
// pooling / upsampling
// ---------------------------------------------------------------------------

template <typename T>
Var<T> max_pool2d(const Var<T>& x) {
    const Shape s = x.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0)
        throw ShapeError("max_pool2d: spatial dims must be even, got " + s.str() + "; pad the input");
    const int Ho = s.h / 2, Wo = s.w / 2;
    Tensor<T> out({s.b, s.c, Ho, Wo});
    std::vector<std::int32_t> argmax(static_cast<std::size_t>(out.numel()));
    std::size_t oi = 0;
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const T* ip = x.value().plane(b, c);
            T* op = out.plane(b, c);
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    // first row-major maximum wins ties
                    std::int32_t best = (2 * oh) * s.w + 2 * ow;
                    T bv = ip[best];
                    const std::int32_t cand[3] = {best + 1, best + s.w, best + s.w + 1};
                    for (std::int32_t idx : cand)
                        if (ip[idx] > bv) {
                            bv = ip[idx];
                            best = idx;
                        }
                    op[oh * Wo + ow] = bv;
                    argmax[oi++] = best;
                }
        }
    return make_op(std::move(out), "max_pool2d", {x}, [argmax = std::move(argmax)](Node<T>& self) {
        if (Tensor<T>* gx = grad_of(self, 0)) {
            const Shape os = self.value.shape();
            std::size_t oi = 0;
            for (int b = 0; b < os.b; ++b)
                for (int c = 0; c < os.c; ++c) {
                    const T* g = self.grad.plane(b, c);
                    T* d = gx->plane(b, c);
                    const std::int64_t n = os.spatial();
                    for (std::int64_t i = 0; i < n; ++i) d[argmax[oi++]] += g[i];
                }
        }
    });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
    const Shape s = x.shape();
    Tensor<T> out({s.b, s.c, s.h * 2, s.w * 2});
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const T* ip = x.value().plane(b, c);
            T* op = out.plane(b, c);
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    const T v = ip[h * s.w + w];
                    T* o = op + (2 * h) * (2 * s.w) + 2 * w;
                    o[0] = v;
                    o[1] = v;
                    o[2 * s.w] = v;
                    o[2 * s.w + 1] = v;
                }
        }
    return make_op(std::move(out), "upsample_nearest2", {x}, [](Node<T>& self) {
        if (Tensor<T>* gx = grad_of(self, 0)) {
            const Shape is = gx->shape();
            for (int b = 0; b < is.b; ++b)
                for (int c = 0; c < is.c; ++c) {
                    const T* g = self.grad.plane(b, c);
                    T* d = gx->plane(b, c);
                    const int W2 = is.w * 2;
                    for (int h = 0; h < is.h; ++h)
                        for (int w = 0; w < is.w; ++w) {
                            const T* gr = g + (2 * h) * W2 + 2 * w;
                            d[h * is.w + w] += gr[0] + gr[1] + gr[W2] + gr[W2 + 1];
                        }
                }
        }
    });
}

// ---------------------------------------------------------------------------
// grid sampling
// ---------------------------------------------------------------------------

template <typename T>
Var<T> grid_sample_bilinear(const Var<T>& x, const Var<T>& coords) {
    const Shape xs = x.shape(), cs = coords.shape();
    if (cs.c != 2)
        throw ShapeError("grid_sample_bilinear: coords need 2 channels (x, y), got " + cs.str());
    if (cs.b != xs.b)
        throw ShapeError("grid_sample_bilinear: batch mismatch " + xs.str() + " vs " + cs.str());
    const int B = xs.b, C = xs.c, H = xs.h, W = xs.w;
    const int Hs = cs.h, Ws = cs.w;
    Tensor<T> out({B, C, Hs, Ws});
    const std::int64_t splane = static_cast<std::int64_t>(Hs) * Ws;
    for (int b = 0; b < B; ++b) {
        const T* px = coords.value().plane(b, 0);
        const T* py = coords.value().plane(b, 1);
        for (std::int64_t i = 0; i < splane; ++i) {
            const T sx = px[i];
            const T sy = py[i];
            const T fx = std::floor(sx);
            const T fy = std::floor(sy);
            const int x0 = static_cast<int>(fx);
            const int y0 = static_cast<int>(fy);
            const T wx = sx - fx;
            const T wy = sy - fy;
            if (wx == T(0) && wy == T(0)) {
                // integer coordinates: exact copy, bit-identical to the source cell
                const bool in = x0 >= 0 && x0 < W && y0 >= 0 && y0 < H;
                for (int c = 0; c < C; ++c)
                    out.plane(b, c)[i] = in ? x.value().plane(b, c)[y0 * W + x0] : T(0);
                continue;
            }
            const bool in00 = x0 >= 0 && x0 < W && y0 >= 0 && y0 < H;
            const bool in01 = (x0 + 1) >= 0 && (x0 + 1) < W && y0 >= 0 && y0 < H;
            const bool in10 = x0 >= 0 && x0 < W && (y0 + 1) >= 0 && (y0 + 1) < H;
            const bool in11 = (x0 + 1) >= 0 && (x0 + 1) < W && (y0 + 1) >= 0 && (y0 + 1) < H;
            const T w00 = (T(1) - wy) * (T(1) - wx);
            const T w01 = (T(1) - wy) * wx;
            const T w10 = wy * (T(1) - wx);
            const T w11 = wy * wx;
            for (int c = 0; c < C; ++c) {
                const T* ip = x.value().plane(b, c);
                T acc = T(0);
                if (in00) acc += w00 * ip[y0 * W + x0];
                if (in01) acc += w01 * ip[y0 * W + x0 + 1];
                if (in10) acc += w10 * ip[(y0 + 1) * W + x0];
                if (in11) acc += w11 * ip[(y0 + 1) * W + x0 + 1];
                out.plane(b, c)[i] = acc;
            }
        }
    }
    return make_op(std::move(out), "grid_sample_bilinear", {x, coords}, [](Node<T>& self) {
        const Tensor<T>& x = self.parents[0]->value;
        const Tensor<T>& coords = self.parents[1]->value;
        const Shape xs = x.shape(), cs = coords.shape();
        const int B = xs.b, C = xs.c, H = xs.h, W = xs.w;
        const std::int64_t splane = static_cast<std::int64_t>(cs.h) * cs.w;
        Tensor<T>* gx = grad_of(self, 0);
        Tensor<T>* gc = grad_of(self, 1);
        for (int b = 0; b < B; ++b) {
            const T* px = coords.plane(b, 0);
            const T* py = coords.plane(b, 1);
            T* gcx = gc ? gc->plane(b, 0) : nullptr;
            T* gcy = gc ? gc->plane(b, 1) : nullptr;
            for (std::int64_t i = 0; i < splane; ++i) {
                const T sx = px[i];
                const T sy = py[i];
                const T fx = std::floor(sx);
                const T fy = std::floor(sy);
                const int x0 = static_cast<int>(fx);
                const int y0 = static_cast<int>(fy);
                const T wx = sx - fx;
                const T wy = sy - fy;
                const bool in00 = x0 >= 0 && x0 < W && y0 >= 0 && y0 < H;
                const bool in01 = (x0 + 1) >= 0 && (x0 + 1) < W && y0 >= 0 && y0 < H;
                const bool in10 = x0 >= 0 && x0 < W && (y0 + 1) >= 0 && (y0 + 1) < H;
                const bool in11 = (x0 + 1) >= 0 && (x0 + 1) < W && (y0 + 1) >= 0 && (y0 + 1) < H;
                const T w00 = (T(1) - wy) * (T(1) - wx);
                const T w01 = (T(1) - wy) * wx;
                const T w10 = wy * (T(1) - wx);
                const T w11 = wy * wx;
                T dvx = T(0), dvy = T(0);
                for (int c = 0; c < C; ++c) {
                    const T g = self.grad.plane(b, c)[i];
                    const T* ip = x.plane(b, c);
                    const T v00 = in00 ? ip[y0 * W + x0] : T(0);
                    const T v01 = in01 ? ip[y0 * W + x0 + 1] : T(0);
                    const T v10 = in10 ? ip[(y0 + 1) * W + x0] : T(0);
                    const T v11 = in11 ? ip[(y0 + 1) * W + x0 + 1] : T(0);
                    if (gx) {
                        T* d = gx->plane(b, c);
                        if (in00) d[y0 * W + x0] += w00 * g;
                        if (in01) d[y0 * W + x0 + 1] += w01 * g;
                        if (in10) d[(y0 + 1) * W + x0] += w10 * g;
                        if (in11) d[(y0 + 1) * W + x0 + 1] += w11 * g;
                    }
                    if (gc) {
                        dvx += g * ((T(1) - wy) * (v01 - v00) + wy * (v11 - v10));
                        dvy += g * ((T(1) - wx) * (v10 - v00) + wx * (v11 - v01));
                    }
                }
                if (gc) {
                    gcx[i] += dvx;
                    gcy[i] += dvy;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// divergence (Sobel)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> divergence(const Var<T>& motion, T dx) {
    const Shape s = motion.shape();
    if (s.c != 2) throw ShapeError("divergence: motion needs channels (u_x, u_y), got " + s.str());
    if (dx <= T(0)) throw ValidationError("divergence: dx must be positive");
    const int B = s.b, H = s.h, W = s.w;
    const T scale = T(1) / (T(8) * dx);
    Tensor<T> out({B, 1, H, W});
    // The Sobel kernels factor into a 1-2-1 smoothing pass and a central
    // difference. Differencing the smoothed field makes spatially constant
    // motion cancel to exact zero, borders included.
    std::vector<T> vx(static_cast<std::size_t>(H) * W), vy(vx.size());
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    for (int b = 0; b < B; ++b) {
        const T* ux = motion.value().plane(b, 0);
        const T* uy = motion.value().plane(b, 1);
        for (int r = 0; r < H; ++r) {
            const int rm = clampi(r - 1, H - 1), rp = clampi(r + 1, H - 1);
            for (int c = 0; c < W; ++c) {
                const int cm = clampi(c - 1, W - 1), cp = clampi(c + 1, W - 1);
                vx[static_cast<std::size_t>(r) * W + c] =
                    ux[rm * W + c] + T(2) * ux[r * W + c] + ux[rp * W + c];
                vy[static_cast<std::size_t>(r) * W + c] =
                    uy[r * W + cm] + T(2) * uy[r * W + c] + uy[r * W + cp];
            }
        }
        T* op = out.plane(b, 0);
        for (int r = 0; r < H; ++r) {
            const int rm = clampi(r - 1, H - 1), rp = clampi(r + 1, H - 1);
            for (int c = 0; c < W; ++c) {
                const int cm = clampi(c - 1, W - 1), cp = clampi(c + 1, W - 1);
                op[r * W + c] = ((vx[static_cast<std::size_t>(r) * W + cp] -
                                  vx[static_cast<std::size_t>(r) * W + cm]) +
                                 (vy[static_cast<std::size_t>(rp) * W + c] -
                                  vy[static_cast<std::size_t>(rm) * W + c])) *
                                scale;
            }
        }
    }
    return make_op(std::move(out), "divergence", {motion}, [scale](Node<T>& self) {
        if (Tensor<T>* gm = grad_of(self, 0)) {
            const Shape os = self.value.shape();
            const int H = os.h, W = os.w;
            auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
            std::vector<T> dvx(static_cast<std::size_t>(H) * W), dvy(dvx.size());
            for (int b = 0; b < os.b; ++b) {
                const T* g = self.grad.plane(b, 0);
                std::fill(dvx.begin(), dvx.end(), T(0));
                std::fill(dvy.begin(), dvy.end(), T(0));
                for (int r = 0; r < H; ++r) {
                    const int rm = clampi(r - 1, H - 1), rp = clampi(r + 1, H - 1);
                    for (int c = 0; c < W; ++c) {
                        const int cm = clampi(c - 1, W - 1), cp = clampi(c + 1, W - 1);
                        const T gs = g[r * W + c] * scale;
                        dvx[static_cast<std::size_t>(r) * W + cp] += gs;
                        dvx[static_cast<std::size_t>(r) * W + cm] -= gs;
                        dvy[static_cast<std::size_t>(rp) * W + c] += gs;
                        dvy[static_cast<std::size_t>(rm) * W + c] -= gs;
                    }
                }
                T* dux = gm->plane(b, 0);
                T* duy = gm->plane(b, 1);
                for (int r = 0; r < H; ++r) {
                    const int rm = clampi(r - 1, H - 1), rp = clampi(r + 1, H - 1);
                    for (int c = 0; c < W; ++c) {
                        const int cm = clampi(c - 1, W - 1), cp = clampi(c + 1, W - 1);
                        const T dx_ = dvx[static_cast<std::size_t>(r) * W + c];
                        dux[rm * W + c] += dx_;
                        dux[r * W + c] += T(2) * dx_;
                        dux[rp * W + c] += dx_;
                        const T dy_ = dvy[static_cast<std::size_t>(r) * W + c];
                        duy[r * W + cm] += dy_;
                        duy[r * W + c] += T(2) * dy_;
                        duy[r * W + cp] += dy_;
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// reverse sweep
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Var<T>& root) {
    if (!(root.shape() == Shape{1, 1, 1, 1}))
        throw ShapeError("backward: root must be a scalar (1,1,1,1), got " + root.shape().str());
    Node<T>* rn = root.node().get();
    if (!rn->requires_grad) {
        rn->ensure_grad();
        rn->grad.vec()[0] += T(1);
        return;
    }

    // post-order DFS: parents appear before their consumers
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    struct Frame {
        Node<T>* n;
        std::size_t next;
    };
    std::vector<Frame> stack;
    visited.insert(rn);
    stack.push_back({rn, 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node<T>* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    // interior gradients are per-sweep scratch; leaf gradients accumulate
    for (Node<T>* n : order)
        if (n->backward_fn) n->zero_grad();
    rn->ensure_grad();
    rn->grad.vec()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->grad.numel() != 0) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define LAGCAST_INSTANTIATE_AD(T)                                                          \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                  \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                  \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                  \
    template Var<T> add_scalar<T>(const Var<T>&, T);                                       \
    template Var<T> mul_scalar<T>(const Var<T>&, T);                                       \
    template Var<T> relu<T>(const Var<T>&);                                                \
    template Var<T> leaky_relu<T>(const Var<T>&, T);                                       \
    template Var<T> sigmoid<T>(const Var<T>&);                                             \
    template Var<T> tanh<T>(const Var<T>&);                                                \
    template Var<T> abs<T>(const Var<T>&);                                                 \
    template Var<T> clamp_min<T>(const Var<T>&, T);                                        \
    template Var<T> concat<T>(const std::vector<Var<T>>&);                                 \
    template Var<T> slice_channels<T>(const Var<T>&, int, int);                            \
    template Var<T> crop<T>(const Var<T>&, int, int, int, int);                            \
    template Var<T> detach<T>(const Var<T>&);                                              \
    template Var<T> sum_all<T>(const Var<T>&);                                             \
    template Var<T> mean_all<T>(const Var<T>&);                                            \
    template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);      \
    template Var<T> max_pool2d<T>(const Var<T>&);                                          \
    template Var<T> upsample_nearest2<T>(const Var<T>&);                                   \
    template Var<T> grid_sample_bilinear<T>(const Var<T>&, const Var<T>&);                 \
    template Var<T> divergence<T>(const Var<T>&, T);                                       \
    template void backward<T>(const Var<T>&);

LAGCAST_INSTANTIATE_AD(float)
LAGCAST_INSTANTIATE_AD(double)

#undef LAGCAST_INSTANTIATE_AD

}  // namespace lagcast::ad
