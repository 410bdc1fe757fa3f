/**
 * @file optimizer.hpp
 * @brief Adam with bias correction, bound to a ParamStore.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lagcast/params.hpp"

namespace lagcast {

template <typename T>
struct AdamConfig {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

/// First/second-moment adaptive update. A parameter whose gradient was never
/// allocated in the current step (it did not participate in the loss) is left
/// untouched, including its moments.
template <typename T>
class Adam {
public:
    explicit Adam(ParamStore<T>& store, AdamConfig<T> cfg = {}) : store_(&store), cfg_(cfg) {
        slots_.reserve(store.size());
        for (const auto& p : store.items())
            slots_.push_back(Slot{Tensor<T>(p.var.shape()), Tensor<T>(p.var.shape())});
    }

    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
        const auto& items = store_->items();
        for (std::size_t i = 0; i < items.size(); ++i) {
            ad::Var<T> var = items[i].var;
            if (var.grad().numel() == 0) continue;
            const T* g = var.grad().data();
            T* w = var.value().data();
            T* m = slots_[i].m.data();
            T* v = slots_[i].v.data();
            const std::size_t n = var.value().vec().size();
            for (std::size_t j = 0; j < n; ++j) {
                m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * g[j] * g[j];
                const T mhat = m[j] / bc1;
                const T vhat = v[j] / bc2;
                w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    void zero_grad() { store_->zero_grad(); }

    const AdamConfig<T>& config() const { return cfg_; }
    void set_lr(T lr) { cfg_.lr = lr; }

    // ---- checkpoint access ----
    std::int64_t step_count() const { return t_; }
    const Tensor<T>& moment1(std::size_t i) const { return slots_[i].m; }
    const Tensor<T>& moment2(std::size_t i) const { return slots_[i].v; }
    void restore(std::int64_t t, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
        if (m.size() != slots_.size() || v.size() != slots_.size())
            throw ValidationError("optimizer restore: moment count does not match parameter count");
        for (std::size_t i = 0; i < slots_.size(); ++i) {
            if (!(m[i].shape() == slots_[i].m.shape()) || !(v[i].shape() == slots_[i].v.shape()))
                throw ValidationError("optimizer restore: moment shape mismatch at index " + std::to_string(i));
            slots_[i].m = std::move(m[i]);
            slots_[i].v = std::move(v[i]);
        }
        t_ = t;
    }

private:
    struct Slot {
        Tensor<T> m, v;
    };
    ParamStore<T>* store_;
    AdamConfig<T> cfg_;
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
};

}  // namespace lagcast
