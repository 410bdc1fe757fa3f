/**
 * @file params.hpp
 * @brief Named trainable parameters and the per-model registry.
 */
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lagcast/autodiff.hpp"
#include "lagcast/errors.hpp"

namespace lagcast {

template <typename T>
struct Parameter {
    std::string name;  ///< stable identifier used by checkpoints
    ad::Var<T> var;    ///< leaf with requires_grad = true
};

/// Ordered registry of a model's trainable tensors. Registration order is the
/// checkpoint payload order, so it must be deterministic.
template <typename T>
class ParamStore {
public:
    ad::Var<T> add(const std::string& name, Tensor<T> init) {
        if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
        auto v = ad::Var<T>::leaf(std::move(init), true);
        index_.emplace(name, params_.size());
        params_.push_back(Parameter<T>{name, v});
        return v;
    }

    const std::vector<Parameter<T>>& items() const { return params_; }
    std::size_t size() const { return params_.size(); }

    const Parameter<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }

    std::int64_t numel() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p.var.value().numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

private:
    std::vector<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace lagcast
