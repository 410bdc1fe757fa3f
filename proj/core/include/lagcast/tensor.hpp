/**
 * @file tensor.hpp
 * @brief Dense 4-D (batch, channel, height, width) array used by the autodiff graph.
 */
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "lagcast/errors.hpp"

namespace lagcast {

struct Shape {
    int b = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(b) * c * h * w;
    }
    std::int64_t spatial() const { return static_cast<std::int64_t>(h) * w; }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        return "(" + std::to_string(b) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape_(s), data_(checked_size(s), fill) {}
    Tensor(Shape s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
        if (data_.size() != checked_size(s))
            throw ShapeError("Tensor: data size " + std::to_string(data_.size()) +
                             " does not match shape " + s.str());
    }

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return shape_.numel(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& at(int b, int c, int h, int w) { return data_[idx(b, c, h, w)]; }
    const T& at(int b, int c, int h, int w) const { return data_[idx(b, c, h, w)]; }

    std::size_t idx(int b, int c, int h, int w) const {
        return static_cast<std::size_t>(((static_cast<std::int64_t>(b) * shape_.c + c) * shape_.h + h) * shape_.w + w);
    }

    /// Pointer to the start of one (b, c) plane.
    T* plane(int b, int c) { return data_.data() + idx(b, c, 0, 0); }
    const T* plane(int b, int c) const { return data_.data() + idx(b, c, 0, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out.vec()[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    static std::size_t checked_size(const Shape& s) {
        if (s.b <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0)
            throw ShapeError("Tensor: non-positive dimension " + s.str());
        return static_cast<std::size_t>(s.numel());
    }

    Shape shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace lagcast
