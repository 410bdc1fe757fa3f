/**
 * @file advection.cpp
 */
#include "lagcast/advection.hpp"

#include <string>

#include "lagcast/errors.hpp"

namespace lagcast::advect {

using ad::Var;

template <typename T>
Var<T> warp_coords(const Var<T>& motion) {
    const Shape s = motion.shape();
    if (s.c != 2) throw ShapeError("warp_coords: motion must have 2 channels, got " + s.str());
    Tensor<T> grid(s);
    for (int b = 0; b < s.b; ++b) {
        T* gx = grid.plane(b, 0);
        T* gy = grid.plane(b, 1);
        for (int r = 0; r < s.h; ++r)
            for (int c = 0; c < s.w; ++c) {
                gx[r * s.w + c] = static_cast<T>(c);
                gy[r * s.w + c] = static_cast<T>(r);
            }
    }
    return ad::sub(Var<T>::constant(std::move(grid)), motion);
}

template <typename T>
Var<T> extrapolate(const Var<T>& field, const Var<T>& motion, int steps) {
    if (steps < 0) throw ValidationError("extrapolate: steps must be >= 0, got " + std::to_string(steps));
    const Shape fs = field.shape(), ms = motion.shape();
    if (ms.c != 2 || fs.b != ms.b || fs.h != ms.h || fs.w != ms.w)
        throw ShapeError("extrapolate: field " + fs.str() + " and motion " + ms.str() +
                         " do not share geometry");
    if (steps == 0) return field;
    Var<T> coords = warp_coords(motion);
    Var<T> out = field;
    for (int t = 0; t < steps; ++t) out = ad::grid_sample_bilinear(out, coords);
    return out;
}

template <typename T>
Var<T> to_lagrangian(const Var<T>& frames, const Var<T>& motion, int reference) {
    const Shape fs = frames.shape();
    const int n = fs.c;
    if (reference != n && reference != n + 1)
        throw ValidationError("to_lagrangian: reference must be " + std::to_string(n) + " or " +
                              std::to_string(n + 1) + " for " + std::to_string(n) + " frames, got " +
                              std::to_string(reference));
    const Shape ms = motion.shape();
    if (ms.c != 2 || fs.b != ms.b || fs.h != ms.h || fs.w != ms.w)
        throw ShapeError("to_lagrangian: frames " + fs.str() + " and motion " + ms.str() +
                         " do not share geometry");
    std::vector<Var<T>> warped;
    warped.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        warped.push_back(extrapolate(ad::slice_channels(frames, i, i + 1), motion, reference - 1 - i));
    return ad::concat(warped);
}

template <typename T>
Var<T> temporal_difference(const Var<T>& stack) {
    const int n = stack.shape().c;
    if (n < 2)
        throw ShapeError("temporal_difference: need at least 2 frames, got " + std::to_string(n));
    return ad::sub(ad::slice_channels(stack, 1, n), ad::slice_channels(stack, 0, n - 1));
}

template <typename T>
Var<T> divergence_penalty(const Var<T>& motion, T dx) {
    const Shape s = motion.shape();
    if (s.h < 3 || s.w < 3)
        throw ShapeError("divergence_penalty: needs at least a 3x3 grid, got " + s.str());
    Var<T> div = ad::divergence(motion, dx);
    return ad::mean_all(ad::abs(ad::crop(div, 1, 1, s.h - 2, s.w - 2)));
}

#define LAGCAST_INSTANTIATE_ADVECT(T)                                                    \
    template Var<T> warp_coords<T>(const Var<T>&);                                       \
    template Var<T> extrapolate<T>(const Var<T>&, const Var<T>&, int);                   \
    template Var<T> to_lagrangian<T>(const Var<T>&, const Var<T>&, int);                 \
    template Var<T> temporal_difference<T>(const Var<T>&);                  \
    template Var<T> divergence_penalty<T>(const Var<T>&, T);

LAGCAST_INSTANTIATE_ADVECT(float)
LAGCAST_INSTANTIATE_ADVECT(double)

#undef LAGCAST_INSTANTIATE_ADVECT

}  // namespace lagcast::advect
