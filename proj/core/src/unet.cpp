/// @file unet.cpp
/// @brief U-Net construction (He initialisation, zero head) and forward pass.

#include "lagcast/unet.hpp"

#include <cmath>
#include <string>

#include "lagcast/errors.hpp"

namespace lagcast::nets {

void validate_unet_config(const UNetConfig& cfg) {
    if (cfg.in_channels < 1 || cfg.out_channels < 1)
        throw ValidationError("UNetConfig: channel counts must be positive");
    if (cfg.depth < 1)
        throw ValidationError("UNetConfig: depth must be at least 1");
    if (cfg.base_channels < 1)
        throw ValidationError("UNetConfig: base_channels must be positive");
    if (!(cfg.leaky_slope >= 0.0f && cfg.leaky_slope < 1.0f))
        throw ValidationError("UNetConfig: leaky_slope must lie in [0, 1)");
}

template <typename T>
typename UNet<T>::ConvLayer UNet<T>::make_conv(ParamStore<T>& store, const std::string& name,
                                               int ci, int co, int k, bool zero_init, Rng& rng) {
    Tensor<T> w(Shape{co, ci, k, k});
    Tensor<T> b(Shape{1, co, 1, 1});
    if (!zero_init) {
        // He initialisation: std = sqrt(2 / fan_in) suits the leaky-ReLU blocks.
        const T stddev = std::sqrt(T(2) / (T(ci) * T(k) * T(k)));
        for (auto& v : w.vec()) v = static_cast<T>(rng.gaussian()) * stddev;
    }
    ConvLayer layer;
    layer.weight = store.add(name + ".weight", w);
    layer.bias = store.add(name + ".bias", b);
    return layer;
}

template <typename T>
UNet<T>::UNet(const UNetConfig& cfg, ParamStore<T>& store, const std::string& prefix, Rng& rng)
    : cfg_(cfg) {
    validate_unet_config(cfg);

    int ch = cfg.base_channels;
    int in = cfg.in_channels;
    for (int level = 0; level < cfg.depth; ++level) {
        const std::string base = prefix + "enc" + std::to_string(level);
        enc_.push_back(make_conv(store, base + ".conv1", in, ch, 3, false, rng));
        enc_.push_back(make_conv(store, base + ".conv2", ch, ch, 3, false, rng));
        in = ch;
        ch *= 2;
    }
    bottleneck1_ = make_conv(store, prefix + "bottleneck.conv1", in, ch, 3, false, rng);
    bottleneck2_ = make_conv(store, prefix + "bottleneck.conv2", ch, ch, 3, false, rng);

    for (int level = cfg.depth - 1; level >= 0; --level) {
        const int skip_ch = cfg.base_channels << level;  // encoder output at this level
        const int up_ch = skip_ch * 2;                   // channels arriving from below
        const std::string base = prefix + "dec" + std::to_string(level);
        dec_.push_back(make_conv(store, base + ".conv1", up_ch + skip_ch, skip_ch, 3, false, rng));
        dec_.push_back(make_conv(store, base + ".conv2", skip_ch, skip_ch, 3, false, rng));
    }
    head_ = make_conv(store, prefix + "head", cfg.base_channels, cfg.out_channels, 1, true, rng);
}

template <typename T>
ad::Var<T> UNet<T>::forward(const ad::Var<T>& x) const {
    const Shape s = x.shape();
    if (s.c != cfg_.in_channels)
        throw ShapeError("UNet: expected " + std::to_string(cfg_.in_channels) +
                         " input channels, got " + std::to_string(s.c));
    const int divisor = 1 << cfg_.depth;
    if (s.h % divisor != 0 || s.w % divisor != 0)
        throw ShapeError("UNet: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " is not divisible by " + std::to_string(divisor) +
                         "; pad the input to a multiple of " + std::to_string(divisor));

    const T slope = static_cast<T>(cfg_.leaky_slope);
    auto block = [&](ad::Var<T> h, const ConvLayer& a, const ConvLayer& b) {
        h = ad::leaky_relu(ad::conv2d(h, a.weight, a.bias, 1, 1), slope);
        h = ad::leaky_relu(ad::conv2d(h, b.weight, b.bias, 1, 1), slope);
        return h;
    };

    std::vector<ad::Var<T>> skips;
    skips.reserve(static_cast<std::size_t>(cfg_.depth));
    ad::Var<T> h = x;
    for (int level = 0; level < cfg_.depth; ++level) {
        h = block(h, enc_[2 * level], enc_[2 * level + 1]);
        skips.push_back(h);
        h = ad::max_pool2d(h);
    }
    h = block(h, bottleneck1_, bottleneck2_);
    for (int level = cfg_.depth - 1; level >= 0; --level) {
        h = ad::upsample_nearest2(h);
        h = ad::concat<T>({h, skips[static_cast<std::size_t>(level)]});
        const std::size_t di = static_cast<std::size_t>(cfg_.depth - 1 - level);
        h = block(h, dec_[2 * di], dec_[2 * di + 1]);
    }
    return ad::conv2d(h, head_.weight, head_.bias, 1, 0);
}

template class UNet<float>;
template class UNet<double>;

}  // namespace lagcast::nets
