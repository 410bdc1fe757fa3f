/**
 * @file unet.hpp
 * @brief Minimal U-Net: encoder/decoder with skip connections over the
 *        autodiff graph, parameters registered in a ParamStore.
 */
#pragma once

#include <string>
#include <vector>

#include "lagcast/autodiff.hpp"
#include "lagcast/params.hpp"
#include "lagcast/rng.hpp"

namespace lagcast::nets {

struct UNetConfig {
    int in_channels = 6;
    int out_channels = 1;
    int depth = 3;           ///< number of 2x down/up-sampling stages
    int base_channels = 16;  ///< channels after the first encoder block
    float leaky_slope = 0.1f;
};

/// Throws ValidationError when the configuration is structurally invalid.
void validate_unet_config(const UNetConfig& cfg);

/**
 * Encoder-decoder network with skip connections.
 *
 * Each encoder level applies two 3x3 convolutions (leaky-ReLU) and a 2x2 max
 * pool; the bottleneck applies two more; each decoder level upsamples
 * (nearest-neighbour), concatenates the matching encoder output, and applies
 * two 3x3 convolutions. A zero-initialised 1x1 head maps to the output
 * channels with no activation, so a freshly constructed network is the zero
 * function.
 *
 * Parameters are registered into the given ParamStore under
 * `<prefix>enc<l>.conv<k>.{weight,bias}`, `<prefix>bottleneck.conv<k>.*`,
 * `<prefix>dec<l>.conv<k>.*`, and `<prefix>head.*`, in construction order.
 */
template <typename T>
class UNet {
public:
    UNet(const UNetConfig& cfg, ParamStore<T>& store, const std::string& prefix, Rng& rng);

    /// Forward pass. Input must be (B, in_channels, H, W) with H and W
    /// divisible by 2^depth; otherwise a ShapeError explains the required
    /// padding.
    ad::Var<T> forward(const ad::Var<T>& x) const;

    const UNetConfig& config() const { return cfg_; }

private:
    struct ConvLayer {
        ad::Var<T> weight;
        ad::Var<T> bias;
    };

    ConvLayer make_conv(ParamStore<T>& store, const std::string& name, int ci, int co, int k,
                        bool zero_init, Rng& rng);

    UNetConfig cfg_;
    std::vector<ConvLayer> enc_;  ///< two layers per level
    ConvLayer bottleneck1_, bottleneck2_;
    std::vector<ConvLayer> dec_;  ///< two layers per level, stored deepest-first
    ConvLayer head_;
};

}  // namespace lagcast::nets
