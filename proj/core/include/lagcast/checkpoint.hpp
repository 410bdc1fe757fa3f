/**
 * @file checkpoint.hpp
 * @brief LNCKPT01 model checkpoints: JSON manifest + raw float32 payloads.
 *
 * Layout: 8-byte magic "LNCKPT01", uint32 little-endian manifest length,
 * UTF-8 JSON manifest, then one float32 little-endian payload per parameter
 * in manifest order; if optimizer state is present, the first and second
 * Adam moments follow, again one payload per parameter in manifest order.
 * The manifest is serialized with sorted keys, so a checkpoint is a pure
 * function of its contents.
 */
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lagcast/tensor.hpp"

namespace lagcast {

struct CheckpointData {
    std::string model_kind;  ///< "lagrangian" | "lagrangian-lk" | "eulerian"
    std::string config_json = "{}";  ///< architecture/config blob owned by the model layer
    std::vector<std::pair<std::string, TensorF>> params;
    bool has_optimizer = false;
    std::int64_t optimizer_step = 0;
    std::vector<TensorF> adam_m;  ///< aligned with params when has_optimizer
    std::vector<TensorF> adam_v;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace lagcast
