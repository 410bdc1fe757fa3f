/**
 * @file stack_io.hpp
 * @brief RFSTACK1 field-stack files.
 *
 * Layout: 8-byte magic "RFSTACK1", uint32 little-endian header length, UTF-8
 * JSON header {frames, height, width, dx_km, step_minutes, units, t0_index},
 * then frames x height x width float32 little-endian values, row-major,
 * frame-major. Extension keys used by derived artifacts: "channels" (> 1 for
 * multi-channel frames such as motion truth), "window" (frames grouped into
 * fixed-length training windows) and "window_t0" (archive index of each
 * window's first frame).
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lagcast/field.hpp"

namespace lagcast {

struct StackHeader {
    std::int64_t frames = 0;
    int height = 0;
    int width = 0;
    double dx_km = 1.0;
    int step_minutes = 5;
    std::string units = "mm/h";  ///< "mm/h", "dBZ" or "px/step"
    std::int64_t t0_index = 0;
    // extensions (serialized only when meaningful)
    int channels = 1;
    int window = 0;
    std::vector<std::int64_t> window_t0;

    std::int64_t value_count() const {
        return frames * channels * static_cast<std::int64_t>(height) * width;
    }
};

/// A stack in raw form: header plus the full payload, frame-major.
struct RawStack {
    StackHeader header;
    std::vector<float> payload;
};

void write_raw_stack(const std::string& path, const RawStack& stack);
RawStack read_raw_stack(const std::string& path);

/// Single-channel convenience wrappers used for plain field sequences.
void write_stack(const FieldSequence& seq, const std::string& path);
FieldSequence read_stack(const std::string& path);

}  // namespace lagcast
