/**
 * @file field.hpp
 * @brief Radar field data model: rain-rate grids, reflectivity grids, sequences.
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lagcast/errors.hpp"

namespace lagcast {

/// 2-D rain-rate grid in mm/h. Values are float32 so that file round trips
/// are bit-exact.
struct RainField {
    int height = 0;
    int width = 0;
    double dx_km = 1.0;          ///< grid spacing
    std::int64_t timestamp = 0;  ///< integer index in 5-minute steps
    std::vector<float> values;   ///< row-major, height*width

    float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return values.size(); }
};

/// 2-D reflectivity grid in dBZ with the same geometry conventions.
struct ReflectivityField {
    int height = 0;
    int width = 0;
    double dx_km = 1.0;
    std::int64_t timestamp = 0;
    std::vector<float> values;

    float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
};

/// Time-ordered stack of equally spaced fields sharing one geometry.
struct FieldSequence {
    std::vector<RainField> fields;
    int step_minutes = 5;
    std::string units = "mm/h";  ///< "mm/h" or "dBZ" (values live in RainField storage either way)

    std::size_t size() const { return fields.size(); }
    bool empty() const { return fields.empty(); }
    const RainField& operator[](std::size_t i) const { return fields[i]; }
    RainField& operator[](std::size_t i) { return fields[i]; }
};

/// Throws ValidationError unless the field is finite, non-negative and at
/// least 8x8 with a matching value count.
void validate_rain_field(const RainField& f);

/// Throws ValidationError unless timestamps are strictly consecutive and all
/// fields share geometry.
void validate_sequence(const FieldSequence& seq);

}  // namespace lagcast
