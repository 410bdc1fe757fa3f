/**
 * @file field.cpp
 */
#include "lagcast/field.hpp"

#include <cmath>

namespace lagcast {

void validate_rain_field(const RainField& f) {
    if (f.height < 8 || f.width < 8)
        throw ValidationError("rain field must be at least 8x8, got " + std::to_string(f.height) + "x" +
                              std::to_string(f.width));
    if (f.values.size() != static_cast<std::size_t>(f.height) * static_cast<std::size_t>(f.width))
        throw ValidationError("rain field value count does not match geometry");
    for (float v : f.values) {
        if (!std::isfinite(v)) throw ValidationError("rain field contains a non-finite value");
        if (v < 0.0f) throw ValidationError("rain field contains a negative rate");
    }
}

void validate_sequence(const FieldSequence& seq) {
    for (std::size_t i = 0; i < seq.fields.size(); ++i) {
        const RainField& f = seq.fields[i];
        if (i > 0) {
            const RainField& p = seq.fields[i - 1];
            if (f.height != p.height || f.width != p.width || f.dx_km != p.dx_km)
                throw ValidationError("sequence geometry changes at frame " + std::to_string(i));
            if (f.timestamp != p.timestamp + 1)
                throw ValidationError("sequence timestamps not consecutive at frame " + std::to_string(i));
        }
    }
}

}  // namespace lagcast
