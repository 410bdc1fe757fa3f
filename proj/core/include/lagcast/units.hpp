/**
 * @file units.hpp
 * @brief Marshall-Palmer conversion between rain rate (mm/h) and reflectivity (dBZ).
 *
 * Z = 200 * R^1.6, dBZ = 10*log10(Z). Rates below the zero-rain cutoff map to
 * a floor sentinel of -32 dBZ, well below any echo of interest; the sentinel
 * maps back to exactly 0 mm/h.
 */
#pragma once

#include "lagcast/field.hpp"

namespace lagcast::units {

inline constexpr double kMarshallPalmerA = 200.0;
inline constexpr double kMarshallPalmerB = 1.6;
inline constexpr float kDbzFloor = -32.0f;
inline constexpr float kZeroRainCutoff = 0.01f;  ///< mm/h below which rain counts as zero

float rain_to_dbz_value(float rain_mm_h);
float dbz_to_rain_value(float dbz);

ReflectivityField rain_to_dbz(const RainField& field);
RainField dbz_to_rain(const ReflectivityField& field);

/// True iff at least `area_fraction` of the cells reach `pixel_threshold` mm/h.
bool is_rainy_enough(const RainField& field, float pixel_threshold = 0.6f,
                     double area_fraction = 0.05);

}  // namespace lagcast::units
