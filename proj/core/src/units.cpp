/**
 * @file units.cpp
 */
#include "lagcast/units.hpp"

#include <cmath>

namespace lagcast::units {

float rain_to_dbz_value(float rain_mm_h) {
    if (rain_mm_h < kZeroRainCutoff) return kDbzFloor;
    const double z = kMarshallPalmerA * std::pow(static_cast<double>(rain_mm_h), kMarshallPalmerB);
    return static_cast<float>(10.0 * std::log10(z));
}

float dbz_to_rain_value(float dbz) {
    if (dbz <= kDbzFloor) return 0.0f;
    const double z = std::pow(10.0, static_cast<double>(dbz) / 10.0);
    return static_cast<float>(std::pow(z / kMarshallPalmerA, 1.0 / kMarshallPalmerB));
}

ReflectivityField rain_to_dbz(const RainField& field) {
    validate_rain_field(field);
    ReflectivityField out;
    out.height = field.height;
    out.width = field.width;
    out.dx_km = field.dx_km;
    out.timestamp = field.timestamp;
    out.values.resize(field.values.size());
    for (std::size_t i = 0; i < field.values.size(); ++i) out.values[i] = rain_to_dbz_value(field.values[i]);
    return out;
}

RainField dbz_to_rain(const ReflectivityField& field) {
    for (float v : field.values)
        if (!std::isfinite(v)) throw ValidationError("dbz_to_rain: non-finite reflectivity value");
    RainField out;
    out.height = field.height;
    out.width = field.width;
    out.dx_km = field.dx_km;
    out.timestamp = field.timestamp;
    out.values.resize(field.values.size());
    for (std::size_t i = 0; i < field.values.size(); ++i) out.values[i] = dbz_to_rain_value(field.values[i]);
    return out;
}

bool is_rainy_enough(const RainField& field, float pixel_threshold, double area_fraction) {
    if (field.values.empty()) return false;
    std::size_t rainy = 0;
    for (float v : field.values)
        if (v >= pixel_threshold) ++rainy;
    return static_cast<double>(rainy) / static_cast<double>(field.values.size()) >= area_fraction;
}

}  // namespace lagcast::units
