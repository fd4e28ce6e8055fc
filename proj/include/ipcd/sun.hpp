#pragma once

#include <string>

#include "ipcd/geometry.hpp"

namespace ipcd {

// Directional sun plus constant ambient. `direction` points FROM the sun
// TO the scene, so a sun above the horizon has direction.z < 0.
struct SunConfig {
    Vec3 direction{0, 0, -1};
    Vec3 color{1, 1, 1};
    Vec3 ambient{0.25, 0.27, 0.32};
    std::string label = "custom";

    Vec3 toward_sun() const { return -direction; }
};

// Presets for the three time-of-day labels: morning | noon | evening.
SunConfig sun_from_time(const std::string& label);

// elevation/azimuth in degrees; azimuth measured from +x toward +y, z up.
SunConfig sun_from_angles(double elevation_deg, double azimuth_deg, const Vec3& color,
                          const Vec3& ambient, const std::string& label = "custom");

}  // namespace ipcd
