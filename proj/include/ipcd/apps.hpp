#pragma once

#include <optional>
#include <vector>

#include "ipcd/geometry.hpp"
#include "ipcd/pcio.hpp"

namespace ipcd {

// I' = albedo (.) new_shade, clamped to [0,1].
std::vector<Vec3> relight(const std::vector<Vec3>& albedo, const std::vector<Vec3>& new_shade);

// Region to edit: an axis-aligned box over positions, or explicit indices.
struct Selection {
    std::optional<Aabb> box;
    std::vector<int> indices;
};

// Indices covered by the selection; throws DataError when empty.
std::vector<int> resolve_selection(const PointCloud& cloud, const Selection& sel);

struct EditOp {
    std::optional<Vec3> set_color;  // replace albedo
    double hue_shift_deg = 0.0;     // rotate hue (applied when set_color is absent)
};

// Selected points edited, everything else bit-identical.
std::vector<Vec3> edit_texture(const std::vector<Vec3>& albedo, const PointCloud& cloud,
                               const Selection& sel, const EditOp& op);

Vec3 hue_shift(const Vec3& rgb, double degrees);

}  // namespace ipcd
