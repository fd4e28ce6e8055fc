#include "ipcd/apps.hpp"

#include <algorithm>
#include <cmath>

namespace ipcd {

std::vector<Vec3> relight(const std::vector<Vec3>& albedo, const std::vector<Vec3>& new_shade) {
    if (albedo.size() != new_shade.size() || albedo.empty())
        throw DataError("relight: albedo/shade size mismatch (" + std::to_string(albedo.size()) +
                        " vs " + std::to_string(new_shade.size()) + ")");
    std::vector<Vec3> out(albedo.size());
    for (size_t i = 0; i < albedo.size(); ++i) out[i] = clamp01(albedo[i].cwise(new_shade[i]));
    return out;
}

std::vector<int> resolve_selection(const PointCloud& cloud, const Selection& sel) {
    std::vector<int> out;
    if (sel.box) {
        for (int i = 0; i < cloud.size(); ++i)
            if (sel.box->contains(cloud.positions[size_t(i)])) out.push_back(i);
    }
    for (int i : sel.indices) {
        if (i < 0 || i >= cloud.size())
            throw DataError("selection: index " + std::to_string(i) + " outside cloud of " +
                            std::to_string(cloud.size()) + " points");
        out.push_back(i);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (out.empty()) throw DataError("selection: no points selected");
    return out;
}

Vec3 hue_shift(const Vec3& rgb, double degrees) {
    // RGB -> HSV, rotate hue, back.
    const double mx = std::max({rgb.x, rgb.y, rgb.z});
    const double mn = std::min({rgb.x, rgb.y, rgb.z});
    const double delta = mx - mn;
    double h = 0.0;
    if (delta > 0.0) {
        if (mx == rgb.x)
            h = std::fmod((rgb.y - rgb.z) / delta, 6.0);
        else if (mx == rgb.y)
            h = (rgb.z - rgb.x) / delta + 2.0;
        else
            h = (rgb.x - rgb.y) / delta + 4.0;
        h *= 60.0;
        if (h < 0.0) h += 360.0;
    }
    const double s = mx > 0.0 ? delta / mx : 0.0;
    const double v = mx;

    h = std::fmod(h + degrees, 360.0);
    if (h < 0.0) h += 360.0;

    const double c = v * s;
    const double x = c * (1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0));
    const double m = v - c;
    Vec3 base;
    if (h < 60)
        base = {c, x, 0};
    else if (h < 120)
        base = {x, c, 0};
    else if (h < 180)
        base = {0, c, x};
    else if (h < 240)
        base = {0, x, c};
    else if (h < 300)
        base = {x, 0, c};
    else
        base = {c, 0, x};
    return clamp01(base + Vec3{m, m, m});
}

std::vector<Vec3> edit_texture(const std::vector<Vec3>& albedo, const PointCloud& cloud,
                               const Selection& sel, const EditOp& op) {
    if (albedo.size() != size_t(cloud.size()))
        throw DataError("edit_texture: albedo/cloud size mismatch");
    std::vector<int> idx = resolve_selection(cloud, sel);
    std::vector<Vec3> out = albedo;
    for (int i : idx)
        out[size_t(i)] = op.set_color ? clamp01(*op.set_color)
                                      : hue_shift(albedo[size_t(i)], op.hue_shift_deg);
    return out;
}

}  // namespace ipcd
