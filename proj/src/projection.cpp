#include "ipcd/projection.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace ipcd {

HemisphereGrid HemisphereGrid::with_step(double theta_step_deg, double phi_step_deg,
                                         double theta_max_deg) {
    if (theta_step_deg <= 0 || phi_step_deg <= 0)
        throw ConfigError("hemisphere grid: steps must be positive");
    HemisphereGrid g;
    for (double t = 0.0; t <= theta_max_deg + 1e-9; t += theta_step_deg) g.thetas.push_back(t);
    for (double p = 0.0; p < 360.0 - 1e-9; p += phi_step_deg) g.phis.push_back(p);
    return g;
}

std::vector<double> HemisphereGrid::row_area_weights() const {
    // Each row covers the band [theta - dt/2, theta + dt/2] clipped at 0;
    // band area on the unit sphere is cos(lo) - cos(hi).
    std::vector<double> w(thetas.size());
    double dt = thetas.size() > 1 ? thetas[1] - thetas[0] : 10.0;
    double sum = 0.0;
    for (size_t i = 0; i < thetas.size(); ++i) {
        double lo = std::max(0.0, thetas[i] - dt * 0.5);
        double hi = thetas[i] + dt * 0.5;
        w[i] = std::cos(deg2rad(lo)) - std::cos(deg2rad(hi));
        sum += w[i];
    }
    for (double& v : w) v *= double(w.size()) / sum;
    return w;
}

Mat3 rotation_for(double theta_deg, double phi_deg) {
    return Mat3::rot_x(deg2rad(theta_deg)) * Mat3::rot_z(deg2rad(phi_deg));
}

Vec3 view_direction(double theta_deg, double phi_deg) {
    // R^T e_z for R = R_x(theta) R_z(phi).
    double t = deg2rad(theta_deg), p = deg2rad(phi_deg);
    return {std::sin(t) * std::sin(p), std::sin(t) * std::cos(p), std::cos(t)};
}

SplatImage render_ortho(const PointCloud& cloud, const Mat3& R, int image_size,
                        double point_size) {
    if (image_size < 8) throw ConfigError("render_ortho: image_size must be >= 8");
    if (point_size <= 0.0) throw ConfigError("render_ortho: point_size must be positive");

    SplatImage img;
    img.width = img.height = image_size;
    const size_t npix = size_t(image_size) * size_t(image_size);
    img.pixels.assign(npix, Vec3{0, 0, 0});
    img.depth.assign(npix, std::numeric_limits<double>::infinity());
    img.covered.assign(npix, 0);

    const double half = image_size * 0.5;  // pixels per NDC unit
    const int n = cloud.size();
    for (int i = 0; i < n; ++i) {
        const Vec3 q = R * cloud.positions[size_t(i)];
        const Vec3& c = cloud.colors[size_t(i)];
        // NDC [-1,1] -> pixel center coordinates.
        const double px = (q.x + 1.0) * half;
        const double py = (q.y + 1.0) * half;
        const double pr = point_size * half;

        const int x_lo = std::max(0, int(std::floor(px - pr - 0.5)));
        const int x_hi = std::min(image_size - 1, int(std::floor(px + pr + 0.5)));
        const int y_lo = std::max(0, int(std::floor(py - pr - 0.5)));
        const int y_hi = std::min(image_size - 1, int(std::floor(py + pr + 0.5)));

        const int cx = int(std::floor(px));
        const int cy = int(std::floor(py));

        for (int y = y_lo; y <= y_hi; ++y) {
            for (int x = x_lo; x <= x_hi; ++x) {
                const double dx = (x + 0.5) - px;
                const double dy = (y + 0.5) - py;
                const bool in_disc = dx * dx + dy * dy <= pr * pr;
                // Tiny splats always cover the pixel that contains the point.
                if (!in_disc && !(x == cx && y == cy)) continue;
                const size_t pi = size_t(img.index(x, y));
                if (!img.covered[pi]) {
                    img.covered[pi] = 1;
                    img.depth[pi] = q.z;
                    img.pixels[pi] = c;
                } else if (q.z > img.depth[pi]) {
                    img.depth[pi] = q.z;
                    img.pixels[pi] = c;
                } else if (q.z == img.depth[pi]) {
                    // Exact z tie: keep the lexicographically larger color so
                    // the result is independent of point order.
                    const Vec3& old = img.pixels[pi];
                    if (c.x > old.x || (c.x == old.x && (c.y > old.y ||
                        (c.y == old.y && c.z > old.z))))
                        img.pixels[pi] = c;
                }
            }
        }
    }
    return img;
}

std::pair<Vec3, double> pld_value(const SplatImage& img) {
    Vec3 sum{0, 0, 0};
    long covered = 0;
    const size_t npix = img.pixels.size();
    for (size_t i = 0; i < npix; ++i) {
        if (!img.covered[i]) continue;
        sum += img.pixels[i];
        ++covered;
    }
    if (covered == 0) return {Vec3{0, 0, 0}, 0.0};
    return {sum / double(covered), double(covered) / double(npix)};
}

PLDMap compute_pld(const PointCloud& cloud, const HemisphereGrid& grid, int image_size,
                   double point_size) {
    PLDMap map;
    map.grid = grid;
    map.values.resize(size_t(grid.directions()));
    map.coverage.resize(size_t(grid.directions()));
    for (int r = 0; r < grid.rows(); ++r) {
        for (int c = 0; c < grid.cols(); ++c) {
            const Mat3 R = rotation_for(grid.thetas[size_t(r)], grid.phis[size_t(c)]);
            const SplatImage img = render_ortho(cloud, R, image_size, point_size);
            auto [mean, cov] = pld_value(img);
            map.values[size_t(map.index(r, c))] = mean;
            map.coverage[size_t(map.index(r, c))] = cov;
        }
    }
    return map;
}

std::vector<double> pld_luma(const PLDMap& map) {
    std::vector<double> out(map.values.size());
    for (size_t i = 0; i < map.values.size(); ++i) out[i] = luma(map.values[i]);
    return out;
}

void save_pld_csv(const PLDMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("pld: cannot write '" + path + "'");
    out << "theta,phi,r,g,b,coverage\n";
    char buf[256];
    for (int r = 0; r < map.grid.rows(); ++r)
        for (int c = 0; c < map.grid.cols(); ++c) {
            const Vec3& v = map.values[size_t(map.index(r, c))];
            std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.17g,%.17g,%.17g,%.17g\n",
                          map.grid.thetas[size_t(r)], map.grid.phis[size_t(c)], v.x, v.y, v.z,
                          map.coverage[size_t(map.index(r, c))]);
            out << buf;
        }
}

PLDMap load_pld_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("pld: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw FormatError("pld csv: empty file " + path);

    std::vector<double> thetas, phis;
    std::vector<Vec3> values;
    std::vector<double> coverage;
    auto push_unique = [](std::vector<double>& v, double x) {
        for (double e : v)
            if (e == x) return;
        v.push_back(x);
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        double t, p, r, g, b, cov;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf", &t, &p, &r, &g, &b, &cov) != 6)
            throw FormatError("pld csv: bad row '" + line + "' in " + path);
        push_unique(thetas, t);
        push_unique(phis, p);
        values.push_back({r, g, b});
        coverage.push_back(cov);
    }
    PLDMap map;
    map.grid.thetas = thetas;
    map.grid.phis = phis;
    if (values.size() != size_t(map.grid.directions()))
        throw FormatError("pld csv: row count does not match grid in " + path);
    map.values = std::move(values);
    map.coverage = std::move(coverage);
    return map;
}

void save_pld_heatmap_png(const PLDMap& map, const std::string& path) {
    const int w = map.grid.cols(), h = map.grid.rows();
    std::vector<double> lum = pld_luma(map);
    double maxv = 0.0;
    for (double v : lum) maxv = std::max(maxv, v);
    if (maxv <= 0.0) maxv = 1.0;
    std::vector<uint8_t> gray(size_t(w) * size_t(h));
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            gray[size_t(r) * size_t(w) + size_t(c)] =
                uint8_t(std::lround(255.0 * lum[size_t(map.index(r, c))] / maxv));

    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw DataError("png: cannot write '" + path + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw DataError("png: libpng failure writing '" + path + "'");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < h; ++r)
        png_write_row(png, reinterpret_cast<png_bytep>(&gray[size_t(r) * size_t(w)]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace ipcd
