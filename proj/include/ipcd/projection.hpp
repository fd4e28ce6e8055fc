#pragma once

#include <string>
#include <vector>

#include "ipcd/geometry.hpp"
#include "ipcd/pcio.hpp"

namespace ipcd {

// Upper-hemisphere view grid. theta is the angle from the zenith (0 = top
// view), phi the in-plane azimuth of the rotation.
struct HemisphereGrid {
    std::vector<double> thetas;  // degrees, strictly increasing, start at 0
    std::vector<double> phis;    // degrees, [0, 360) without duplicates

    static HemisphereGrid with_step(double theta_step_deg = 10.0, double phi_step_deg = 10.0,
                                    double theta_max_deg = 80.0);

    int rows() const { return int(thetas.size()); }
    int cols() const { return int(phis.size()); }
    int directions() const { return rows() * cols(); }  // K

    // Band solid-angle weight of a row, normalized to mean 1 over the grid.
    std::vector<double> row_area_weights() const;
};

// R(theta, phi) = R_x(theta) * R_z(phi); the camera stays at +z looking -z.
Mat3 rotation_for(double theta_deg, double phi_deg);

// Camera axis pulled back into the un-rotated scene frame: the world
// direction a grid cell views the cloud from.
Vec3 view_direction(double theta_deg, double phi_deg);

struct SplatImage {
    int width = 0, height = 0;
    std::vector<Vec3> pixels;    // row-major, (0,0,0) where uncovered
    std::vector<double> depth;   // rotated z where covered, +inf sentinel otherwise
    std::vector<uint8_t> covered;

    int index(int x, int y) const { return y * width + x; }
};

// Orthographic point-splat render of a normalized cloud rotated by R.
// Each point covers a disc of NDC radius point_size; the largest rotated z
// (nearest the +z camera) wins a pixel. Throws ConfigError for
// image_size < 8.
SplatImage render_ortho(const PointCloud& cloud, const Mat3& R, int image_size,
                        double point_size);

// Mean color over covered pixels and coverage fraction; empty view yields
// ((0,0,0), 0).
std::pair<Vec3, double> pld_value(const SplatImage& img);

// Per-direction mean color over the hemisphere grid.
struct PLDMap {
    HemisphereGrid grid;
    std::vector<Vec3> values;      // rows x cols, row-major
    std::vector<double> coverage;  // rows x cols

    int index(int row, int col) const { return row * grid.cols() + col; }
};

PLDMap compute_pld(const PointCloud& normalized_cloud, const HemisphereGrid& grid,
                   int image_size = 64, double point_size = 0.02);

// Rec.709 luma per grid cell.
std::vector<double> pld_luma(const PLDMap& map);

// CSV with header theta,phi,r,g,b,coverage — one row per direction.
void save_pld_csv(const PLDMap& map, const std::string& path);
PLDMap load_pld_csv(const std::string& path);

// 8-bit grayscale PNG of the luma field (cols = phi, rows = theta),
// normalized to the map's max luma.
void save_pld_heatmap_png(const PLDMap& map, const std::string& path);

}  // namespace ipcd
