#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ipcd/config.hpp"
#include "ipcd/geometry.hpp"
#include "ipcd/sun.hpp"

namespace ipcd {

// Colored point cloud: positions in meters (scene frame), colors in [0,1].
struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors;

    int size() const { return int(positions.size()); }

    // Throws DataError when empty, lengths differ, positions are not finite
    // or colors fall outside [0,1].
    void validate() const;
};

// Aligned (input, albedo, shade) triple for one scene/lighting combination.
// `sun` is generation metadata and never a model input.
struct IntrinsicTriplet {
    PointCloud cloud;          // colors = input I at positions P
    std::vector<Vec3> albedo;  // A, in [0,1]
    std::vector<Vec3> shade;   // S, in [0,1]
    SunConfig sun;

    int size() const { return cloud.size(); }
};

// Centering + isotropic scaling that maps a cloud into the unit sphere.
struct NormalizationTransform {
    Vec3 center{0, 0, 0};
    double scale = 1.0;  // max radius of the original cloud (1 if degenerate)

    Vec3 apply(const Vec3& p) const { return (p - center) / scale; }
    Vec3 invert(const Vec3& p) const { return p * scale + center; }
};

// Center at centroid and scale so the max radius is exactly 1; a cloud of
// coincident points is only centered (scale stays 1).
std::pair<PointCloud, NormalizationTransform> normalize_cloud(const PointCloud& cloud);

enum class PlyEncoding { Ascii, BinaryLittleEndian };
enum class PlyColorType { Uchar, Float };

// A loaded PLY: base cloud plus any named float triples (e.g. extra channel
// "albedo" read from properties albedo_r, albedo_g, albedo_b).
struct PlyContents {
    PointCloud cloud;
    std::map<std::string, std::vector<Vec3>> extras;
};

PlyContents load_ply_contents(const std::string& path);

// Convenience wrapper dropping extras.
PointCloud load_ply(const std::string& path);

// Writes x,y,z float32 + red,green,blue (uchar or float32 per color_type),
// plus one float32 property triple <name>_r,_g,_b per extra channel.
void save_ply(const PointCloud& cloud, const std::string& path,
              PlyEncoding encoding = PlyEncoding::BinaryLittleEndian,
              const std::map<std::string, std::vector<Vec3>>& extras = {},
              PlyColorType color_type = PlyColorType::Uchar);

// --- Dataset directory layout -------------------------------------------
//
//   <root>/dataset_meta                      manifest (config format)
//   <root>/<asset>/<time>/input.ply          colors = I (float32)
//   <root>/<asset>/<time>/albedo.ply         colors = A (float32)
//   <root>/<asset>/<time>/shade.ply          colors = S (float32)
//   <root>/<asset>/<time>/meta               sun direction/color, seed
//   <root>/<asset>/<time>/pld.csv            optional cached PLD map

struct DatasetEntry {
    std::string asset;  // e.g. "asset_03"
    std::string time;   // e.g. "noon"
    std::string dir;    // <root>/<asset>/<time>
};

struct DatasetIndex {
    std::string root;
    std::vector<std::string> train_assets;
    std::vector<std::string> test_assets;
    std::vector<std::string> times;
    std::vector<DatasetEntry> entries;

    std::vector<DatasetEntry> split(const std::string& which) const;  // train|test|all
};

void write_triplet_dir(const IntrinsicTriplet& t, const std::string& dir, uint64_t seed);
IntrinsicTriplet load_triplet_dir(const std::string& dir);

void write_dataset_meta(const DatasetIndex& index);
DatasetIndex load_dataset_index(const std::string& root);

}  // namespace ipcd
