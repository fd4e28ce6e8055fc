#pragma once

#include <string>
#include <vector>

#include "ipcd/geometry.hpp"
#include "ipcd/pcio.hpp"
#include "ipcd/sun.hpp"

namespace ipcd {

// Bounding-volume hierarchy over triangles; any-hit queries only.
class TriBvh {
  public:
    void build(const std::vector<Vec3>& vertices, const std::vector<std::array<int, 3>>& tris);

    // True iff any triangle intersects origin + t*dir with t > 0.
    bool any_hit(const Vec3& origin, const Vec3& dir) const;

    int triangle_count() const { return int(tris_.size()); }

  private:
    struct Node {
        Aabb box;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf triangle range into order_
    };

    int build_rec(int begin, int end, std::vector<Vec3>& centroids);

    std::vector<Vec3> verts_;
    std::vector<std::array<int, 3>> tris_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

// Moller-Trumbore; hit requires t > 1e-9. Shared by the BVH and the
// brute-force oracle so both sides use identical arithmetic.
bool ray_triangle_hit(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                      const Vec3& c);

struct TriMeshScene {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec3> face_albedo;   // per triangle, [0,1]
    std::vector<Vec3> face_normals;  // per triangle, unit, outward
    TriBvh bvh;

    // Generation metadata: one xy-footprint box per building (z = [0, height]).
    std::vector<Aabb> building_boxes;

    int triangle_count() const { return int(triangles.size()); }
    double triangle_area(int t) const;
    double total_area() const;
    double ground_area() const;  // area of the two ground triangles
};

struct SceneSpec {
    uint64_t seed = 1;
    int buildings_min = 2;
    int buildings_max = 5;
    double footprint_min = 4.0;   // meters, building side
    double footprint_max = 10.0;
    double height_min = 3.0;
    double height_max = 9.0;
    double ground_extent = 40.0;  // full side length of the square ground
    double gable_prob = 0.5;      // chance a building gets a gabled roof
    std::vector<Vec3> palette;    // empty -> default palette

    static std::vector<Vec3> default_palette();
};

// Ground quad plus axis-aligned box buildings with disjoint footprints.
// Deterministic per spec.seed. Throws DataError when the requested count
// cannot be placed after bounded retries.
TriMeshScene build_scene(const SceneSpec& spec);

bool raycast_occluded(const TriMeshScene& scene, const Vec3& origin, const Vec3& toward_sun);

// Lambertian direct light + constant ambient, clamped to [0,1].
Vec3 shade_at(const TriMeshScene& scene, const Vec3& point, const Vec3& normal,
              const SunConfig& sun);

// Area-weighted uniform surface sample with per-point albedo and normal.
struct SurfaceSample {
    std::vector<Vec3> positions;
    std::vector<Vec3> albedo;
    std::vector<Vec3> normals;
};

SurfaceSample sample_surface(const TriMeshScene& scene, int n_points, uint64_t seed);

std::vector<Vec3> shade_points(const TriMeshScene& scene, const SurfaceSample& sample,
                               const SunConfig& sun);

IntrinsicTriplet make_triplet(const TriMeshScene& scene, const SurfaceSample& sample,
                              const SunConfig& sun);

// sample + shade in one call; deterministic per seed.
IntrinsicTriplet sample_triplet(const TriMeshScene& scene, const SunConfig& sun, int n_points,
                                uint64_t seed);

// --- Dataset generation ----------------------------------------------------

struct GenConfig {
    uint64_t seed = 7;
    int n_assets = 16;
    int n_train = 12;  // first n_train assets train, rest test
    int n_points = 20000;
    std::vector<std::string> times = {"morning", "noon", "evening"};
    SceneSpec scene;  // seed field is overridden per asset

    static GenConfig from_config(const ConfigDoc& doc);
};

// Builds n_assets scenes, samples each surface once, shades it per time and
// writes the triplet directories plus the dataset manifest.
DatasetIndex generate_dataset(const GenConfig& cfg, const std::string& out_root);

}  // namespace ipcd
