#include "ipcd/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

namespace ipcd {

// --- Sun -------------------------------------------------------------------

SunConfig sun_from_angles(double elevation_deg, double azimuth_deg, const Vec3& color,
                          const Vec3& ambient, const std::string& label) {
    double e = deg2rad(elevation_deg), a = deg2rad(azimuth_deg);
    Vec3 toward{std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)};
    SunConfig sun;
    sun.direction = -toward;
    sun.color = color;
    sun.ambient = ambient;
    sun.label = label;
    return sun;
}

SunConfig sun_from_time(const std::string& label) {
    const Vec3 ambient{0.25, 0.27, 0.32};
    if (label == "morning") return sun_from_angles(15.0, 90.0, {1.00, 0.85, 0.65}, ambient, label);
    if (label == "noon") return sun_from_angles(60.0, 180.0, {1.0, 1.0, 1.0}, ambient, label);
    if (label == "evening") return sun_from_angles(12.0, 270.0, {1.00, 0.75, 0.55}, ambient, label);
    throw ConfigError("sun_from_time: unknown label '" + label +
                      "' (valid: morning, noon, evening)");
}

// --- Ray casting -------------------------------------------------------------

bool ray_triangle_hit(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                      const Vec3& c) {
    const Vec3 e1 = b - a, e2 = c - a;
    const Vec3 pv = cross(dir, e2);
    const double det = dot(e1, pv);
    if (std::abs(det) < 1e-12) return false;
    const double inv = 1.0 / det;
    const Vec3 tv = origin - a;
    const double u = dot(tv, pv) * inv;
    if (u < 0.0 || u > 1.0) return false;
    const Vec3 qv = cross(tv, e1);
    const double v = dot(dir, qv) * inv;
    if (v < 0.0 || u + v > 1.0) return false;
    const double t = dot(e2, qv) * inv;
    return t > 1e-9;
}

namespace {

bool ray_box_hit(const Vec3& origin, const Vec3& inv_dir, const Aabb& box) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::max();
    for (int k = 0; k < 3; ++k) {
        double lo = (box.lo[k] - origin[k]) * inv_dir[k];
        double hi = (box.hi[k] - origin[k]) * inv_dir[k];
        if (inv_dir[k] < 0.0) std::swap(lo, hi);
        t0 = std::max(t0, lo);
        t1 = std::min(t1, hi);
        if (t0 > t1) return false;
    }
    return true;
}

}  // namespace

void TriBvh::build(const std::vector<Vec3>& vertices,
                   const std::vector<std::array<int, 3>>& tris) {
    verts_ = vertices;
    tris_ = tris;
    order_.resize(tris.size());
    for (size_t i = 0; i < tris.size(); ++i) order_[i] = int(i);
    nodes_.clear();
    if (tris.empty()) return;
    std::vector<Vec3> centroids(tris.size());
    for (size_t t = 0; t < tris.size(); ++t)
        centroids[t] =
            (verts_[size_t(tris[t][0])] + verts_[size_t(tris[t][1])] + verts_[size_t(tris[t][2])]) / 3.0;
    build_rec(0, int(tris.size()), centroids);
}

int TriBvh::build_rec(int begin, int end, std::vector<Vec3>& centroids) {
    int id = int(nodes_.size());
    nodes_.push_back(Node{});
    Aabb box;
    for (int i = begin; i < end; ++i) {
        const auto& t = tris_[size_t(order_[size_t(i)])];
        box.expand(verts_[size_t(t[0])]);
        box.expand(verts_[size_t(t[1])]);
        box.expand(verts_[size_t(t[2])]);
    }
    nodes_[size_t(id)].box = box;
    if (end - begin <= 4) {
        nodes_[size_t(id)].begin = begin;
        nodes_[size_t(id)].end = end;
        return id;
    }
    Aabb cbox;
    for (int i = begin; i < end; ++i) cbox.expand(centroids[size_t(order_[size_t(i)])]);
    Vec3 ext = cbox.hi - cbox.lo;
    int axis = 0;
    if (ext.y > ext.x) axis = 1;
    if (ext.z > ext[axis]) axis = 2;
    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         double ca = centroids[size_t(a)][axis], cb = centroids[size_t(b)][axis];
                         return ca < cb || (ca == cb && a < b);
                     });
    int left = build_rec(begin, mid, centroids);
    int right = build_rec(mid, end, centroids);
    nodes_[size_t(id)].left = left;
    nodes_[size_t(id)].right = right;
    nodes_[size_t(id)].begin = nodes_[size_t(id)].end = 0;
    return id;
}

bool TriBvh::any_hit(const Vec3& origin, const Vec3& dir) const {
    if (nodes_.empty()) return false;
    const Vec3 inv_dir{1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z};
    int stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const Node& nd = nodes_[size_t(stack[--top])];
        if (!ray_box_hit(origin, inv_dir, nd.box)) continue;
        if (nd.left < 0) {
            for (int i = nd.begin; i < nd.end; ++i) {
                const auto& t = tris_[size_t(order_[size_t(i)])];
                if (ray_triangle_hit(origin, dir, verts_[size_t(t[0])], verts_[size_t(t[1])],
                                     verts_[size_t(t[2])]))
                    return true;
            }
        } else {
            stack[top++] = nd.left;
            stack[top++] = nd.right;
        }
    }
    return false;
}

// --- Scene construction ------------------------------------------------------

double TriMeshScene::triangle_area(int t) const {
    const auto& tr = triangles[size_t(t)];
    return 0.5 * norm(cross(vertices[size_t(tr[1])] - vertices[size_t(tr[0])],
                            vertices[size_t(tr[2])] - vertices[size_t(tr[0])]));
}

double TriMeshScene::total_area() const {
    double a = 0.0;
    for (int t = 0; t < triangle_count(); ++t) a += triangle_area(t);
    return a;
}

double TriMeshScene::ground_area() const {
    // Ground triangles are emitted first.
    double a = 0.0;
    for (int t = 0; t < std::min(2, triangle_count()); ++t) a += triangle_area(t);
    return a;
}

std::vector<Vec3> SceneSpec::default_palette() {
    return {
        {0.78, 0.42, 0.32},  // brick
        {0.85, 0.80, 0.66},  // sandstone
        {0.72, 0.74, 0.78},  // light gray
        {0.45, 0.53, 0.66},  // blue gray
        {0.88, 0.86, 0.82},  // off white
        {0.55, 0.47, 0.40},  // brown
        {0.62, 0.70, 0.55},  // sage
        {0.40, 0.40, 0.42},  // slate
    };
}

namespace {

struct SceneBuilder {
    TriMeshScene scene;

    int add_vertex(const Vec3& v) {
        scene.vertices.push_back(v);
        return int(scene.vertices.size()) - 1;
    }

    // Winding must be CCW seen from the outward side; the stored normal is
    // taken from the geometry and asserted against `expected`.
    void add_tri(int a, int b, int c, const Vec3& albedo, const Vec3& expected) {
        scene.triangles.push_back({a, b, c});
        Vec3 n = normalized(cross(scene.vertices[size_t(b)] - scene.vertices[size_t(a)],
                                  scene.vertices[size_t(c)] - scene.vertices[size_t(a)]));
        if (dot(n, expected) < 0.99)
            throw NumericalError("build_scene: face winding does not match expected normal");
        scene.face_normals.push_back(n);
        scene.face_albedo.push_back(albedo);
    }

    void add_quad(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d, const Vec3& albedo,
                  const Vec3& expected) {
        int ia = add_vertex(a), ib = add_vertex(b), ic = add_vertex(c), id = add_vertex(d);
        add_tri(ia, ib, ic, albedo, expected);
        add_tri(ia, ic, id, albedo, expected);
    }
};

}  // namespace

TriMeshScene build_scene(const SceneSpec& spec) {
    if (spec.buildings_min > spec.buildings_max || spec.buildings_min < 0)
        throw ConfigError("build_scene: invalid building count range");
    if (spec.footprint_min > spec.footprint_max || spec.footprint_min <= 0)
        throw ConfigError("build_scene: invalid footprint range");
    if (spec.height_min > spec.height_max || spec.height_min <= 0)
        throw ConfigError("build_scene: invalid height range");

    std::vector<Vec3> palette = spec.palette.empty() ? SceneSpec::default_palette() : spec.palette;
    Rng rng(spec.seed);

    SceneBuilder sb;
    const double g = spec.ground_extent * 0.5;
    const Vec3 ground_color = palette[rng.uniform_int(palette.size())];
    sb.add_quad({-g, -g, 0}, {g, -g, 0}, {g, g, 0}, {-g, g, 0}, ground_color, {0, 0, 1});

    const int want = spec.buildings_min +
                     int(rng.uniform_int(uint64_t(spec.buildings_max - spec.buildings_min + 1)));
    const double margin = 1.0;  // keep walls off the ground edge
    const double gap = 0.8;     // min clearance between footprints

    std::vector<Aabb> placed;
    for (int b = 0; b < want; ++b) {
        bool ok = false;
        for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
            double w = rng.uniform(spec.footprint_min, spec.footprint_max);
            double d = rng.uniform(spec.footprint_min, spec.footprint_max);
            double h = rng.uniform(spec.height_min, spec.height_max);
            double span_x = g - margin - w * 0.5, span_y = g - margin - d * 0.5;
            if (span_x <= 0 || span_y <= 0) continue;
            double cx = rng.uniform(-span_x, span_x);
            double cy = rng.uniform(-span_y, span_y);
            Aabb fp;
            fp.expand({cx - w * 0.5, cy - d * 0.5, 0.0});
            fp.expand({cx + w * 0.5, cy + d * 0.5, h});
            Aabb padded = fp;
            padded.lo -= Vec3{gap, gap, 0};
            padded.hi += Vec3{gap, gap, 0};
            bool overlap = false;
            for (const Aabb& other : placed)
                if (padded.overlaps(other)) {
                    overlap = true;
                    break;
                }
            if (overlap) continue;

            const bool gabled = rng.uniform() < spec.gable_prob;
            const Vec3 wall_base[4] = {palette[rng.uniform_int(palette.size())],
                                       palette[rng.uniform_int(palette.size())],
                                       palette[rng.uniform_int(palette.size())],
                                       palette[rng.uniform_int(palette.size())]};
            const Vec3 roof_color = palette[rng.uniform_int(palette.size())];

            const double x0 = cx - w * 0.5, x1 = cx + w * 0.5;
            const double y0 = cy - d * 0.5, y1 = cy + d * 0.5;
            // Walls, outward normals -y, +x, +y, -x.
            sb.add_quad({x0, y0, 0}, {x1, y0, 0}, {x1, y0, h}, {x0, y0, h}, wall_base[0],
                        {0, -1, 0});
            sb.add_quad({x1, y0, 0}, {x1, y1, 0}, {x1, y1, h}, {x1, y0, h}, wall_base[1],
                        {1, 0, 0});
            sb.add_quad({x1, y1, 0}, {x0, y1, 0}, {x0, y1, h}, {x1, y1, h}, wall_base[2],
                        {0, 1, 0});
            sb.add_quad({x0, y1, 0}, {x0, y0, 0}, {x0, y0, h}, {x0, y1, h}, wall_base[3],
                        {-1, 0, 0});

            if (!gabled) {
                sb.add_quad({x0, y0, h}, {x1, y0, h}, {x1, y1, h}, {x0, y1, h}, roof_color,
                            {0, 0, 1});
            } else {
                const double rh = h + 0.35 * std::min(w, d);
                if (w >= d) {
                    // Ridge along x at y = cy.
                    const Vec3 r0{x0, cy, rh}, r1{x1, cy, rh};
                    Vec3 n_south = normalized(Vec3{0, -(rh - h), d * 0.5});
                    sb.add_quad({x0, y0, h}, {x1, y0, h}, r1, r0, roof_color, n_south);
                    Vec3 n_north = normalized(Vec3{0, rh - h, d * 0.5});
                    sb.add_quad({x1, y1, h}, {x0, y1, h}, r0, r1, roof_color, n_north);
                    int e0 = sb.add_vertex({x0, y0, h}), e1 = sb.add_vertex({x0, y1, h}),
                        e2 = sb.add_vertex(r0);
                    sb.add_tri(e0, e2, e1, wall_base[3], {-1, 0, 0});
                    int f0 = sb.add_vertex({x1, y0, h}), f1 = sb.add_vertex({x1, y1, h}),
                        f2 = sb.add_vertex(r1);
                    sb.add_tri(f0, f1, f2, wall_base[1], {1, 0, 0});
                } else {
                    // Ridge along y at x = cx.
                    const Vec3 r0{cx, y0, rh}, r1{cx, y1, rh};
                    Vec3 n_west = normalized(Vec3{-(rh - h), 0, w * 0.5});
                    sb.add_quad({x0, y1, h}, {x0, y0, h}, r0, r1, roof_color, n_west);
                    Vec3 n_east = normalized(Vec3{rh - h, 0, w * 0.5});
                    sb.add_quad({x1, y0, h}, {x1, y1, h}, r1, r0, roof_color, n_east);
                    int e0 = sb.add_vertex({x0, y0, h}), e1 = sb.add_vertex({x1, y0, h}),
                        e2 = sb.add_vertex(r0);
                    sb.add_tri(e0, e1, e2, wall_base[0], {0, -1, 0});
                    int f0 = sb.add_vertex({x0, y1, h}), f1 = sb.add_vertex({x1, y1, h}),
                        f2 = sb.add_vertex(r1);
                    sb.add_tri(f0, f2, f1, wall_base[2], {0, 1, 0});
                }
            }
            Aabb fp_only = fp;
            placed.push_back(fp_only);
            ok = true;
        }
        if (!ok)
            throw DataError("build_scene: could not place building " + std::to_string(b + 1) +
                            " of " + std::to_string(want) + " without overlap");
    }

    sb.scene.building_boxes = placed;
    sb.scene.bvh.build(sb.scene.vertices, sb.scene.triangles);
    return sb.scene;
}

bool raycast_occluded(const TriMeshScene& scene, const Vec3& origin, const Vec3& toward_sun) {
    const Vec3 start = origin + toward_sun * 1e-4;
    return scene.bvh.any_hit(start, toward_sun);
}

Vec3 shade_at(const TriMeshScene& scene, const Vec3& point, const Vec3& normal,
              const SunConfig& sun) {
    const Vec3 toward = sun.toward_sun();
    const double lambert = std::max(0.0, dot(normal, toward));
    double vis = 0.0;
    if (lambert > 0.0) vis = raycast_occluded(scene, point, toward) ? 0.0 : 1.0;
    return clamp01(sun.ambient + sun.color * (vis * lambert));
}

SurfaceSample sample_surface(const TriMeshScene& scene, int n_points, uint64_t seed) {
    if (n_points < 1) throw ConfigError("sample_surface: n_points must be >= 1");
    const int nt = scene.triangle_count();
    if (nt < 1) throw DataError("sample_surface: empty scene");

    std::vector<double> cdf(size_t(nt));
    double acc = 0.0;
    for (int t = 0; t < nt; ++t) {
        acc += scene.triangle_area(t);
        cdf[size_t(t)] = acc;
    }
    if (acc <= 0.0) throw NumericalError("sample_surface: zero total area");

    Rng rng(seed);
    SurfaceSample out;
    out.positions.resize(size_t(n_points));
    out.albedo.resize(size_t(n_points));
    out.normals.resize(size_t(n_points));
    for (int i = 0; i < n_points; ++i) {
        double u = rng.uniform() * acc;
        int t = int(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        if (t >= nt) t = nt - 1;
        const auto& tr = scene.triangles[size_t(t)];
        const Vec3 &a = scene.vertices[size_t(tr[0])], &b = scene.vertices[size_t(tr[1])],
                   &c = scene.vertices[size_t(tr[2])];
        double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
        Vec3 p = a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2);
        out.positions[size_t(i)] = p;
        out.albedo[size_t(i)] = scene.face_albedo[size_t(t)];
        out.normals[size_t(i)] = scene.face_normals[size_t(t)];
    }
    return out;
}

std::vector<Vec3> shade_points(const TriMeshScene& scene, const SurfaceSample& sample,
                               const SunConfig& sun) {
    std::vector<Vec3> shade(sample.positions.size());
    for (size_t i = 0; i < sample.positions.size(); ++i)
        shade[i] = shade_at(scene, sample.positions[i], sample.normals[i], sun);
    return shade;
}

IntrinsicTriplet make_triplet(const TriMeshScene& scene, const SurfaceSample& sample,
                              const SunConfig& sun) {
    IntrinsicTriplet t;
    t.cloud.positions = sample.positions;
    t.albedo = sample.albedo;
    t.shade = shade_points(scene, sample, sun);
    t.cloud.colors.resize(sample.positions.size());
    for (size_t i = 0; i < sample.positions.size(); ++i)
        t.cloud.colors[i] = t.albedo[i].cwise(t.shade[i]);
    t.sun = sun;
    return t;
}

IntrinsicTriplet sample_triplet(const TriMeshScene& scene, const SunConfig& sun, int n_points,
                                uint64_t seed) {
    return make_triplet(scene, sample_surface(scene, n_points, seed), sun);
}

// --- Dataset generation ------------------------------------------------------

GenConfig GenConfig::from_config(const ConfigDoc& doc) {
    GenConfig cfg;
    cfg.seed = uint64_t(doc.get_int("gen", "seed", long(cfg.seed)));
    cfg.n_assets = int(doc.get_int("gen", "n_assets", cfg.n_assets));
    cfg.n_train = int(doc.get_int("gen", "n_train", cfg.n_train));
    cfg.n_points = int(doc.get_int("gen", "n_points", cfg.n_points));
    std::string times = doc.get_string("gen", "times", "");
    if (!times.empty()) {
        cfg.times.clear();
        std::istringstream in(times);
        std::string w;
        while (in >> w) cfg.times.push_back(w);
    }
    cfg.scene.buildings_min = int(doc.get_int("scene", "buildings_min", cfg.scene.buildings_min));
    cfg.scene.buildings_max = int(doc.get_int("scene", "buildings_max", cfg.scene.buildings_max));
    cfg.scene.footprint_min = doc.get_double("scene", "footprint_min", cfg.scene.footprint_min);
    cfg.scene.footprint_max = doc.get_double("scene", "footprint_max", cfg.scene.footprint_max);
    cfg.scene.height_min = doc.get_double("scene", "height_min", cfg.scene.height_min);
    cfg.scene.height_max = doc.get_double("scene", "height_max", cfg.scene.height_max);
    cfg.scene.ground_extent = doc.get_double("scene", "ground_extent", cfg.scene.ground_extent);
    cfg.scene.gable_prob = doc.get_double("scene", "gable_prob", cfg.scene.gable_prob);
    std::vector<double> pal = doc.get_doubles("scene", "palette", {});
    if (!pal.empty()) {
        if (pal.size() % 3 != 0)
            throw ConfigError("[scene] palette must hold triples of rgb values");
        cfg.scene.palette.clear();
        for (size_t i = 0; i + 3 <= pal.size(); i += 3)
            cfg.scene.palette.push_back({pal[i], pal[i + 1], pal[i + 2]});
    }
    if (cfg.n_assets < 1 || cfg.n_train < 0 || cfg.n_train > cfg.n_assets)
        throw ConfigError("gen: need 0 <= n_train <= n_assets and n_assets >= 1");
    if (cfg.times.empty()) throw ConfigError("gen: times must be non-empty");
    return cfg;
}

DatasetIndex generate_dataset(const GenConfig& cfg, const std::string& out_root) {
    std::filesystem::create_directories(out_root);
    DatasetIndex idx;
    idx.root = out_root;
    idx.times = cfg.times;

    Rng master(cfg.seed);
    for (int a = 0; a < cfg.n_assets; ++a) {
        char name[32];
        std::snprintf(name, sizeof(name), "asset_%02d", a);
        if (a < cfg.n_train)
            idx.train_assets.push_back(name);
        else
            idx.test_assets.push_back(name);

        SceneSpec spec = cfg.scene;
        spec.seed = master.fork(uint64_t(a) * 2 + 1).next_u64();
        TriMeshScene scene = build_scene(spec);
        // One surface sample per asset: positions and albedo are shared
        // across times so only the shade differs.
        uint64_t sample_seed = master.fork(uint64_t(a) * 2 + 2).next_u64();
        SurfaceSample sample = sample_surface(scene, cfg.n_points, sample_seed);

        for (const std::string& time : cfg.times) {
            SunConfig sun = sun_from_time(time);
            IntrinsicTriplet t = make_triplet(scene, sample, sun);
            std::string dir = out_root + "/" + name + "/" + time;
            write_triplet_dir(t, dir, sample_seed);
            idx.entries.push_back(DatasetEntry{name, time, dir});
        }
    }
    write_dataset_meta(idx);
    return idx;
}

}  // namespace ipcd
