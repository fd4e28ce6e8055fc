#include "ipcd/pcio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ipcd {

namespace fs = std::filesystem;

void PointCloud::validate() const {
    if (positions.empty()) throw DataError("point cloud: empty (N must be >= 1)");
    if (positions.size() != colors.size())
        throw DataError("point cloud: positions/colors length mismatch (" +
                        std::to_string(positions.size()) + " vs " +
                        std::to_string(colors.size()) + ")");
    for (const Vec3& p : positions)
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
            throw DataError("point cloud: non-finite position");
    for (const Vec3& c : colors)
        for (int k = 0; k < 3; ++k)
            if (!(c[k] >= 0.0 && c[k] <= 1.0))
                throw DataError("point cloud: color outside [0,1]");
}

std::pair<PointCloud, NormalizationTransform> normalize_cloud(const PointCloud& cloud) {
    if (cloud.size() < 1) throw DataError("normalize_cloud: empty cloud");
    NormalizationTransform t;
    Vec3 sum{0, 0, 0};
    for (const Vec3& p : cloud.positions) sum += p;
    t.center = sum / double(cloud.size());
    double max_r = 0.0;
    for (const Vec3& p : cloud.positions) max_r = std::max(max_r, norm(p - t.center));
    t.scale = max_r > 0.0 ? max_r : 1.0;
    PointCloud out;
    out.positions.reserve(cloud.positions.size());
    for (const Vec3& p : cloud.positions) out.positions.push_back(t.apply(p));
    out.colors = cloud.colors;
    return {std::move(out), t};
}

// --- PLY ------------------------------------------------------------------

namespace {

enum class ScalarType { F32, F64, U8, I8, U16, I16, U32, I32 };

size_t scalar_size(ScalarType t) {
    switch (t) {
        case ScalarType::F64: return 8;
        case ScalarType::F32:
        case ScalarType::U32:
        case ScalarType::I32: return 4;
        case ScalarType::U16:
        case ScalarType::I16: return 2;
        default: return 1;
    }
}

ScalarType parse_scalar_type(const std::string& s, const std::string& path) {
    if (s == "float" || s == "float32") return ScalarType::F32;
    if (s == "double" || s == "float64") return ScalarType::F64;
    if (s == "uchar" || s == "uint8") return ScalarType::U8;
    if (s == "char" || s == "int8") return ScalarType::I8;
    if (s == "ushort" || s == "uint16") return ScalarType::U16;
    if (s == "short" || s == "int16") return ScalarType::I16;
    if (s == "uint" || s == "uint32") return ScalarType::U32;
    if (s == "int" || s == "int32") return ScalarType::I32;
    throw FormatError("ply: unsupported property type '" + s + "' in " + path);
}

double read_binary_scalar(std::istream& in, ScalarType t) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), std::streamsize(scalar_size(t)));
    switch (t) {
        case ScalarType::F32: {
            float f;
            std::memcpy(&f, buf, 4);
            return double(f);
        }
        case ScalarType::F64: {
            double d;
            std::memcpy(&d, buf, 8);
            return d;
        }
        case ScalarType::U8: return double(buf[0]);
        case ScalarType::I8: return double(static_cast<int8_t>(buf[0]));
        case ScalarType::U16: {
            uint16_t v;
            std::memcpy(&v, buf, 2);
            return double(v);
        }
        case ScalarType::I16: {
            int16_t v;
            std::memcpy(&v, buf, 2);
            return double(v);
        }
        case ScalarType::U32: {
            uint32_t v;
            std::memcpy(&v, buf, 4);
            return double(v);
        }
        case ScalarType::I32: {
            int32_t v;
            std::memcpy(&v, buf, 4);
            return double(v);
        }
    }
    return 0.0;
}

struct PlyProperty {
    std::string name;
    ScalarType type = ScalarType::F32;
};

int find_property(const std::vector<PlyProperty>& props, const std::string& name) {
    for (size_t i = 0; i < props.size(); ++i)
        if (props[i].name == name) return int(i);
    return -1;
}

void write_f32(std::ostream& out, double v) {
    float f = float(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
}

uint8_t to_u8(double v) {
    double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return uint8_t(std::lround(c * 255.0));
}

}  // namespace

PlyContents load_ply_contents(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("ply: cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw FormatError("ply: empty file " + path);
    // Tolerate \r\n headers.
    auto chomp = [](std::string& s) {
        while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
    };
    chomp(line);
    if (line != "ply") throw FormatError("ply: missing magic in " + path);

    bool binary = false;
    long vertex_count = -1;
    std::vector<PlyProperty> props;
    bool in_vertex_element = false;
    bool saw_format = false;

    while (std::getline(in, line)) {
        chomp(line);
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment" || tok.empty()) continue;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "ascii")
                binary = false;
            else if (fmt == "binary_little_endian")
                binary = true;
            else
                throw FormatError("ply: unsupported format '" + fmt + "' in " + path);
            saw_format = true;
        } else if (tok == "element") {
            std::string name;
            long count = 0;
            ls >> name >> count;
            if (name == "vertex") {
                vertex_count = count;
                in_vertex_element = true;
            } else {
                if (vertex_count < 0)
                    throw FormatError("ply: element '" + name + "' precedes vertex in " + path);
                in_vertex_element = false;  // trailing elements are ignored
            }
        } else if (tok == "property") {
            if (!in_vertex_element) continue;
            std::string type;
            ls >> type;
            if (type == "list")
                throw FormatError("ply: list property on vertex element in " + path);
            PlyProperty p;
            p.type = parse_scalar_type(type, path);
            ls >> p.name;
            props.push_back(p);
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!saw_format) throw FormatError("ply: missing format line in " + path);
    if (vertex_count < 0) throw FormatError("ply: missing vertex element in " + path);
    if (vertex_count == 0) throw FormatError("ply: zero vertices (empty cloud) in " + path);

    for (const char* req : {"x", "y", "z", "red", "green", "blue"})
        if (find_property(props, req) < 0)
            throw FormatError(std::string("ply: missing property '") + req + "' in " + path);

    const int n_props = int(props.size());
    std::vector<double> row(size_t(n_props));
    std::vector<std::vector<double>> columns(size_t(n_props));
    for (auto& c : columns) c.reserve(size_t(vertex_count));

    for (long v = 0; v < vertex_count; ++v) {
        if (binary) {
            for (int p = 0; p < n_props; ++p) row[size_t(p)] = read_binary_scalar(in, props[size_t(p)].type);
        } else {
            for (int p = 0; p < n_props; ++p)
                if (!(in >> row[size_t(p)]))
                    throw FormatError("ply: truncated ascii data in " + path);
        }
        if (!in) throw FormatError("ply: truncated data in " + path);
        for (int p = 0; p < n_props; ++p) columns[size_t(p)].push_back(row[size_t(p)]);
    }

    PlyContents out;
    const int ix = find_property(props, "x"), iy = find_property(props, "y"),
              iz = find_property(props, "z");
    const int ir = find_property(props, "red"), ig = find_property(props, "green"),
              ib = find_property(props, "blue");
    const bool color_is_u8 = props[size_t(ir)].type == ScalarType::U8;
    auto map_color = [&](double v) {
        double c = color_is_u8 ? v / 255.0 : v;
        return c < 0.0 ? 0.0 : (c > 1.0 ? 1.0 : c);
    };
    out.cloud.positions.resize(size_t(vertex_count));
    out.cloud.colors.resize(size_t(vertex_count));
    for (long v = 0; v < vertex_count; ++v) {
        out.cloud.positions[size_t(v)] = {columns[size_t(ix)][size_t(v)], columns[size_t(iy)][size_t(v)],
                                          columns[size_t(iz)][size_t(v)]};
        out.cloud.colors[size_t(v)] = {map_color(columns[size_t(ir)][size_t(v)]),
                                       map_color(columns[size_t(ig)][size_t(v)]),
                                       map_color(columns[size_t(ib)][size_t(v)])};
    }

    // Group remaining float properties named <base>_r/_g/_b into extras.
    for (int p = 0; p < n_props; ++p) {
        const std::string& name = props[size_t(p)].name;
        if (name.size() > 2 && name.compare(name.size() - 2, 2, "_r") == 0) {
            std::string base = name.substr(0, name.size() - 2);
            int pg = find_property(props, base + "_g");
            int pb = find_property(props, base + "_b");
            if (pg < 0 || pb < 0) continue;
            std::vector<Vec3> chan(size_t(vertex_count));
            for (long v = 0; v < vertex_count; ++v)
                chan[size_t(v)] = {columns[size_t(p)][size_t(v)], columns[size_t(pg)][size_t(v)],
                                   columns[size_t(pb)][size_t(v)]};
            out.extras[base] = std::move(chan);
        }
    }
    return out;
}

PointCloud load_ply(const std::string& path) { return load_ply_contents(path).cloud; }

void save_ply(const PointCloud& cloud, const std::string& path, PlyEncoding encoding,
              const std::map<std::string, std::vector<Vec3>>& extras, PlyColorType color_type) {
    cloud.validate();
    for (const auto& [name, chan] : extras)
        if (chan.size() != cloud.positions.size())
            throw DataError("ply: extra channel '" + name + "' length mismatch");

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("ply: cannot write '" + path + "'");

    const bool binary = encoding == PlyEncoding::BinaryLittleEndian;
    const bool color_u8 = color_type == PlyColorType::Uchar;
    out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
    out << "element vertex " << cloud.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    const char* ctype = color_u8 ? "uchar" : "float";
    out << "property " << ctype << " red\nproperty " << ctype << " green\nproperty " << ctype
        << " blue\n";
    for (const auto& [name, chan] : extras) {
        (void)chan;
        for (const char* suffix : {"_r", "_g", "_b"})
            out << "property float " << name << suffix << "\n";
    }
    out << "end_header\n";

    const int n = cloud.size();
    for (int i = 0; i < n; ++i) {
        const Vec3& p = cloud.positions[size_t(i)];
        const Vec3& c = cloud.colors[size_t(i)];
        if (binary) {
            write_f32(out, p.x);
            write_f32(out, p.y);
            write_f32(out, p.z);
            if (color_u8) {
                uint8_t rgb[3] = {to_u8(c.x), to_u8(c.y), to_u8(c.z)};
                out.write(reinterpret_cast<const char*>(rgb), 3);
            } else {
                write_f32(out, c.x);
                write_f32(out, c.y);
                write_f32(out, c.z);
            }
            for (const auto& [name, chan] : extras) {
                (void)name;
                write_f32(out, chan[size_t(i)].x);
                write_f32(out, chan[size_t(i)].y);
                write_f32(out, chan[size_t(i)].z);
            }
        } else {
            char buf[256];
            std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g", float(p.x), float(p.y), float(p.z));
            out << buf;
            if (color_u8)
                out << " " << int(to_u8(c.x)) << " " << int(to_u8(c.y)) << " " << int(to_u8(c.z));
            else {
                std::snprintf(buf, sizeof(buf), " %.9g %.9g %.9g", float(c.x), float(c.y),
                              float(c.z));
                out << buf;
            }
            for (const auto& [name, chan] : extras) {
                (void)name;
                std::snprintf(buf, sizeof(buf), " %.9g %.9g %.9g", float(chan[size_t(i)].x),
                              float(chan[size_t(i)].y), float(chan[size_t(i)].z));
                out << buf;
            }
            out << "\n";
        }
    }
    if (!out) throw DataError("ply: write failed for '" + path + "'");
}

// --- Dataset layout --------------------------------------------------------

namespace {

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::string join_words(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += " ";
        out += v[i];
    }
    return out;
}

}  // namespace

std::vector<DatasetEntry> DatasetIndex::split(const std::string& which) const {
    if (which != "train" && which != "test" && which != "all")
        throw ConfigError("dataset split must be train|test|all, got '" + which + "'");
    std::vector<DatasetEntry> out;
    for (const DatasetEntry& e : entries) {
        bool is_test = std::find(test_assets.begin(), test_assets.end(), e.asset) != test_assets.end();
        if (which == "all" || (which == "test") == is_test) out.push_back(e);
    }
    return out;
}

void write_triplet_dir(const IntrinsicTriplet& t, const std::string& dir, uint64_t seed) {
    if (t.size() < 1 || t.albedo.size() != t.cloud.positions.size() ||
        t.shade.size() != t.cloud.positions.size())
        throw DataError("triplet: inconsistent sizes");
    fs::create_directories(dir);

    save_ply(t.cloud, dir + "/input.ply", PlyEncoding::BinaryLittleEndian, {},
             PlyColorType::Float);
    PointCloud alb{t.cloud.positions, t.albedo};
    save_ply(alb, dir + "/albedo.ply", PlyEncoding::BinaryLittleEndian, {}, PlyColorType::Float);
    PointCloud shd{t.cloud.positions, t.shade};
    save_ply(shd, dir + "/shade.ply", PlyEncoding::BinaryLittleEndian, {}, PlyColorType::Float);

    ConfigDoc meta;
    meta.set("sun", "label", t.sun.label);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g", t.sun.direction.x, t.sun.direction.y,
                  t.sun.direction.z);
    meta.set("sun", "direction", buf);
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g", t.sun.color.x, t.sun.color.y,
                  t.sun.color.z);
    meta.set("sun", "color", buf);
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g", t.sun.ambient.x, t.sun.ambient.y,
                  t.sun.ambient.z);
    meta.set("sun", "ambient", buf);
    meta.set_int("gen", "seed", long(seed));
    meta.set_int("gen", "n_points", t.size());
    meta.save_file(dir + "/meta");
}

IntrinsicTriplet load_triplet_dir(const std::string& dir) {
    IntrinsicTriplet t;
    t.cloud = load_ply(dir + "/input.ply");
    PointCloud alb = load_ply(dir + "/albedo.ply");
    PointCloud shd = load_ply(dir + "/shade.ply");
    if (alb.size() != t.cloud.size() || shd.size() != t.cloud.size())
        throw DataError("triplet: size mismatch across plys in " + dir);
    t.albedo = std::move(alb.colors);
    t.shade = std::move(shd.colors);

    ConfigDoc meta = ConfigDoc::parse_file(dir + "/meta");
    t.sun.label = meta.get_string("sun", "label", "custom");
    auto v3 = [&](const std::string& key, Vec3 fb) {
        std::vector<double> v = meta.get_doubles("sun", key, {fb.x, fb.y, fb.z});
        if (v.size() != 3) throw FormatError("meta: '" + key + "' needs 3 numbers in " + dir);
        return Vec3{v[0], v[1], v[2]};
    };
    t.sun.direction = v3("direction", {0, 0, -1});
    t.sun.color = v3("color", {1, 1, 1});
    t.sun.ambient = v3("ambient", {0.25, 0.27, 0.32});
    return t;
}

void write_dataset_meta(const DatasetIndex& index) {
    ConfigDoc doc;
    doc.set("dataset", "train_assets", join_words(index.train_assets));
    doc.set("dataset", "test_assets", join_words(index.test_assets));
    doc.set("dataset", "times", join_words(index.times));
    doc.save_file(index.root + "/dataset_meta");
}

DatasetIndex load_dataset_index(const std::string& root) {
    DatasetIndex idx;
    idx.root = root;
    ConfigDoc doc = ConfigDoc::parse_file(root + "/dataset_meta");
    idx.train_assets = split_words(doc.get_string("dataset", "train_assets", ""));
    idx.test_assets = split_words(doc.get_string("dataset", "test_assets", ""));
    idx.times = split_words(doc.get_string("dataset", "times", ""));
    if (idx.times.empty()) throw FormatError("dataset_meta: missing times in " + root);
    std::vector<std::string> assets = idx.train_assets;
    assets.insert(assets.end(), idx.test_assets.begin(), idx.test_assets.end());
    for (const std::string& a : assets)
        for (const std::string& tm : idx.times)
            idx.entries.push_back(DatasetEntry{a, tm, root + "/" + a + "/" + tm});
    return idx;
}

}  // namespace ipcd
