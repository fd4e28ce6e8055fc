#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace ipcd {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    double& operator[](int i) { return (&x)[i]; }
    double operator[](int i) const { return (&x)[i]; }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    // Hadamard product
    Vec3 cwise(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }

    bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline double squared_norm(const Vec3& v) { return dot(v, v); }

inline Vec3 normalized(const Vec3& v) {
    double n = norm(v);
    return n > 0.0 ? v / n : Vec3{0, 0, 0};
}

inline Vec3 clamp01(const Vec3& v) {
    auto c = [](double t) { return t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t); };
    return {c(v.x), c(v.y), c(v.z)};
}

inline Vec3 min3(const Vec3& a, const Vec3& b) {
    return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}

inline Vec3 max3(const Vec3& a, const Vec3& b) {
    return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}

// Rec.709 luma.
inline double luma(const Vec3& rgb) { return 0.2126 * rgb.x + 0.7152 * rgb.y + 0.0722 * rgb.z; }

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return Mat3{}; }

    double& operator()(int r, int c) { return m[r * 3 + c]; }
    double operator()(int r, int c) const { return m[r * 3 + c]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    static Mat3 rot_x(double rad) {
        Mat3 r;
        double c = std::cos(rad), s = std::sin(rad);
        r.m = {1, 0, 0, 0, c, -s, 0, s, c};
        return r;
    }

    static Mat3 rot_y(double rad) {
        Mat3 r;
        double c = std::cos(rad), s = std::sin(rad);
        r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
        return r;
    }

    static Mat3 rot_z(double rad) {
        Mat3 r;
        double c = std::cos(rad), s = std::sin(rad);
        r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
        return r;
    }

    // Rodrigues formula; axis need not be unit (zero axis -> identity).
    static Mat3 axis_angle(const Vec3& axis, double rad) {
        double n = norm(axis);
        if (n < 1e-300) return identity();
        Vec3 u = axis / n;
        double c = std::cos(rad), s = std::sin(rad), t = 1.0 - c;
        Mat3 r;
        r.m = {c + u.x * u.x * t,       u.x * u.y * t - u.z * s, u.x * u.z * t + u.y * s,
               u.y * u.x * t + u.z * s, c + u.y * u.y * t,       u.y * u.z * t - u.x * s,
               u.z * u.x * t - u.y * s, u.z * u.y * t + u.x * s, c + u.z * u.z * t};
        return r;
    }
};

struct Aabb {
    Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
            std::numeric_limits<double>::max()};
    Vec3 hi{std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest(),
            std::numeric_limits<double>::lowest()};

    void expand(const Vec3& p) {
        lo = min3(lo, p);
        hi = max3(hi, p);
    }

    void expand(const Aabb& b) {
        lo = min3(lo, b.lo);
        hi = max3(hi, b.hi);
    }

    bool valid() const { return lo.x <= hi.x && lo.y <= hi.y && lo.z <= hi.z; }

    bool overlaps(const Aabb& o) const {
        return lo.x <= o.hi.x && o.lo.x <= hi.x && lo.y <= o.hi.y && o.lo.y <= hi.y &&
               lo.z <= o.hi.z && o.lo.z <= hi.z;
    }

    bool contains(const Vec3& p) const {
        return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z &&
               p.z <= hi.z;
    }

    Vec3 center() const { return (lo + hi) * 0.5; }
};

// Deterministic RNG used everywhere randomness is needed. Wraps a fixed
// 64-bit engine and derives doubles manually so streams are identical
// across standard libraries and runs.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64() {
        // xorshift64* — small, fast, deterministic.
        uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dull;
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = std::max(uniform(), 1e-300);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    // Derive an independent child stream (for per-asset / per-scene seeds).
    Rng fork(uint64_t salt) const {
        uint64_t s = state_ ^ (salt * 0xff51afd7ed558ccdull + 0x2d358dccaa6c78a5ull);
        return Rng(s);
    }

    // k distinct indices from [0, n), in random order (partial Fisher-Yates).
    std::vector<int> sample_without_replacement(int n, int k);

  private:
    uint64_t state_;
};

inline std::vector<int> Rng::sample_without_replacement(int n, int k) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    if (k > n) k = n;
    for (int i = 0; i < k; ++i) {
        int j = i + int(uniform_int(uint64_t(n - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

}  // namespace ipcd
