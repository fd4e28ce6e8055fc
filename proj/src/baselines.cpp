#include "ipcd/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ipcd {

Prediction baseline_a(const PointCloud& cloud) {
    cloud.validate();
    Prediction p;
    p.albedo = cloud.colors;
    p.shade.assign(cloud.colors.size(), Vec3{1, 1, 1});
    return p;
}

Prediction baseline_s(const PointCloud& cloud) {
    cloud.validate();
    Prediction p;
    p.shade = cloud.colors;
    p.albedo.assign(cloud.colors.size(), Vec3{1, 1, 1});
    return p;
}

namespace {

Vec3 log_color(const Vec3& c) {
    auto lg = [](double v) { return std::log(std::max(v, 1e-4)); };
    return {lg(c.x), lg(c.y), lg(c.z)};
}

double chroma_angle(const Vec3& a, const Vec3& b) {
    Vec3 ca = normalized({std::max(a.x, 1e-4), std::max(a.y, 1e-4), std::max(a.z, 1e-4)});
    Vec3 cb = normalized({std::max(b.x, 1e-4), std::max(b.y, 1e-4), std::max(b.z, 1e-4)});
    return std::acos(std::clamp(dot(ca, cb), -1.0, 1.0));
}

}  // namespace

RetinexSystem build_retinex_system(const PointCloud& cloud, const RetinexConfig& cfg) {
    cloud.validate();
    const int n = cloud.size();
    if (n <= cfg.k)
        throw ConfigError("retinex: needs N > k (N=" + std::to_string(n) + ", k=" +
                          std::to_string(cfg.k) + ")");

    RetinexSystem sys;
    sys.n = n;
    sys.mu = cfg.mu;

    std::vector<int> knn = knn_indices(cloud.positions, cfg.k);
    std::set<std::pair<int, int>> seen;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cfg.k; ++j) {
            int nb = knn[size_t(i) * size_t(cfg.k) + size_t(j)];
            auto e = std::minmax(i, nb);
            if (!seen.insert({e.first, e.second}).second) continue;
            sys.edges.push_back({e.first, e.second});
            bool is_shade =
                chroma_angle(cloud.colors[size_t(e.first)], cloud.colors[size_t(e.second)]) <=
                cfg.tau;
            sys.edge_is_shade.push_back(is_shade ? 1 : 0);
            sys.rhs_d.push_back(is_shade ? log_color(cloud.colors[size_t(e.first)]) -
                                               log_color(cloud.colors[size_t(e.second)])
                                         : Vec3{0, 0, 0});
        }

    std::vector<double> lum(size_t(n));
    for (int i = 0; i < n; ++i) lum[size_t(i)] = std::max(luma(cloud.colors[size_t(i)]), 1e-4);
    size_t q = size_t(std::min<double>(double(n) - 1.0, std::floor(0.95 * double(n))));
    std::nth_element(lum.begin(), lum.begin() + std::ptrdiff_t(q), lum.end());
    sys.anchor = std::log(lum[q]);
    return sys;
}

void RetinexSystem::apply(const std::vector<double>& x, std::vector<double>& y) const {
    y.assign(size_t(n), 0.0);
    for (const auto& e : edges) {
        double d = x[size_t(e[0])] - x[size_t(e[1])];
        y[size_t(e[0])] += d;
        y[size_t(e[1])] -= d;
    }
    double s = 0.0;
    for (double v : x) s += v;
    const double c = mu / (double(n) * double(n)) * s;
    for (double& v : y) v += c;
}

std::vector<double> RetinexSystem::rhs(int channel) const {
    std::vector<double> b(size_t(n), 0.0);
    for (size_t e = 0; e < edges.size(); ++e) {
        if (!edge_is_shade[e]) continue;
        double d = rhs_d[e][channel];
        b[size_t(edges[e][0])] += d;
        b[size_t(edges[e][1])] -= d;
    }
    const double c = mu * anchor / double(n);
    for (double& v : b) v += c;
    return b;
}

std::vector<double> solve_retinex_channel(const RetinexSystem& sys, int channel,
                                          const RetinexConfig& cfg) {
    const int n = sys.n;
    std::vector<double> b = sys.rhs(channel);

    // Jacobi preconditioner: node degree + gauge diagonal.
    std::vector<double> diag(size_t(n), sys.mu / (double(n) * double(n)));
    for (const auto& e : sys.edges) {
        diag[size_t(e[0])] += 1.0;
        diag[size_t(e[1])] += 1.0;
    }

    std::vector<double> x(size_t(n), 0.0), r = b, z(size_t(n)), p(size_t(n)), ap(size_t(n));
    double b_norm = 0.0;
    for (double v : b) b_norm += v * v;
    b_norm = std::sqrt(b_norm);
    if (b_norm == 0.0) return x;

    for (int i = 0; i < n; ++i) z[size_t(i)] = r[size_t(i)] / diag[size_t(i)];
    p = z;
    double rz = 0.0;
    for (int i = 0; i < n; ++i) rz += r[size_t(i)] * z[size_t(i)];

    const int max_it = cfg.max_cg_iterations > 0 ? cfg.max_cg_iterations : 10 * n;
    for (int it = 0; it < max_it; ++it) {
        sys.apply(p, ap);
        double pap = 0.0;
        for (int i = 0; i < n; ++i) pap += p[size_t(i)] * ap[size_t(i)];
        if (!(pap > 0.0))
            throw NumericalError("retinex: CG hit a non-positive curvature direction (p'Ap=" +
                                 std::to_string(pap) + "); system may be singular");
        const double alpha = rz / pap;
        double r_norm = 0.0;
        for (int i = 0; i < n; ++i) {
            x[size_t(i)] += alpha * p[size_t(i)];
            r[size_t(i)] -= alpha * ap[size_t(i)];
            r_norm += r[size_t(i)] * r[size_t(i)];
        }
        if (std::sqrt(r_norm) <= cfg.cg_tolerance * b_norm) return x;
        for (int i = 0; i < n; ++i) z[size_t(i)] = r[size_t(i)] / diag[size_t(i)];
        double rz_new = 0.0;
        for (int i = 0; i < n; ++i) rz_new += r[size_t(i)] * z[size_t(i)];
        const double beta = rz_new / rz;
        rz = rz_new;
        for (int i = 0; i < n; ++i) p[size_t(i)] = z[size_t(i)] + beta * p[size_t(i)];
    }
    double r_norm = 0.0;
    for (double v : r) r_norm += v * v;
    throw NumericalError("retinex: CG did not converge (relative residual " +
                         std::to_string(std::sqrt(r_norm) / b_norm) + " after " +
                         std::to_string(max_it) + " iterations)");
}

Prediction retinex_points(const PointCloud& cloud, const RetinexConfig& cfg) {
    RetinexSystem sys = build_retinex_system(cloud, cfg);
    const int n = sys.n;

    std::vector<std::vector<double>> s(3);
    for (int c = 0; c < 3; ++c) s[size_t(c)] = solve_retinex_channel(sys, c, cfg);

    Prediction out;
    out.shade.resize(size_t(n));
    out.albedo.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        Vec3 sh{std::exp(s[0][size_t(i)]), std::exp(s[1][size_t(i)]), std::exp(s[2][size_t(i)])};
        sh = {std::min(sh.x, 1.0), std::min(sh.y, 1.0), std::min(sh.z, 1.0)};
        out.shade[size_t(i)] = sh;
        const Vec3& I = cloud.colors[size_t(i)];
        out.albedo[size_t(i)] =
            clamp01({I.x / std::max(sh.x, 1e-6), I.y / std::max(sh.y, 1e-6),
                     I.z / std::max(sh.z, 1e-6)});
    }
    return out;
}

}  // namespace ipcd
