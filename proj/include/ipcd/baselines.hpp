#pragma once

#include "ipcd/model.hpp"
#include "ipcd/pcio.hpp"

namespace ipcd {

// A-hat = I, S-hat = 1.
Prediction baseline_a(const PointCloud& cloud);

// S-hat = I, A-hat = 1.
Prediction baseline_s(const PointCloud& cloud);

struct RetinexConfig {
    int k = 12;            // neighbors in the point graph
    double tau = 0.1;      // chromaticity angle threshold (radians)
    double mu = 1e-3;      // gauge weight on mean log-shade
    int max_cg_iterations = 0;  // 0 -> 10 * N
    double cg_tolerance = 1e-10;
};

// Point-graph Retinex: edges with similar chromaticity are treated as shade
// edges (log-color differences attributed to shade), dissimilar ones as
// albedo edges (shade assumed smooth across them). Log-shade solves a
// Laplacian least-squares system, gauge-fixed by anchoring the mean to the
// log of the 95th-percentile luma. Conjugate gradient, Jacobi preconditioned.
Prediction retinex_points(const PointCloud& cloud, const RetinexConfig& cfg = {});

// The normal-equation system solved by retinex_points, exposed so tests can
// check the sparse solve against a dense oracle.
struct RetinexSystem {
    int n = 0;
    std::vector<std::array<int, 2>> edges;    // undirected, i < j
    std::vector<uint8_t> edge_is_shade;
    std::vector<Vec3> rhs_d;                  // log I_i - log I_j (shade edges), 0 otherwise
    double mu = 0.0;
    double anchor = 0.0;                      // log of 95th-percentile luma

    // y = (L + (mu/n^2) 11^T) x
    void apply(const std::vector<double>& x, std::vector<double>& y) const;
    std::vector<double> rhs(int channel) const;
};

RetinexSystem build_retinex_system(const PointCloud& cloud, const RetinexConfig& cfg);

// Solution of `sys` for one channel (CG). Throws NumericalError with the
// residual when the iteration fails to converge.
std::vector<double> solve_retinex_channel(const RetinexSystem& sys, int channel,
                                          const RetinexConfig& cfg);

}  // namespace ipcd
