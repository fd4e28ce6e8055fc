#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ipcd/geometry.hpp"
#include "ipcd/pcio.hpp"

namespace ipcd {

struct MetricTriple {
    double mse = 0, mae = 0, psnr = 0;
};

// MSE/MAE over all N*3 entries; PSNR = 10 log10(1/MSE) with MAX=1, capped
// at 99 when MSE < 1e-10.
MetricTriple metrics(const std::vector<Vec3>& pred, const std::vector<Vec3>& truth);

struct MetricReportRow {
    std::string asset, time;
    MetricTriple albedo, shade;
};

struct MetricReport {
    std::vector<MetricReportRow> rows;
    // Per-asset metrics averaged (PSNR averaged per row), plus the PSNR of
    // the mean MSE as the alternative aggregate.
    MetricTriple albedo_mean, shade_mean;
    double albedo_psnr_of_mean_mse = 0, shade_psnr_of_mean_mse = 0;

    void finalize();  // fills the aggregate fields from rows
};

void save_metric_report_csv(const MetricReport& report, const std::string& path);
std::string format_metric_table(const MetricReport& report);

// --- relative-reflectance pairs ---------------------------------------------

enum class PairLabel { Darker, Lighter, Equal };

struct PairAnnotation {
    int i = 0, j = 0;
    PairLabel label = PairLabel::Equal;
};

// CSV rows: i,j,label with label in {darker,lighter,equal}.
void save_annotations_csv(const std::vector<PairAnnotation>& ann, const std::string& path);
std::vector<PairAnnotation> load_annotations_csv(const std::string& path, int cloud_size);

// Synthetic annotations derived from ground-truth albedo with threshold
// delta, so the f1 pipeline runs without manual labels.
std::vector<PairAnnotation> generate_annotations(const std::vector<Vec3>& albedo_truth,
                                                 int count, double delta, uint64_t seed);

// Macro-averaged f1 over the three classes; prediction per pair from the
// luma ratio of the estimated albedo.
double pair_f1(const std::vector<Vec3>& albedo, const std::vector<PairAnnotation>& annotations,
               double delta = 1.1);

// --- registration -------------------------------------------------------------

struct RigidTransform {
    Mat3 R;
    Vec3 t{0, 0, 0};

    Vec3 apply(const Vec3& p) const { return R * p + t; }
    RigidTransform compose(const RigidTransform& inner) const;  // this after inner
    RigidTransform inverse() const;
    static RigidTransform identity() { return {}; }
};

double rotation_error_deg(const Mat3& a, const Mat3& b);

struct IcpParams {
    int max_iterations = 50;
    double correspondence_radius = 0.25;  // normalized units
    double color_weight = 0.3;            // photometric weight w in [0,1)
    int normal_k = 16;                    // k-NN plane fit on the target
    int max_source_points = 4000;         // subsample for speed; 0 = all
    uint64_t subsample_seed = 1;
};

struct IcpResult {
    RigidTransform transform;
    double rmse = 0;              // weighted residual at the final pose
    int iterations = 0;
    int correspondences = 0;
    bool converged = false;       // update-norm stop
    bool stalled = false;         // residual stopped improving; best-so-far returned
};

// Point-to-plane ICP with a photometric luma term: residuals
//   sqrt(1-w) * n_t . (T p_s - p_t)   and
//   sqrt(w)   * (luma_s - luma_t - g_t . (proj(T p_s) - p_t))
// over nearest-neighbor correspondences within the radius, minimized by
// Gauss-Newton on the 6-dof pose. Throws NumericalError when fewer than 10
// correspondences remain.
IcpResult colored_icp(const PointCloud& source, const PointCloud& target,
                      const RigidTransform& init, const IcpParams& params = {});

struct RegistrationCase {
    std::string asset, time_src, time_dst;
    double overlap = 1.0;
    PointCloud source;             // cropped, perturbed
    PointCloud target;             // cropped
    RigidTransform ground_truth;   // aligns perturbed source onto target
    RigidTransform perturbation;
};

struct RegistrationInputs {
    std::string asset, time_a, time_b;
    PointCloud a, b;  // same asset under two suns, normalized frame
};

// Crops both clouds to half-spaces sharing ~overlap of the surface, then
// applies a random rigid perturbation (rotation <= 15 deg, translation
// <= 0.2) to the source. Infeasible overlaps are skipped with a warning
// returned in `warnings`.
std::vector<RegistrationCase> make_registration_cases(
    const std::vector<RegistrationInputs>& pairs, const std::vector<double>& overlaps,
    uint64_t seed, std::vector<std::string>* warnings = nullptr);

struct RecallThresholds {
    double rotation_deg = 5.0;
    double translation = 0.05;
};

double registration_recall(const std::vector<RegistrationCase>& cases,
                           const std::vector<RigidTransform>& results,
                           const RecallThresholds& thresholds = {});

}  // namespace ipcd
