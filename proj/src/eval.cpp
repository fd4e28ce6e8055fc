#include "ipcd/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ipcd/kdtree.hpp"

namespace ipcd {

MetricTriple metrics(const std::vector<Vec3>& pred, const std::vector<Vec3>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw DataError("metrics: shape mismatch (" + std::to_string(pred.size()) + " vs " +
                        std::to_string(truth.size()) + ")");
    MetricTriple m;
    double se = 0.0, ae = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const Vec3 d = pred[i] - truth[i];
        se += d.x * d.x + d.y * d.y + d.z * d.z;
        ae += std::abs(d.x) + std::abs(d.y) + std::abs(d.z);
    }
    const double count = double(pred.size()) * 3.0;
    m.mse = se / count;
    m.mae = ae / count;
    m.psnr = m.mse < 1e-10 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / m.mse));
    return m;
}

void MetricReport::finalize() {
    albedo_mean = shade_mean = MetricTriple{};
    if (rows.empty()) return;
    for (const MetricReportRow& r : rows) {
        albedo_mean.mse += r.albedo.mse;
        albedo_mean.mae += r.albedo.mae;
        albedo_mean.psnr += r.albedo.psnr;
        shade_mean.mse += r.shade.mse;
        shade_mean.mae += r.shade.mae;
        shade_mean.psnr += r.shade.psnr;
    }
    const double n = double(rows.size());
    albedo_mean.mse /= n;
    albedo_mean.mae /= n;
    albedo_mean.psnr /= n;
    shade_mean.mse /= n;
    shade_mean.mae /= n;
    shade_mean.psnr /= n;
    albedo_psnr_of_mean_mse =
        albedo_mean.mse < 1e-10 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / albedo_mean.mse));
    shade_psnr_of_mean_mse =
        shade_mean.mse < 1e-10 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / shade_mean.mse));
}

void save_metric_report_csv(const MetricReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("report: cannot write '" + path + "'");
    out << "asset,time,alb_mse,alb_mae,alb_psnr,shd_mse,shd_mae,shd_psnr\n";
    char buf[320];
    auto row = [&](const std::string& a, const std::string& t, const MetricTriple& alb,
                   const MetricTriple& shd) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", a.c_str(),
                      t.c_str(), alb.mse, alb.mae, alb.psnr, shd.mse, shd.mae, shd.psnr);
        out << buf;
    };
    for (const MetricReportRow& r : report.rows) row(r.asset, r.time, r.albedo, r.shade);
    row("mean", "-", report.albedo_mean, report.shade_mean);
    std::snprintf(buf, sizeof(buf), "psnr_of_mean_mse,-,,,%.10g,,,%.10g\n",
                  report.albedo_psnr_of_mean_mse, report.shade_psnr_of_mean_mse);
    out << buf;
}

std::string format_metric_table(const MetricReport& report) {
    std::ostringstream out;
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%-12s %-9s | %9s %9s %7s | %9s %9s %7s\n", "asset", "time",
                  "alb MSE", "alb MAE", "PSNR", "shd MSE", "shd MAE", "PSNR");
    out << buf;
    auto row = [&](const std::string& a, const std::string& t, const MetricTriple& alb,
                   const MetricTriple& shd) {
        std::snprintf(buf, sizeof(buf), "%-12s %-9s | %9.5f %9.5f %7.2f | %9.5f %9.5f %7.2f\n",
                      a.c_str(), t.c_str(), alb.mse, alb.mae, alb.psnr, shd.mse, shd.mae,
                      shd.psnr);
        out << buf;
    };
    for (const MetricReportRow& r : report.rows) row(r.asset, r.time, r.albedo, r.shade);
    row("mean", "-", report.albedo_mean, report.shade_mean);
    return out.str();
}

// --- pair annotations -----------------------------------------------------------

namespace {

const char* label_name(PairLabel l) {
    switch (l) {
        case PairLabel::Darker: return "darker";
        case PairLabel::Lighter: return "lighter";
        default: return "equal";
    }
}

PairLabel label_from_name(const std::string& s) {
    if (s == "darker") return PairLabel::Darker;
    if (s == "lighter") return PairLabel::Lighter;
    if (s == "equal") return PairLabel::Equal;
    throw FormatError("annotations: unknown label '" + s + "'");
}

PairLabel label_from_ratio(double ratio, double delta) {
    if (ratio < 1.0 / delta) return PairLabel::Darker;
    if (ratio > delta) return PairLabel::Lighter;
    return PairLabel::Equal;
}

double safe_luma(const Vec3& c) { return std::max(luma(c), 1e-4); }

}  // namespace

void save_annotations_csv(const std::vector<PairAnnotation>& ann, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("annotations: cannot write '" + path + "'");
    out << "i,j,label\n";
    for (const PairAnnotation& a : ann)
        out << a.i << "," << a.j << "," << label_name(a.label) << "\n";
}

std::vector<PairAnnotation> load_annotations_csv(const std::string& path, int cloud_size) {
    std::ifstream in(path);
    if (!in) throw DataError("annotations: cannot open '" + path + "'");
    std::string line;
    std::getline(in, line);  // header
    std::vector<PairAnnotation> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        PairAnnotation a;
        std::string label;
        if (!(ls >> a.i >> a.j >> label))
            throw FormatError("annotations: bad row '" + line + "' in " + path);
        a.label = label_from_name(label);
        if (a.i == a.j || a.i < 0 || a.j < 0 || a.i >= cloud_size || a.j >= cloud_size)
            throw DataError("annotations: invalid pair (" + std::to_string(a.i) + "," +
                            std::to_string(a.j) + ") for cloud of " +
                            std::to_string(cloud_size) + " points");
        out.push_back(a);
    }
    return out;
}

std::vector<PairAnnotation> generate_annotations(const std::vector<Vec3>& albedo_truth,
                                                 int count, double delta, uint64_t seed) {
    const int n = int(albedo_truth.size());
    if (n < 2) throw DataError("generate_annotations: need at least 2 points");
    Rng rng(seed);
    std::vector<PairAnnotation> out;
    out.reserve(size_t(count));
    for (int c = 0; c < count; ++c) {
        PairAnnotation a;
        a.i = int(rng.uniform_int(uint64_t(n)));
        do {
            a.j = int(rng.uniform_int(uint64_t(n)));
        } while (a.j == a.i);
        a.label = label_from_ratio(safe_luma(albedo_truth[size_t(a.i)]) /
                                       safe_luma(albedo_truth[size_t(a.j)]),
                                   delta);
        out.push_back(a);
    }
    return out;
}

double pair_f1(const std::vector<Vec3>& albedo, const std::vector<PairAnnotation>& annotations,
               double delta) {
    if (annotations.empty()) throw DataError("pair_f1: no annotations");
    // Confusion counts per class: [true][pred].
    long confusion[3][3] = {};
    for (const PairAnnotation& a : annotations) {
        if (a.i < 0 || a.j < 0 || a.i >= int(albedo.size()) || a.j >= int(albedo.size()))
            throw DataError("pair_f1: annotation index outside cloud");
        PairLabel pred = label_from_ratio(
            safe_luma(albedo[size_t(a.i)]) / safe_luma(albedo[size_t(a.j)]), delta);
        confusion[int(a.label)][int(pred)] += 1;
    }
    double f1_sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        long tp = confusion[c][c];
        long fn = confusion[c][0] + confusion[c][1] + confusion[c][2] - tp;
        long fp = confusion[0][c] + confusion[1][c] + confusion[2][c] - tp;
        double denom = double(2 * tp + fp + fn);
        f1_sum += denom > 0.0 ? 2.0 * double(tp) / denom : 0.0;
    }
    return f1_sum / 3.0;
}

// --- rigid transforms ------------------------------------------------------------

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
    RigidTransform out;
    out.R = R * inner.R;
    out.t = R * inner.t + t;
    return out;
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform out;
    out.R = R.transposed();
    out.t = -(out.R * t);
    return out;
}

double rotation_error_deg(const Mat3& a, const Mat3& b) {
    Mat3 e = a * b.transposed();
    double tr = e(0, 0) + e(1, 1) + e(2, 2);
    double c = std::clamp((tr - 1.0) * 0.5, -1.0, 1.0);
    return rad2deg(std::acos(c));
}

// --- colored ICP ------------------------------------------------------------------

namespace {

struct TargetModel {
    KdTree tree;
    std::vector<Vec3> normals;
    std::vector<double> lum;
    std::vector<Vec3> luma_grad;  // tangent-plane gradient of luma
};

TargetModel build_target_model(const PointCloud& target, int normal_k) {
    TargetModel tm;
    tm.tree.build(target.positions);
    const int n = target.size();
    const int k = std::min(normal_k, n - 1);
    tm.normals.resize(size_t(n));
    tm.lum.resize(size_t(n));
    tm.luma_grad.resize(size_t(n));
    for (int i = 0; i < n; ++i) tm.lum[size_t(i)] = luma(target.colors[size_t(i)]);

    for (int i = 0; i < n; ++i) {
        std::vector<int> nb = tm.tree.knn(target.positions[size_t(i)], k, i);
        Vec3 mean = target.positions[size_t(i)];
        for (int j : nb) mean += target.positions[size_t(j)];
        mean = mean / double(nb.size() + 1);
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        auto accumulate = [&](const Vec3& p) {
            Eigen::Vector3d d(p.x - mean.x, p.y - mean.y, p.z - mean.z);
            cov += d * d.transpose();
        };
        accumulate(target.positions[size_t(i)]);
        for (int j : nb) accumulate(target.positions[size_t(j)]);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        Eigen::Vector3d nv = eig.eigenvectors().col(0);  // smallest eigenvalue
        Vec3 normal{nv.x(), nv.y(), nv.z()};
        tm.normals[size_t(i)] = normalized(normal);

        // Tangent-plane least squares for the luma gradient.
        const Vec3& nrm = tm.normals[size_t(i)];
        Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
        Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
        for (int j : nb) {
            Vec3 d = target.positions[size_t(j)] - target.positions[size_t(i)];
            Vec3 dt = d - nrm * dot(d, nrm);
            Eigen::Vector3d dv(dt.x, dt.y, dt.z);
            A += dv * dv.transpose();
            rhs += dv * (tm.lum[size_t(j)] - tm.lum[size_t(i)]);
        }
        Eigen::Vector3d nvec(nrm.x, nrm.y, nrm.z);
        A += nvec * nvec.transpose();       // pin the normal component to zero
        A += 1e-9 * Eigen::Matrix3d::Identity();
        Eigen::Vector3d g = A.ldlt().solve(rhs);
        Vec3 grad{g.x(), g.y(), g.z()};
        grad = grad - nrm * dot(grad, nrm);
        tm.luma_grad[size_t(i)] = grad;
    }
    return tm;
}

}  // namespace

IcpResult colored_icp(const PointCloud& source, const PointCloud& target,
                      const RigidTransform& init, const IcpParams& params) {
    if (source.size() < 100 || target.size() < 100)
        throw DataError("colored_icp: both clouds need >= 100 points");
    if (params.color_weight < 0.0 || params.color_weight >= 1.0)
        throw ConfigError("colored_icp: color_weight must be in [0,1)");

    const TargetModel tm = build_target_model(target, params.normal_k);

    std::vector<int> src_idx;
    if (params.max_source_points > 0 && source.size() > params.max_source_points) {
        Rng rng(params.subsample_seed);
        src_idx = rng.sample_without_replacement(source.size(), params.max_source_points);
        std::sort(src_idx.begin(), src_idx.end());
    } else {
        src_idx.resize(size_t(source.size()));
        for (int i = 0; i < source.size(); ++i) src_idx[size_t(i)] = i;
    }

    const double w = params.color_weight;
    const double wg = 1.0 - w;

    RigidTransform T = init;
    RigidTransform best_T = T;
    double best_rmse = std::numeric_limits<double>::infinity();
    int no_improve = 0;
    IcpResult res;

    for (int it = 0; it < params.max_iterations; ++it) {
        Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> rhs = Eigen::Matrix<double, 6, 1>::Zero();
        double sq_sum = 0.0;
        int count = 0;

        for (int si : src_idx) {
            const Vec3 q = T.apply(source.positions[size_t(si)]);
            const int ti = tm.tree.nearest_within(q, params.correspondence_radius);
            if (ti < 0) continue;
            ++count;
            const Vec3& pt = target.positions[size_t(ti)];
            const Vec3& nrm = tm.normals[size_t(ti)];
            const Vec3& grd = tm.luma_grad[size_t(ti)];

            const double rg = dot(nrm, q - pt);
            const Vec3 jg_rot = cross(q, nrm);
            const Vec3 proj = q - nrm * rg;
            const double rc = luma(source.colors[size_t(si)]) -
                              (tm.lum[size_t(ti)] + dot(grd, proj - pt));
            const Vec3 jc_rot = -cross(q, grd);
            const Vec3 jc_tr = -grd;

            Eigen::Matrix<double, 6, 1> Jg, Jc;
            Jg << jg_rot.x, jg_rot.y, jg_rot.z, nrm.x, nrm.y, nrm.z;
            Jc << jc_rot.x, jc_rot.y, jc_rot.z, jc_tr.x, jc_tr.y, jc_tr.z;
            H += wg * Jg * Jg.transpose() + w * Jc * Jc.transpose();
            rhs += -(wg * Jg * rg + w * Jc * rc);
            sq_sum += wg * rg * rg + w * rc * rc;
        }

        res.iterations = it + 1;
        res.correspondences = count;
        if (count < 10)
            throw NumericalError("colored_icp: diverged, only " + std::to_string(count) +
                                 " correspondences within radius " +
                                 std::to_string(params.correspondence_radius));

        const double rmse = std::sqrt(sq_sum / double(count));
        if (rmse < best_rmse - 1e-12) {
            best_rmse = rmse;
            best_T = T;
            no_improve = 0;
        } else {
            if (++no_improve >= 5) {
                res.stalled = true;
                break;
            }
        }

        H += 1e-12 * Eigen::Matrix<double, 6, 6>::Identity();
        Eigen::Matrix<double, 6, 1> xi = H.ldlt().solve(rhs);
        if (!xi.allFinite())
            throw NumericalError("colored_icp: singular normal equations");

        const Vec3 omega{xi[0], xi[1], xi[2]};
        const Vec3 upd{xi[3], xi[4], xi[5]};
        const Mat3 dR = Mat3::axis_angle(omega, norm(omega));
        RigidTransform Tn;
        Tn.R = dR * T.R;
        Tn.t = dR * T.t + upd;
        T = Tn;

        if (xi.norm() < 1e-8) {
            res.converged = true;
            best_T = T;
            best_rmse = rmse;
            break;
        }
    }

    res.transform = res.stalled || res.converged ? best_T : T;
    res.rmse = best_rmse;
    return res;
}

// --- registration cases ---------------------------------------------------------

namespace {

double quantile(std::vector<double> v, double q) {
    size_t idx = size_t(std::clamp(q, 0.0, 1.0) * double(v.size() - 1));
    std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(idx), v.end());
    return v[idx];
}

PointCloud crop_by_x(const PointCloud& cloud, double threshold, bool keep_below) {
    PointCloud out;
    for (int i = 0; i < cloud.size(); ++i) {
        const double x = cloud.positions[size_t(i)].x;
        if ((keep_below && x <= threshold) || (!keep_below && x >= threshold)) {
            out.positions.push_back(cloud.positions[size_t(i)]);
            out.colors.push_back(cloud.colors[size_t(i)]);
        }
    }
    return out;
}

}  // namespace

std::vector<RegistrationCase> make_registration_cases(
    const std::vector<RegistrationInputs>& pairs, const std::vector<double>& overlaps,
    uint64_t seed, std::vector<std::string>* warnings) {
    std::vector<RegistrationCase> cases;
    Rng rng(seed);
    for (const RegistrationInputs& pr : pairs) {
        for (double overlap : overlaps) {
            if (overlap <= 0.0 || overlap > 1.0)
                throw ConfigError("registration: overlap must be in (0,1]");
            PointCloud src = pr.a, dst = pr.b;
            if (overlap < 0.999) {
                std::vector<double> xs(size_t(pr.a.size()));
                for (int i = 0; i < pr.a.size(); ++i) xs[size_t(i)] = pr.a.positions[size_t(i)].x;
                const double hi = quantile(xs, (1.0 + overlap) * 0.5);
                const double lo = quantile(xs, (1.0 - overlap) * 0.5);
                src = crop_by_x(pr.a, hi, true);
                dst = crop_by_x(pr.b, lo, false);
            }
            if (src.size() < 100 || dst.size() < 100) {
                if (warnings)
                    warnings->push_back("skipping " + pr.asset + " overlap " +
                                        std::to_string(overlap) + ": too few points after crop");
                continue;
            }

            RegistrationCase rc;
            rc.asset = pr.asset;
            rc.time_src = pr.time_a;
            rc.time_dst = pr.time_b;
            rc.overlap = overlap;

            // Random rigid perturbation: rotation <= 15 deg, translation <= 0.2.
            Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
            axis = normalized(axis);
            if (norm(axis) == 0.0) axis = {0, 0, 1};
            const double angle = deg2rad(rng.uniform(0.0, 15.0));
            Vec3 tdir{rng.normal(), rng.normal(), rng.normal()};
            tdir = normalized(tdir);
            const double tmag = rng.uniform(0.0, 0.2);
            rc.perturbation.R = Mat3::axis_angle(axis, angle);
            rc.perturbation.t = tdir * tmag;
            rc.ground_truth = rc.perturbation.inverse();

            rc.source.positions.reserve(size_t(src.size()));
            for (const Vec3& p : src.positions)
                rc.source.positions.push_back(rc.perturbation.apply(p));
            rc.source.colors = src.colors;
            rc.target = std::move(dst);
            cases.push_back(std::move(rc));
        }
    }
    return cases;
}

double registration_recall(const std::vector<RegistrationCase>& cases,
                           const std::vector<RigidTransform>& results,
                           const RecallThresholds& thresholds) {
    if (cases.size() != results.size())
        throw DataError("registration_recall: one result per case required");
    if (cases.empty()) return 0.0;
    int hits = 0;
    for (size_t i = 0; i < cases.size(); ++i) {
        const double re = rotation_error_deg(results[i].R, cases[i].ground_truth.R);
        const double te = norm(results[i].t - cases[i].ground_truth.t);
        if (re <= thresholds.rotation_deg && te <= thresholds.translation) ++hits;
    }
    return double(hits) / double(cases.size());
}

}  // namespace ipcd
