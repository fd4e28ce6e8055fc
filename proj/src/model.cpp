#include "ipcd/model.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ipcd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void size_layer(DenseLayer& l, int in, int out) {
    l.w.rows = in;
    l.w.cols = out;
    l.w.v.assign(size_t(in) * size_t(out), 0.0);
    l.b.rows = 1;
    l.b.cols = out;
    l.b.v.assign(size_t(out), 0.0);
}

void size_encoder(EncoderParams& e, int width) {
    size_layer(e.in1, 6, width);
    size_layer(e.in2, width, width);
    size_layer(e.agg1, 2 * width, width);
    size_layer(e.agg2, 2 * width, width);
}

void size_head(HeadParams& h, int in, int hidden) {
    size_layer(h.h1, in, hidden);
    size_layer(h.h2, hidden, 3);
}

}  // namespace

ModelParams init_params(const InitConfig& cfg) {
    ModelParams p;
    p.variant = cfg.variant;
    p.use_pld = cfg.use_pld;
    p.use_refinement = cfg.use_refinement;
    p.shared_encoder = cfg.shared_encoder;
    if (!p.use_refinement) p.use_pld = false;  // no concat stage to feed
    p.width = cfg.width;
    p.head_hidden = cfg.head_hidden;
    p.pld_hidden = cfg.pld_hidden;

    if (p.variant == Variant::Base) {
        size_encoder(p.alb_encoder_b, p.width);
        size_encoder(p.shd_encoder_b, p.width);
        size_head(p.alb_head_b, p.width, p.head_hidden);
        size_head(p.shd_head_b, p.width, p.head_hidden);
    } else {
        size_encoder(p.encoder, p.width);
        if (!p.shared_encoder) size_encoder(p.shade_encoder, p.width);
        size_head(p.pre_albedo, p.width, p.head_hidden);
        size_head(p.pre_shade, p.width, p.head_hidden);
        if (p.use_refinement) {
            if (p.use_pld) {
                size_layer(p.pld.p1, 5, p.pld_hidden);
                size_layer(p.pld.p2, p.pld_hidden, p.pld_hidden);
                size_layer(p.pld.out, p.pld_hidden, 3);
                p.pld.grid_rows = cfg.pld_grid_rows;
                p.pld.grid_cols = cfg.pld_grid_cols;
            }
            size_head(p.refine_albedo, p.refine_input_dim(), p.head_hidden);
            size_head(p.refine_shade, p.refine_input_dim(), p.head_hidden);
        }
    }

    // Xavier-uniform weights, zero biases, in visit order.
    Rng rng(cfg.seed);
    p.visit([&](const std::string& name, ParamMatrix& m, ParamGroup) {
        const bool is_bias = name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0;
        if (is_bias) return;
        const double s = std::sqrt(6.0 / double(m.rows + m.cols));
        for (double& v : m.v) v = rng.uniform(-s, s);
    });
    return p;
}

// --- serialization -----------------------------------------------------------

void save_params(const ModelParams& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("params: cannot write '" + path + "'");
    out << "ipcd-params v1\n";
    out << "variant = " << (p.variant == Variant::Base ? "base" : "full") << "\n";
    out << "use_pld = " << int(p.use_pld) << "\n";
    out << "use_refinement = " << int(p.use_refinement) << "\n";
    out << "shared_encoder = " << int(p.shared_encoder) << "\n";
    out << "width = " << p.width << "\n";
    out << "head_hidden = " << p.head_hidden << "\n";
    out << "pld_hidden = " << p.pld_hidden << "\n";
    out << "pld_grid_rows = " << p.pld.grid_rows << "\n";
    out << "pld_grid_cols = " << p.pld.grid_cols << "\n";
    p.visit([&](const std::string& name, const ParamMatrix& m, ParamGroup) {
        out << "tensor " << name << " " << m.rows << " " << m.cols << "\n";
    });
    out << "end_header\n";
    p.visit([&](const std::string&, const ParamMatrix& m, ParamGroup) {
        out.write(reinterpret_cast<const char*>(m.v.data()),
                  std::streamsize(m.v.size() * sizeof(double)));
    });
    if (!out) throw DataError("params: write failed for '" + path + "'");
}

ModelParams load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("params: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != "ipcd-params v1")
        throw FormatError("params: bad magic/version in '" + path + "'");

    std::map<std::string, std::string> meta;
    std::vector<std::tuple<std::string, int, int>> manifest;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string a;
        ls >> a;
        if (a == "tensor") {
            std::string name;
            int r, c;
            ls >> name >> r >> c;
            manifest.emplace_back(name, r, c);
        } else {
            std::string eq, val;
            ls >> eq >> val;
            meta[a] = val;
        }
    }
    auto get_int = [&](const char* key) {
        auto it = meta.find(key);
        if (it == meta.end()) throw FormatError(std::string("params: missing '") + key + "'");
        return std::stoi(it->second);
    };

    InitConfig cfg;
    cfg.variant = meta["variant"] == "base" ? Variant::Base : Variant::Full;
    cfg.use_pld = get_int("use_pld") != 0;
    cfg.use_refinement = get_int("use_refinement") != 0;
    cfg.shared_encoder = get_int("shared_encoder") != 0;
    cfg.width = get_int("width");
    cfg.head_hidden = get_int("head_hidden");
    cfg.pld_hidden = get_int("pld_hidden");
    cfg.pld_grid_rows = get_int("pld_grid_rows");
    cfg.pld_grid_cols = get_int("pld_grid_cols");
    cfg.seed = 1;
    ModelParams p = init_params(cfg);

    size_t next = 0;
    p.visit([&](const std::string& name, ParamMatrix& m, ParamGroup) {
        if (next >= manifest.size())
            throw FormatError("params: manifest shorter than model in '" + path + "'");
        auto& [mname, r, c] = manifest[next++];
        if (mname != name || r != m.rows || c != m.cols)
            throw FormatError("params: manifest mismatch at '" + name + "' in '" + path + "'");
        in.read(reinterpret_cast<char*>(m.v.data()),
                std::streamsize(m.v.size() * sizeof(double)));
        if (!in) throw FormatError("params: truncated data at '" + name + "' in '" + path + "'");
    });
    if (next != manifest.size())
        throw FormatError("params: manifest longer than model in '" + path + "'");
    return p;
}

// --- batches -----------------------------------------------------------------

std::vector<double> pld_cell_features(const PLDMap& map, std::vector<double>* pool_weights) {
    const int rows = map.grid.rows(), cols = map.grid.cols();
    std::vector<double> row_w = map.grid.row_area_weights();
    std::vector<double> cells(size_t(rows) * size_t(cols) * 5);
    std::vector<double> pool(size_t(rows) * size_t(cols));
    double pool_sum = 0.0;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const size_t i = size_t(map.index(r, c));
            const Vec3& v = map.values[i];
            cells[i * 5 + 0] = v.x;
            cells[i * 5 + 1] = v.y;
            cells[i * 5 + 2] = v.z;
            cells[i * 5 + 3] = map.coverage[i];
            cells[i * 5 + 4] = row_w[size_t(r)];
            pool[i] = row_w[size_t(r)];
            pool_sum += pool[i];
        }
    }
    if (pool_weights) {
        for (double& w : pool) w /= pool_sum;
        *pool_weights = std::move(pool);
    }
    return cells;
}

BatchInputs make_batch(const IntrinsicTriplet& triplet, const PLDMap* map,
                       const std::vector<int>& sel, int k) {
    BatchInputs b;
    b.n = int(sel.size());
    if (b.n < 1) throw DataError("make_batch: empty selection");
    b.k = std::min(k, b.n - 1);

    std::vector<Vec3> pos(size_t(b.n));
    for (int i = 0; i < b.n; ++i) pos[size_t(i)] = triplet.cloud.positions[size_t(sel[size_t(i)])];
    if (b.k > 0) b.knn = knn_indices(pos, b.k);

    b.x.resize(size_t(b.n) * 6);
    const bool has_truth = !triplet.albedo.empty();
    if (has_truth) {
        b.truth_albedo.resize(size_t(b.n) * 3);
        b.truth_shade.resize(size_t(b.n) * 3);
        b.truth_input.resize(size_t(b.n) * 3);
    }
    for (int i = 0; i < b.n; ++i) {
        const int src = sel[size_t(i)];
        const Vec3& p = triplet.cloud.positions[size_t(src)];
        const Vec3& c = triplet.cloud.colors[size_t(src)];
        double* row = &b.x[size_t(i) * 6];
        row[0] = p.x;
        row[1] = p.y;
        row[2] = p.z;
        row[3] = c.x;
        row[4] = c.y;
        row[5] = c.z;
        if (has_truth) {
            for (int d = 0; d < 3; ++d) {
                b.truth_albedo[size_t(i) * 3 + size_t(d)] = triplet.albedo[size_t(src)][d];
                b.truth_shade[size_t(i) * 3 + size_t(d)] = triplet.shade[size_t(src)][d];
                b.truth_input[size_t(i) * 3 + size_t(d)] = c[d];
            }
        }
    }
    if (map) {
        b.pld_rows = map->grid.rows();
        b.pld_cols = map->grid.cols();
        b.pld_cells = pld_cell_features(*map, &b.pld_pool);
    }
    return b;
}

// --- tape forward --------------------------------------------------------------

ModelGraph::ModelGraph(ad::Tape& tape, const ModelParams& params)
    : tape_(&tape), params_(&params) {
    params.visit([&](const std::string&, const ParamMatrix& m, ParamGroup) {
        leaves_.push_back(tape_->leaf(m.rows, m.cols, m.v));
        leaf_keys_.push_back(&m);
    });
}

const ad::Tensor& ModelGraph::leaf_of(const ParamMatrix& m) const {
    for (size_t i = 0; i < leaf_keys_.size(); ++i)
        if (leaf_keys_[i] == &m) return leaves_[i];
    throw DataError("model graph: parameter tensor not registered");
}

ad::Tensor ModelGraph::dense(const ad::Tensor& x, const DenseLayer& l, bool with_relu) const {
    ad::Tensor y = tape_->add(tape_->matmul(x, leaf_of(l.w)), leaf_of(l.b));
    return with_relu ? tape_->relu(y) : y;
}

ad::Tensor ModelGraph::encode(const BatchInputs& in, const EncoderParams& enc) const {
    ad::Tensor x = tape_->constant(in.n, 6, in.x);
    ad::Tensor h = dense(x, enc.in1, true);
    h = dense(h, enc.in2, true);
    for (const DenseLayer* agg : {&enc.agg1, &enc.agg2}) {
        ad::Tensor mx = h;
        if (in.k > 0) {
            std::vector<int> col(size_t(in.n));
            for (int i = 0; i < in.n; ++i) col[size_t(i)] = in.knn[size_t(i) * size_t(in.k)];
            mx = tape_->gather_rows(h, col);
            for (int j = 1; j < in.k; ++j) {
                for (int i = 0; i < in.n; ++i)
                    col[size_t(i)] = in.knn[size_t(i) * size_t(in.k) + size_t(j)];
                mx = tape_->maximum(mx, tape_->gather_rows(h, col));
            }
        }
        // k == 0 degenerates to self-aggregation.
        h = dense(tape_->concat_cols(h, mx), *agg, true);
    }
    return h;
}

ad::Tensor ModelGraph::head(const ad::Tensor& x, const HeadParams& hp) const {
    return tape_->sigmoid(dense(dense(x, hp.h1, true), hp.h2, false));
}

ad::Tensor ModelGraph::pld_feature(const BatchInputs& in) const {
    const PldEncoderParams& pe = params_->pld;
    if (in.pld_rows != pe.grid_rows || in.pld_cols != pe.grid_cols)
        throw DataError("pld_encode: grid " + std::to_string(in.pld_rows) + "x" +
                        std::to_string(in.pld_cols) + " does not match trained params " +
                        std::to_string(pe.grid_rows) + "x" + std::to_string(pe.grid_cols));
    const int cells = in.pld_rows * in.pld_cols;
    ad::Tensor m = tape_->constant(cells, 5, in.pld_cells);
    ad::Tensor z = dense(m, pe.p1, true);
    z = dense(z, pe.p2, true);
    ad::Tensor pool = tape_->constant(1, cells, in.pld_pool);
    ad::Tensor pooled = tape_->matmul(pool, z);
    return dense(pooled, pe.out, false);  // 1x3 light feature
}

ModelGraph::TapePrediction ModelGraph::forward(const BatchInputs& in) const {
    const ModelParams& p = *params_;
    TapePrediction out;
    if (p.variant == Variant::Base) {
        out.albedo = head(encode(in, p.alb_encoder_b), p.alb_head_b);
        out.shade = head(encode(in, p.shd_encoder_b), p.shd_head_b);
        return out;
    }
    ad::Tensor feat = encode(in, p.encoder);
    ad::Tensor feat_shade = p.shared_encoder ? feat : encode(in, p.shade_encoder);
    ad::Tensor pre_a = head(feat, p.pre_albedo);
    ad::Tensor pre_s = head(feat_shade, p.pre_shade);
    if (!p.use_refinement) {
        out.albedo = pre_a;
        out.shade = pre_s;
        return out;
    }
    ad::Tensor parts = tape_->concat_cols(pre_a, pre_s);
    if (p.use_pld) {
        if (in.pld_cells.empty())
            throw DataError("forward: model uses the PLD feature but the batch has no PLD map");
        ad::Tensor light = pld_feature(in);
        std::vector<double> ones(size_t(in.n), 1.0);
        ad::Tensor broadcast = tape_->matmul(tape_->constant(in.n, 1, ones), light);
        parts = tape_->concat_cols(parts, broadcast);
    }
    out.pre_albedo = pre_a;
    out.pre_shade = pre_s;
    out.has_pre = true;
    out.albedo = head(parts, p.refine_albedo);
    out.shade = head(parts, p.refine_shade);
    return out;
}

ad::Tensor ModelGraph::loss_total(const TapePrediction& pred, const BatchInputs& in,
                                  const LossConfig& cfg, LossTerms* terms) const {
    if (in.truth_albedo.empty()) throw DataError("loss_total: batch has no ground truth");
    ad::Tensor A = tape_->constant(in.n, 3, in.truth_albedo);
    ad::Tensor S = tape_->constant(in.n, 3, in.truth_shade);
    ad::Tensor I = tape_->constant(in.n, 3, in.truth_input);

    LossTerms t;
    ad::Tensor total = tape_->constant_scalar(0.0);
    auto accumulate = [&](const ad::Tensor& term, double weight, double& slot) {
        slot = term.scalar();
        total = tape_->add(total, weight == 1.0 ? term : tape_->scale(term, weight));
    };

    if (cfg.use_alb)
        accumulate(tape_->frobenius_norm(tape_->sub(A, pred.albedo)), 1.0, t.alb);
    if (cfg.use_shd)
        accumulate(tape_->frobenius_norm(tape_->sub(S, pred.shade)), 1.0, t.shd);
    if (cfg.use_phy)
        accumulate(tape_->frobenius_norm(tape_->sub(I, tape_->mul(pred.albedo, pred.shade))),
                   1.0, t.phy);
    if (pred.has_pre && cfg.use_pre && cfg.lambda != 0.0) {
        accumulate(tape_->frobenius_norm(tape_->sub(A, pred.pre_albedo)), cfg.lambda, t.pre_alb);
        accumulate(tape_->frobenius_norm(tape_->sub(S, pred.pre_shade)), cfg.lambda, t.pre_shd);
        accumulate(
            tape_->frobenius_norm(tape_->sub(I, tape_->mul(pred.pre_albedo, pred.pre_shade))),
            cfg.lambda, t.pre_phy);
    }
    t.total = total.scalar();
    if (terms) *terms = t;
    return total;
}

ad::Tensor ModelGraph::loss_phase(const TapePrediction& pred, const BatchInputs& in, int phase,
                                  LossTerms* terms) const {
    if (in.truth_albedo.empty()) throw DataError("loss_phase: batch has no ground truth");
    LossTerms t;
    ad::Tensor total = tape_->constant_scalar(0.0);
    if (phase == 0) {
        ad::Tensor S = tape_->constant(in.n, 3, in.truth_shade);
        ad::Tensor shd = tape_->frobenius_norm(tape_->sub(S, pred.shade));
        t.shd = shd.scalar();
        total = tape_->add(total, shd);
    } else {
        ad::Tensor A = tape_->constant(in.n, 3, in.truth_albedo);
        ad::Tensor I = tape_->constant(in.n, 3, in.truth_input);
        ad::Tensor alb = tape_->frobenius_norm(tape_->sub(A, pred.albedo));
        ad::Tensor phy =
            tape_->frobenius_norm(tape_->sub(I, tape_->mul(pred.albedo, pred.shade)));
        t.alb = alb.scalar();
        t.phy = phy.scalar();
        total = tape_->add(tape_->add(total, alb), phy);
    }
    t.total = total.scalar();
    if (terms) *terms = t;
    return total;
}

// --- raw forward ----------------------------------------------------------------

namespace {

std::vector<double> raw_dense(const std::vector<double>& x, int n, const DenseLayer& l,
                              bool with_relu) {
    std::vector<double> y(size_t(n) * size_t(l.w.cols));
    ConstMatMap mx(x.data(), n, l.w.rows);
    ConstMatMap mw(l.w.v.data(), l.w.rows, l.w.cols);
    MatMap my(y.data(), n, l.w.cols);
    my.noalias() = mx * mw;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < l.w.cols; ++c) {
            double& v = y[size_t(r) * size_t(l.w.cols) + size_t(c)];
            v += l.b.v[size_t(c)];
            if (with_relu && v < 0.0) v = 0.0;
        }
    return y;
}

void sigmoid_inplace(std::vector<double>& v) {
    for (double& x : v)
        x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::vector<double> raw_encode(const BatchInputs& in, const EncoderParams& enc) {
    std::vector<double> h = raw_dense(in.x, in.n, enc.in1, true);
    h = raw_dense(h, in.n, enc.in2, true);
    const int w = enc.in2.w.cols;
    for (const DenseLayer* agg : {&enc.agg1, &enc.agg2}) {
        std::vector<double> cat(size_t(in.n) * size_t(2 * w));
        for (int i = 0; i < in.n; ++i) {
            double* row = &cat[size_t(i) * size_t(2 * w)];
            std::memcpy(row, &h[size_t(i) * size_t(w)], size_t(w) * sizeof(double));
            double* mx = row + w;
            if (in.k > 0) {
                const int* nb = &in.knn[size_t(i) * size_t(in.k)];
                std::memcpy(mx, &h[size_t(nb[0]) * size_t(w)], size_t(w) * sizeof(double));
                for (int j = 1; j < in.k; ++j) {
                    const double* hv = &h[size_t(nb[j]) * size_t(w)];
                    for (int c = 0; c < w; ++c)
                        if (hv[c] > mx[c]) mx[c] = hv[c];
                }
            } else {
                std::memcpy(mx, &h[size_t(i) * size_t(w)], size_t(w) * sizeof(double));
            }
        }
        h = raw_dense(cat, in.n, *agg, true);
    }
    return h;
}

std::vector<double> raw_head(const std::vector<double>& feat, int n, const HeadParams& hp) {
    std::vector<double> y = raw_dense(raw_dense(feat, n, hp.h1, true), n, hp.h2, false);
    sigmoid_inplace(y);
    return y;
}

std::vector<Vec3> rows_to_vec3(const std::vector<double>& m, int n) {
    std::vector<Vec3> out(size_t(n));
    for (int i = 0; i < n; ++i)
        out[size_t(i)] = {m[size_t(i) * 3], m[size_t(i) * 3 + 1], m[size_t(i) * 3 + 2]};
    return out;
}

Vec3 raw_pld_feature(const BatchInputs& in, const PldEncoderParams& pe) {
    if (in.pld_rows != pe.grid_rows || in.pld_cols != pe.grid_cols)
        throw DataError("pld_encode: grid " + std::to_string(in.pld_rows) + "x" +
                        std::to_string(in.pld_cols) + " does not match trained params " +
                        std::to_string(pe.grid_rows) + "x" + std::to_string(pe.grid_cols));
    const int cells = in.pld_rows * in.pld_cols;
    std::vector<double> z = raw_dense(in.pld_cells, cells, pe.p1, true);
    z = raw_dense(z, cells, pe.p2, true);
    const int ph = pe.p2.w.cols;
    std::vector<double> pooled(size_t(ph), 0.0);
    for (int i = 0; i < cells; ++i)
        for (int c = 0; c < ph; ++c)
            pooled[size_t(c)] += in.pld_pool[size_t(i)] * z[size_t(i) * size_t(ph) + size_t(c)];
    std::vector<double> light = raw_dense(pooled, 1, pe.out, false);
    return {light[0], light[1], light[2]};
}

}  // namespace

Prediction forward_batch_raw(const BatchInputs& in, const ModelParams& p) {
    Prediction out;
    if (p.variant == Variant::Base) {
        out.albedo = rows_to_vec3(raw_head(raw_encode(in, p.alb_encoder_b), in.n, p.alb_head_b),
                                  in.n);
        out.shade = rows_to_vec3(raw_head(raw_encode(in, p.shd_encoder_b), in.n, p.shd_head_b),
                                 in.n);
        return out;
    }
    std::vector<double> feat = raw_encode(in, p.encoder);
    std::vector<double> feat_shade =
        p.shared_encoder ? feat : raw_encode(in, p.shade_encoder);
    std::vector<double> pre_a = raw_head(feat, in.n, p.pre_albedo);
    std::vector<double> pre_s = raw_head(feat_shade, in.n, p.pre_shade);
    if (!p.use_refinement) {
        out.albedo = rows_to_vec3(pre_a, in.n);
        out.shade = rows_to_vec3(pre_s, in.n);
        return out;
    }
    const int dim = p.refine_input_dim();
    std::vector<double> parts(size_t(in.n) * size_t(dim));
    Vec3 light{0, 0, 0};
    if (p.use_pld) {
        if (in.pld_cells.empty())
            throw DataError("forward: model uses the PLD feature but the batch has no PLD map");
        light = raw_pld_feature(in, p.pld);
    }
    for (int i = 0; i < in.n; ++i) {
        double* row = &parts[size_t(i) * size_t(dim)];
        for (int d = 0; d < 3; ++d) {
            row[d] = pre_a[size_t(i) * 3 + size_t(d)];
            row[3 + d] = pre_s[size_t(i) * 3 + size_t(d)];
            if (p.use_pld) row[6 + d] = light[d];
        }
    }
    out.pre_albedo = rows_to_vec3(pre_a, in.n);
    out.pre_shade = rows_to_vec3(pre_s, in.n);
    out.albedo = rows_to_vec3(raw_head(parts, in.n, p.refine_albedo), in.n);
    out.shade = rows_to_vec3(raw_head(parts, in.n, p.refine_shade), in.n);
    return out;
}

namespace {

std::vector<int> identity_selection(int n) {
    std::vector<int> sel(size_t(n));
    for (int i = 0; i < n; ++i) sel[size_t(i)] = i;
    return sel;
}

IntrinsicTriplet cloud_only(const PointCloud& cloud) {
    IntrinsicTriplet t;
    t.cloud = cloud;
    return t;
}

}  // namespace

Prediction forward_full(const PointCloud& normalized, const PLDMap& map,
                        const ModelParams& params, int k) {
    BatchInputs in = make_batch(cloud_only(normalized), &map, identity_selection(normalized.size()), k);
    return forward_batch_raw(in, params);
}

Prediction forward_base(const PointCloud& normalized, const ModelParams& params, int k) {
    BatchInputs in =
        make_batch(cloud_only(normalized), nullptr, identity_selection(normalized.size()), k);
    return forward_batch_raw(in, params);
}

LossTerms loss_total_raw(const Prediction& pred, const IntrinsicTriplet& truth,
                         const LossConfig& cfg) {
    const int n = truth.size();
    if (int(pred.albedo.size()) != n || int(pred.shade.size()) != n)
        throw DataError("loss_total: prediction/truth size mismatch");
    auto fro = [n](const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            Vec3 d = a[size_t(i)] - b[size_t(i)];
            s += dot(d, d);
        }
        return std::sqrt(s);
    };
    auto fro_prod = [n](const std::vector<Vec3>& i_, const std::vector<Vec3>& a,
                        const std::vector<Vec3>& s_) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            Vec3 d = i_[size_t(i)] - a[size_t(i)].cwise(s_[size_t(i)]);
            s += dot(d, d);
        }
        return std::sqrt(s);
    };
    LossTerms t;
    if (cfg.use_alb) t.alb = fro(truth.albedo, pred.albedo);
    if (cfg.use_shd) t.shd = fro(truth.shade, pred.shade);
    if (cfg.use_phy) t.phy = fro_prod(truth.cloud.colors, pred.albedo, pred.shade);
    t.total = t.alb + t.shd + t.phy;
    if (cfg.use_pre && !pred.pre_albedo.empty() && cfg.lambda != 0.0) {
        t.pre_alb = fro(truth.albedo, pred.pre_albedo);
        t.pre_shd = fro(truth.shade, pred.pre_shade);
        t.pre_phy = fro_prod(truth.cloud.colors, pred.pre_albedo, pred.pre_shade);
        t.total += cfg.lambda * (t.pre_alb + t.pre_shd + t.pre_phy);
    }
    return t;
}

// --- training ---------------------------------------------------------------------

TrainConfig TrainConfig::from_config(const ConfigDoc& doc) {
    TrainConfig cfg;
    cfg.iterations = int(doc.get_int("train", "iterations", cfg.iterations));
    cfg.batch_points = int(doc.get_int("train", "batch_points", cfg.batch_points));
    cfg.k = int(doc.get_int("train", "k", cfg.k));
    cfg.lr = doc.get_double("train", "lr", cfg.lr);
    cfg.beta1 = doc.get_double("train", "beta1", cfg.beta1);
    cfg.beta2 = doc.get_double("train", "beta2", cfg.beta2);
    cfg.eps = doc.get_double("train", "eps", cfg.eps);
    cfg.seed = uint64_t(doc.get_int("train", "seed", long(cfg.seed)));
    std::string variant = doc.get_string("train", "variant", "full");
    if (variant == "base")
        cfg.variant = Variant::Base;
    else if (variant == "full")
        cfg.variant = Variant::Full;
    else
        throw ConfigError("[train] variant must be base|full, got '" + variant + "'");
    std::string mode = doc.get_string("train", "mode", "");
    if (mode.empty())
        cfg.mode = cfg.variant == Variant::Base ? TrainMode::StepByStep : TrainMode::Simultaneous;
    else if (mode == "simultaneous")
        cfg.mode = TrainMode::Simultaneous;
    else if (mode == "step_by_step")
        cfg.mode = TrainMode::StepByStep;
    else
        throw ConfigError("[train] mode must be simultaneous|step_by_step, got '" + mode + "'");
    cfg.use_pld = doc.get_bool("train", "use_pld", cfg.use_pld);
    cfg.use_refinement = doc.get_bool("train", "use_refinement", cfg.use_refinement);
    cfg.shared_encoder = doc.get_bool("train", "shared_encoder", cfg.shared_encoder);
    cfg.width = int(doc.get_int("train", "width", cfg.width));
    cfg.head_hidden = int(doc.get_int("train", "head_hidden", cfg.head_hidden));
    cfg.pld_hidden = int(doc.get_int("train", "pld_hidden", cfg.pld_hidden));
    cfg.loss.lambda = doc.get_double("train", "lambda", cfg.loss.lambda);
    cfg.loss.use_alb = doc.get_bool("train", "loss_alb", true);
    cfg.loss.use_shd = doc.get_bool("train", "loss_shd", true);
    cfg.loss.use_phy = doc.get_bool("train", "loss_phy", true);
    cfg.loss.use_pre = doc.get_bool("train", "loss_pre", true);
    if (cfg.iterations < 1 || cfg.batch_points < 1 || cfg.k < 1)
        throw ConfigError("[train] iterations, batch_points and k must be positive");
    return cfg;
}

TrainSample make_train_sample(const IntrinsicTriplet& raw, const PLDMap* precomputed,
                              int image_size, double point_size) {
    TrainSample s;
    auto [cloud, tf] = normalize_cloud(raw.cloud);
    s.triplet.cloud = std::move(cloud);
    s.triplet.albedo = raw.albedo;
    s.triplet.shade = raw.shade;
    s.triplet.sun = raw.sun;
    if (precomputed)
        s.pld = *precomputed;
    else
        s.pld = compute_pld(s.triplet.cloud, HemisphereGrid::with_step(), image_size, point_size);
    return s;
}

TrainSample make_train_sample_no_pld(const IntrinsicTriplet& raw) {
    TrainSample s;
    auto [cloud, tf] = normalize_cloud(raw.cloud);
    s.triplet.cloud = std::move(cloud);
    s.triplet.albedo = raw.albedo;
    s.triplet.shade = raw.shade;
    s.triplet.sun = raw.sun;
    return s;
}

TrainResult train(const std::vector<TrainSample>& data, const TrainConfig& cfg) {
    if (data.empty()) throw DataError("train: empty dataset");
    if (cfg.variant == Variant::Full && cfg.mode == TrainMode::StepByStep)
        throw ConfigError("train: the full variant trains simultaneously (shared encoder)");

    InitConfig init;
    init.variant = cfg.variant;
    init.use_pld = cfg.use_pld;
    init.use_refinement = cfg.use_refinement;
    init.shared_encoder = cfg.shared_encoder;
    init.width = cfg.width;
    init.head_hidden = cfg.head_hidden;
    init.pld_hidden = cfg.pld_hidden;
    if (!data[0].pld.values.empty()) {
        init.pld_grid_rows = data[0].pld.grid.rows();
        init.pld_grid_cols = data[0].pld.grid.cols();
    }
    init.seed = cfg.seed;

    TrainResult result;
    result.params = init_params(init);
    const bool needs_pld = result.params.variant == Variant::Full && result.params.use_pld;
    if (needs_pld)
        for (const TrainSample& s : data)
            if (s.pld.values.empty()) throw DataError("train: sample is missing its PLD map");

    // Parameter registry in visit order; AdamState per tensor.
    std::vector<ParamMatrix*> tensors;
    std::vector<ParamGroup> groups;
    result.params.visit([&](const std::string&, ParamMatrix& m, ParamGroup g) {
        tensors.push_back(&m);
        groups.push_back(g);
    });
    std::vector<ad::AdamState> adam(tensors.size());
    for (ad::AdamState& st : adam) {
        st.lr = cfg.lr;
        st.beta1 = cfg.beta1;
        st.beta2 = cfg.beta2;
        st.eps = cfg.eps;
    }

    Rng rng(cfg.seed ^ 0x5ca1ab1eull);
    const int half = cfg.iterations / 2;
    result.history.reserve(size_t(cfg.iterations));

    for (int it = 0; it < cfg.iterations; ++it) {
        const int phase = cfg.mode == TrainMode::StepByStep ? (it < half ? 0 : 1) : 0;
        const TrainSample& s = data[rng.uniform_int(data.size())];
        const int n = s.triplet.size();
        std::vector<int> sel = rng.sample_without_replacement(n, std::min(cfg.batch_points, n));
        BatchInputs batch = make_batch(s.triplet, needs_pld ? &s.pld : nullptr, sel, cfg.k);

        ad::Tape tape;
        ModelGraph graph(tape, result.params);
        ModelGraph::TapePrediction pred = graph.forward(batch);
        LossTerms terms;
        ad::Tensor loss = cfg.mode == TrainMode::StepByStep
                              ? graph.loss_phase(pred, batch, phase, &terms)
                              : graph.loss_total(pred, batch, cfg.loss, &terms);
        tape.backward(loss);

        for (size_t t = 0; t < tensors.size(); ++t) {
            if (cfg.mode == TrainMode::StepByStep) {
                const ParamGroup want = phase == 0 ? ParamGroup::Shade : ParamGroup::Albedo;
                if (groups[t] != want) continue;
            }
            std::span<const double> g = tape.grad(graph.leaves()[t]);
            if (g.empty()) continue;
            adam_step(tensors[t]->v, g, adam[t]);
        }
        result.history.push_back(HistoryRow{it, phase, terms});
    }
    return result;
}

void save_history_csv(const std::vector<HistoryRow>& history, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("history: cannot write '" + path + "'");
    out << "iteration,phase,total,alb,shd,phy,pre_alb,pre_shd,pre_phy\n";
    char buf[320];
    for (const HistoryRow& h : history) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      h.iteration, h.phase, h.terms.total, h.terms.alb, h.terms.shd, h.terms.phy,
                      h.terms.pre_alb, h.terms.pre_shd, h.terms.pre_phy);
        out << buf;
    }
}

Prediction infer(const PointCloud& cloud, const PLDMap* map, const ModelParams& params, int k) {
    cloud.validate();
    auto [normalized, tf] = normalize_cloud(cloud);
    if (params.variant == Variant::Full && params.use_pld && map == nullptr)
        throw DataError(
            "infer: full-variant params need a PLD map; compute one with the pld command and "
            "pass it in");
    BatchInputs in = make_batch(cloud_only(normalized),
                                params.variant == Variant::Full && params.use_pld ? map : nullptr,
                                identity_selection(normalized.size()), k);
    return forward_batch_raw(in, params);
}

}  // namespace ipcd
