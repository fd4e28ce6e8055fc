#include "ipcd/autodiff.hpp"

#include <Eigen/Core>

#include <cassert>
#include <cmath>

namespace ipcd::ad {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::string shape_str(int r, int c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

double Tensor::scalar() const {
    if (rows != 1 || cols != 1)
        throw DataError("tensor: scalar() on " + shape_str(rows, cols) + " tensor");
    return values[0];
}

Tensor Tape::wrap(int node) const {
    const Node& n = nodes_[size_t(node)];
    Tensor t;
    t.rows = n.rows;
    t.cols = n.cols;
    t.values = n.values;
    t.node = node;
    return t;
}

int Tape::push(Node&& n) {
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

const Tape::Node& Tape::at(const Tensor& t, const char* op) const {
    if (t.node < 0 || t.node >= int(nodes_.size()))
        throw DataError(std::string(op) + ": operand is not on this tape");
    return nodes_[size_t(t.node)];
}

void Tape::check_same_shape(const char* op, const Node& a, const Node& b) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw DataError(std::string(op) + ": shape mismatch " + shape_str(a.rows, a.cols) +
                        " vs " + shape_str(b.rows, b.cols));
}

Tensor Tape::leaf(int rows, int cols, std::span<const double> values) {
    if (int(values.size()) != rows * cols)
        throw DataError("leaf: " + shape_str(rows, cols) + " needs " +
                        std::to_string(rows * cols) + " values, got " +
                        std::to_string(values.size()));
    Node n;
    n.op = Op::Leaf;
    n.rows = rows;
    n.cols = cols;
    n.values.assign(values.begin(), values.end());
    n.requires_grad = true;
    return wrap(push(std::move(n)));
}

Tensor Tape::constant(int rows, int cols, std::span<const double> values) {
    if (int(values.size()) != rows * cols)
        throw DataError("constant: " + shape_str(rows, cols) + " needs " +
                        std::to_string(rows * cols) + " values, got " +
                        std::to_string(values.size()));
    Node n;
    n.op = Op::Const;
    n.rows = rows;
    n.cols = cols;
    n.values.assign(values.begin(), values.end());
    n.requires_grad = false;
    return wrap(push(std::move(n)));
}

Tensor Tape::constant_scalar(double v) {
    double arr[1] = {v};
    return constant(1, 1, arr);
}

Tensor Tape::matmul(const Tensor& ta, const Tensor& tb) {
    const Node& a = at(ta, "matmul");
    const Node& b = at(tb, "matmul");
    if (a.cols != b.rows)
        throw DataError("matmul: inner dimensions differ, " + shape_str(a.rows, a.cols) + " * " +
                        shape_str(b.rows, b.cols));
    Node n;
    n.op = Op::MatMul;
    n.a = ta.node;
    n.b = tb.node;
    n.rows = a.rows;
    n.cols = b.cols;
    n.values.resize(size_t(n.rows) * size_t(n.cols));
    ConstMatMap ma(a.values.data(), a.rows, a.cols);
    ConstMatMap mb(b.values.data(), b.rows, b.cols);
    MatMap mo(n.values.data(), n.rows, n.cols);
    mo.noalias() = ma * mb;
    n.requires_grad = a.requires_grad || b.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::add(const Tensor& ta, const Tensor& tb) {
    const Node& a = at(ta, "add");
    const Node& b = at(tb, "add");
    const bool row_broadcast = b.rows == 1 && a.rows != 1;
    if (!row_broadcast) check_same_shape("add", a, b);
    if (row_broadcast && a.cols != b.cols)
        throw DataError("add: row broadcast needs matching cols, " + shape_str(a.rows, a.cols) +
                        " vs " + shape_str(b.rows, b.cols));
    Node n;
    n.op = row_broadcast ? Op::AddRow : Op::Add;
    n.a = ta.node;
    n.b = tb.node;
    n.rows = a.rows;
    n.cols = a.cols;
    n.values.resize(a.values.size());
    if (row_broadcast) {
        for (int r = 0; r < a.rows; ++r)
            for (int c = 0; c < a.cols; ++c)
                n.values[size_t(r) * size_t(a.cols) + size_t(c)] =
                    a.values[size_t(r) * size_t(a.cols) + size_t(c)] + b.values[size_t(c)];
    } else {
        for (size_t i = 0; i < a.values.size(); ++i) n.values[i] = a.values[i] + b.values[i];
    }
    n.requires_grad = a.requires_grad || b.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::sub(const Tensor& ta, const Tensor& tb) {
    const Node& a = at(ta, "sub");
    const Node& b = at(tb, "sub");
    check_same_shape("sub", a, b);
    Node n;
    n.op = Op::Sub;
    n.a = ta.node;
    n.b = tb.node;
    n.rows = a.rows;
    n.cols = a.cols;
    n.values.resize(a.values.size());
    for (size_t i = 0; i < a.values.size(); ++i) n.values[i] = a.values[i] - b.values[i];
    n.requires_grad = a.requires_grad || b.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::mul(const Tensor& ta, const Tensor& tb) {
    const Node& a = at(ta, "mul");
    const Node& b = at(tb, "mul");
    check_same_shape("mul", a, b);
    Node n;
    n.op = Op::Mul;
    n.a = ta.node;
    n.b = tb.node;
    n.rows = a.rows;
    n.cols = a.cols;
    n.values.resize(a.values.size());
    for (size_t i = 0; i < a.values.size(); ++i) n.values[i] = a.values[i] * b.values[i];
    n.requires_grad = a.requires_grad || b.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::scale(const Tensor& ta, double c) {
    const Node& a = at(ta, "scale");
    Node n;
    n.op = Op::Scale;
    n.a = ta.node;
    n.rows = a.rows;
    n.cols = a.cols;
    n.scalar_arg = c;
    n.values.resize(a.values.size());
    for (size_t i = 0; i < a.values.size(); ++i) n.values[i] = a.values[i] * c;
    n.requires_grad = a.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::relu(const Tensor& ta) {
    const Node& a = at(ta, "relu");
    Node n;
    n.op = Op::Relu;
    n.a = ta.node;
    n.rows = a.rows;
    n.cols = a.cols;
    n.values.resize(a.values.size());
    for (size_t i = 0; i < a.values.size(); ++i) n.values[i] = a.values[i] > 0.0 ? a.values[i] : 0.0;
    n.requires_grad = a.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::sigmoid(const Tensor& ta) {
    const Node& a = at(ta, "sigmoid");
    Node n;
    n.op = Op::Sigmoid;
    n.a = ta.node;
    n.rows = a.rows;
    n.cols = a.cols;
    n.values.resize(a.values.size());
    for (size_t i = 0; i < a.values.size(); ++i) {
        double x = a.values[i];
        // Stable in both tails.
        n.values[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                               : std::exp(x) / (1.0 + std::exp(x));
    }
    n.requires_grad = a.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::maximum(const Tensor& ta, const Tensor& tb) {
    const Node& a = at(ta, "maximum");
    const Node& b = at(tb, "maximum");
    check_same_shape("maximum", a, b);
    Node n;
    n.op = Op::Maximum;
    n.a = ta.node;
    n.b = tb.node;
    n.rows = a.rows;
    n.cols = a.cols;
    n.values.resize(a.values.size());
    for (size_t i = 0; i < a.values.size(); ++i)
        n.values[i] = a.values[i] >= b.values[i] ? a.values[i] : b.values[i];
    n.requires_grad = a.requires_grad || b.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::concat_cols(const Tensor& ta, const Tensor& tb) {
    const Node& a = at(ta, "concat_cols");
    const Node& b = at(tb, "concat_cols");
    if (a.rows != b.rows)
        throw DataError("concat_cols: row counts differ, " + shape_str(a.rows, a.cols) + " vs " +
                        shape_str(b.rows, b.cols));
    Node n;
    n.op = Op::ConcatCols;
    n.a = ta.node;
    n.b = tb.node;
    n.rows = a.rows;
    n.cols = a.cols + b.cols;
    n.values.resize(size_t(n.rows) * size_t(n.cols));
    for (int r = 0; r < n.rows; ++r) {
        for (int c = 0; c < a.cols; ++c)
            n.values[size_t(r) * size_t(n.cols) + size_t(c)] =
                a.values[size_t(r) * size_t(a.cols) + size_t(c)];
        for (int c = 0; c < b.cols; ++c)
            n.values[size_t(r) * size_t(n.cols) + size_t(a.cols + c)] =
                b.values[size_t(r) * size_t(b.cols) + size_t(c)];
    }
    n.requires_grad = a.requires_grad || b.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::gather_rows(const Tensor& ta, std::span<const int> indices) {
    const Node& a = at(ta, "gather_rows");
    for (int idx : indices)
        if (idx < 0 || idx >= a.rows)
            throw DataError("gather_rows: index " + std::to_string(idx) + " outside " +
                            std::to_string(a.rows) + " rows");
    Node n;
    n.op = Op::GatherRows;
    n.a = ta.node;
    n.rows = int(indices.size());
    n.cols = a.cols;
    n.indices.assign(indices.begin(), indices.end());
    n.values.resize(size_t(n.rows) * size_t(n.cols));
    for (int r = 0; r < n.rows; ++r)
        std::copy_n(a.values.begin() + size_t(n.indices[size_t(r)]) * size_t(a.cols),
                    size_t(a.cols), n.values.begin() + size_t(r) * size_t(a.cols));
    n.requires_grad = a.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::mean_all(const Tensor& ta) {
    const Node& a = at(ta, "mean_all");
    Node n;
    n.op = Op::MeanAll;
    n.a = ta.node;
    n.rows = n.cols = 1;
    double s = 0.0;
    for (double v : a.values) s += v;
    n.values = {s / double(a.values.size())};
    n.requires_grad = a.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::sum_all(const Tensor& ta) {
    const Node& a = at(ta, "sum_all");
    Node n;
    n.op = Op::SumAll;
    n.a = ta.node;
    n.rows = n.cols = 1;
    double s = 0.0;
    for (double v : a.values) s += v;
    n.values = {s};
    n.requires_grad = a.requires_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::frobenius_norm(const Tensor& ta) {
    const Node& a = at(ta, "frobenius_norm");
    Node n;
    n.op = Op::FroNorm;
    n.a = ta.node;
    n.rows = n.cols = 1;
    double s = 0.0;
    for (double v : a.values) s += v * v;
    n.values = {std::sqrt(s)};
    n.requires_grad = a.requires_grad;
    return wrap(push(std::move(n)));
}

void Tape::backward(const Tensor& loss) {
    const Node& ln = at(loss, "backward");
    if (ln.rows != 1 || ln.cols != 1)
        throw DataError("backward: loss must be scalar, got " + shape_str(ln.rows, ln.cols));
    if (!std::isfinite(ln.values[0])) throw NumericalError("backward: loss is not finite");

    grads_.assign(nodes_.size(), {});
    auto ensure = [&](int id) -> std::vector<double>& {
        std::vector<double>& g = grads_[size_t(id)];
        if (g.empty()) g.assign(nodes_[size_t(id)].values.size(), 0.0);
        return g;
    };
    ensure(loss.node)[0] = 1.0;

    for (int id = loss.node; id >= 0; --id) {
        const Node& n = nodes_[size_t(id)];
        const std::vector<double>& g = grads_[size_t(id)];
        if (g.empty() || !n.requires_grad) continue;
        const Node* a = n.a >= 0 ? &nodes_[size_t(n.a)] : nullptr;
        const Node* b = n.b >= 0 ? &nodes_[size_t(n.b)] : nullptr;
        const bool need_a = a && a->requires_grad;
        const bool need_b = b && b->requires_grad;

        switch (n.op) {
            case Op::Leaf:
            case Op::Const:
                break;
            case Op::MatMul: {
                ConstMatMap mg(g.data(), n.rows, n.cols);
                if (need_a) {
                    ConstMatMap mb(b->values.data(), b->rows, b->cols);
                    MatMap mda(ensure(n.a).data(), a->rows, a->cols);
                    mda.noalias() += mg * mb.transpose();
                }
                if (need_b) {
                    ConstMatMap ma(a->values.data(), a->rows, a->cols);
                    MatMap mdb(ensure(n.b).data(), b->rows, b->cols);
                    mdb.noalias() += ma.transpose() * mg;
                }
                break;
            }
            case Op::Add: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                }
                if (need_b) {
                    std::vector<double>& db = ensure(n.b);
                    for (size_t i = 0; i < g.size(); ++i) db[i] += g[i];
                }
                break;
            }
            case Op::AddRow: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                }
                if (need_b) {
                    std::vector<double>& db = ensure(n.b);
                    for (int r = 0; r < n.rows; ++r)
                        for (int c = 0; c < n.cols; ++c)
                            db[size_t(c)] += g[size_t(r) * size_t(n.cols) + size_t(c)];
                }
                break;
            }
            case Op::Sub: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                }
                if (need_b) {
                    std::vector<double>& db = ensure(n.b);
                    for (size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b->values[i];
                }
                if (need_b) {
                    std::vector<double>& db = ensure(n.b);
                    for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a->values[i];
                }
                break;
            }
            case Op::Scale: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.scalar_arg;
                }
                break;
            }
            case Op::Relu: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    for (size_t i = 0; i < g.size(); ++i)
                        if (a->values[i] > 0.0) da[i] += g[i];
                }
                break;
            }
            case Op::Sigmoid: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    for (size_t i = 0; i < g.size(); ++i) {
                        double y = n.values[i];
                        da[i] += g[i] * y * (1.0 - y);
                    }
                }
                break;
            }
            case Op::Maximum: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    for (size_t i = 0; i < g.size(); ++i)
                        if (a->values[i] >= b->values[i]) da[i] += g[i];
                }
                if (need_b) {
                    std::vector<double>& db = ensure(n.b);
                    for (size_t i = 0; i < g.size(); ++i)
                        if (b->values[i] > a->values[i]) db[i] += g[i];
                }
                break;
            }
            case Op::ConcatCols: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    for (int r = 0; r < n.rows; ++r)
                        for (int c = 0; c < a->cols; ++c)
                            da[size_t(r) * size_t(a->cols) + size_t(c)] +=
                                g[size_t(r) * size_t(n.cols) + size_t(c)];
                }
                if (need_b) {
                    std::vector<double>& db = ensure(n.b);
                    for (int r = 0; r < n.rows; ++r)
                        for (int c = 0; c < b->cols; ++c)
                            db[size_t(r) * size_t(b->cols) + size_t(c)] +=
                                g[size_t(r) * size_t(n.cols) + size_t(a->cols + c)];
                }
                break;
            }
            case Op::GatherRows: {
                if (need_a) {
                    // Scatter-add; duplicate indices accumulate.
                    std::vector<double>& da = ensure(n.a);
                    for (int r = 0; r < n.rows; ++r) {
                        const size_t src = size_t(r) * size_t(n.cols);
                        const size_t dst = size_t(n.indices[size_t(r)]) * size_t(n.cols);
                        for (int c = 0; c < n.cols; ++c) da[dst + size_t(c)] += g[src + size_t(c)];
                    }
                }
                break;
            }
            case Op::MeanAll: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    const double s = g[0] / double(da.size());
                    for (double& v : da) v += s;
                }
                break;
            }
            case Op::SumAll: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    for (double& v : da) v += g[0];
                }
                break;
            }
            case Op::FroNorm: {
                if (need_a) {
                    std::vector<double>& da = ensure(n.a);
                    const double nrm = n.values[0];
                    if (nrm > 0.0) {
                        const double s = g[0] / nrm;
                        for (size_t i = 0; i < da.size(); ++i) da[i] += s * a->values[i];
                    }
                }
                break;
            }
        }
    }
}

std::span<const double> Tape::grad(const Tensor& t) const {
    if (t.node < 0 || t.node >= int(grads_.size())) return {};
    return grads_[size_t(t.node)];
}

void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& state) {
    if (params.size() != grads.size())
        throw DataError("adam_step: params/grads size mismatch (" + std::to_string(params.size()) +
                        " vs " + std::to_string(grads.size()) + ")");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size())
        throw DataError("adam_step: state sized for a different parameter vector");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> point, double eps, std::span<const double> analytic,
                  std::span<const int> coords) {
    if (point.size() != analytic.size())
        throw DataError("grad_check: point/analytic size mismatch");
    std::vector<double> x(point.begin(), point.end());
    std::vector<int> all;
    if (coords.empty()) {
        all.resize(point.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
        coords = all;
    }
    double worst = 0.0;
    for (int i : coords) {
        const double orig = x[size_t(i)];
        x[size_t(i)] = orig + eps;
        const double fp = f(x);
        x[size_t(i)] = orig - eps;
        const double fm = f(x);
        x[size_t(i)] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericalError("grad_check: non-finite evaluation");
        const double fd = (fp - fm) / (2.0 * eps);
        const double a = analytic[size_t(i)];
        const double rel = std::abs(a - fd) / std::max(1e-8, std::abs(a) + std::abs(fd));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace ipcd::ad
