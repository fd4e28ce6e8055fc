#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ipcd/config.hpp"

namespace ipcd::ad {

// Handle to a recorded tape node. Holds its own copy of the forward values;
// node is -1 only for default-constructed handles.
struct Tensor {
    int rows = 0, cols = 0;
    std::vector<double> values;
    int node = -1;

    int size() const { return rows * cols; }
    double scalar() const;  // requires 1x1
};

// Reverse-mode tape over 2-d tensors (scalars are 1x1). One tape per
// training step; recording order is the topological order.
class Tape {
  public:
    // Leaves: parameters get gradients, constants do not.
    Tensor leaf(int rows, int cols, std::span<const double> values);
    Tensor constant(int rows, int cols, std::span<const double> values);
    Tensor constant_scalar(double v);

    Tensor matmul(const Tensor& a, const Tensor& b);
    // Same-shape add, or b as a 1 x cols row vector broadcast over rows.
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
    Tensor scale(const Tensor& a, double c);
    Tensor relu(const Tensor& a);
    Tensor sigmoid(const Tensor& a);
    Tensor maximum(const Tensor& a, const Tensor& b);  // ties take a's gradient
    Tensor concat_cols(const Tensor& a, const Tensor& b);
    Tensor gather_rows(const Tensor& a, std::span<const int> indices);
    Tensor mean_all(const Tensor& a);
    Tensor sum_all(const Tensor& a);
    Tensor frobenius_norm(const Tensor& a);

    // Gradients of a scalar loss w.r.t. every grad-requiring leaf.
    // Visits each node exactly once, in reverse recording order.
    void backward(const Tensor& loss);

    // Gradient buffer of a leaf after backward (empty span if none).
    std::span<const double> grad(const Tensor& t) const;

    int node_count() const { return int(nodes_.size()); }

  private:
    enum class Op {
        Leaf, Const, MatMul, Add, AddRow, Sub, Mul, Scale, Relu, Sigmoid,
        Maximum, ConcatCols, GatherRows, MeanAll, SumAll, FroNorm
    };

    struct Node {
        Op op;
        int a = -1, b = -1;
        int rows = 0, cols = 0;
        std::vector<double> values;
        std::vector<int> indices;  // GatherRows
        double scalar_arg = 0.0;   // Scale
        bool requires_grad = false;
    };

    Tensor wrap(int node) const;
    int push(Node&& n);
    const Node& at(const Tensor& t, const char* op) const;
    static void check_same_shape(const char* op, const Node& a, const Node& b);

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
};

// Adam with bias correction.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<double> m, v;  // sized to the parameter vector on first use
};

void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& state);

// Max over coordinates of |analytic - central FD| / max(1e-8, |analytic| + |FD|).
// `coords` selects which coordinates to probe (empty = all).
double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> point, double eps, std::span<const double> analytic,
                  std::span<const int> coords = {});

}  // namespace ipcd::ad
