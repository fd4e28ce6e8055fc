#pragma once

#include <vector>

#include "ipcd/geometry.hpp"

namespace ipcd {

// Static 3-d tree over a point set. Queries are exact; equal distances are
// broken toward the lower point index so results are permutation-stable.
class KdTree {
  public:
    KdTree() = default;
    explicit KdTree(const std::vector<Vec3>& points) { build(points); }

    void build(const std::vector<Vec3>& points);

    int size() const { return int(points_.size()); }

    // k nearest neighbors of `query`; `exclude` removes one index (for
    // self-queries). Returns indices ordered by (distance, index).
    std::vector<int> knn(const Vec3& query, int k, int exclude = -1) const;

    // Nearest neighbor within `max_dist`; -1 if none.
    int nearest_within(const Vec3& query, double max_dist) const;

  private:
    struct Node {
        int axis = -1;       // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf range into order_
    };

    int build_rec(int begin, int end);

    std::vector<Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

// N x k nearest-neighbor index table, self excluded, ties to lower index.
// Throws ConfigError when k >= N.
std::vector<int> knn_indices(const std::vector<Vec3>& positions, int k);

}  // namespace ipcd
