#include "ipcd/kdtree.hpp"

#include <algorithm>
#include <queue>

#include "ipcd/config.hpp"

namespace ipcd {

namespace {
constexpr int kLeafSize = 16;
}

void KdTree::build(const std::vector<Vec3>& points) {
    points_ = points;
    order_.resize(points.size());
    for (size_t i = 0; i < points.size(); ++i) order_[i] = int(i);
    nodes_.clear();
    nodes_.reserve(points.size() / kLeafSize * 2 + 4);
    if (!points.empty()) build_rec(0, int(points.size()));
}

int KdTree::build_rec(int begin, int end) {
    int id = int(nodes_.size());
    nodes_.push_back(Node{});
    if (end - begin <= kLeafSize) {
        nodes_[size_t(id)].begin = begin;
        nodes_[size_t(id)].end = end;
        return id;
    }
    Aabb box;
    for (int i = begin; i < end; ++i) box.expand(points_[size_t(order_[size_t(i)])]);
    Vec3 ext = box.hi - box.lo;
    int axis = 0;
    if (ext.y > ext.x) axis = 1;
    if (ext.z > ext[axis]) axis = 2;
    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         double pa = points_[size_t(a)][axis], pb = points_[size_t(b)][axis];
                         return pa < pb || (pa == pb && a < b);
                     });
    double split = points_[size_t(order_[size_t(mid)])][axis];
    int left = build_rec(begin, mid);
    int right = build_rec(mid, end);
    nodes_[size_t(id)].axis = axis;
    nodes_[size_t(id)].split = split;
    nodes_[size_t(id)].left = left;
    nodes_[size_t(id)].right = right;
    return id;
}

std::vector<int> KdTree::knn(const Vec3& query, int k, int exclude) const {
    if (k <= 0 || points_.empty()) return {};
    // Max-heap of (dist2, index); worst candidate on top. Ordering prefers
    // smaller distance then smaller index, so the heap evicts high-index ties.
    using Cand = std::pair<double, int>;
    auto worse = [](const Cand& a, const Cand& b) {
        return a.first < b.first || (a.first == b.first && a.second < b.second);
    };
    std::priority_queue<Cand, std::vector<Cand>, decltype(worse)> heap(worse);

    // Iterative traversal: visit near side first, prune far side by the
    // current worst distance.
    std::vector<int> stack;
    stack.reserve(64);
    stack.push_back(0);
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        const Node& nd = nodes_[size_t(id)];
        if (nd.axis < 0) {
            for (int i = nd.begin; i < nd.end; ++i) {
                int pi = order_[size_t(i)];
                if (pi == exclude) continue;
                double d2 = squared_norm(points_[size_t(pi)] - query);
                Cand c{d2, pi};
                if (int(heap.size()) < k)
                    heap.push(c);
                else if (worse(c, heap.top())) {
                    heap.pop();
                    heap.push(c);
                }
            }
            continue;
        }
        double delta = query[nd.axis] - nd.split;
        int near = delta <= 0.0 ? nd.left : nd.right;
        int far = delta <= 0.0 ? nd.right : nd.left;
        bool prune = int(heap.size()) == k && delta * delta > heap.top().first;
        if (!prune) stack.push_back(far);
        stack.push_back(near);
    }

    std::vector<Cand> cands;
    cands.reserve(heap.size());
    while (!heap.empty()) {
        cands.push_back(heap.top());
        heap.pop();
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        return a.first < b.first || (a.first == b.first && a.second < b.second);
    });
    std::vector<int> out;
    out.reserve(cands.size());
    for (const Cand& c : cands) out.push_back(c.second);
    return out;
}

int KdTree::nearest_within(const Vec3& query, double max_dist) const {
    std::vector<int> nn = knn(query, 1);
    if (nn.empty()) return -1;
    if (norm(points_[size_t(nn[0])] - query) > max_dist) return -1;
    return nn[0];
}

std::vector<int> knn_indices(const std::vector<Vec3>& positions, int k) {
    const int n = int(positions.size());
    if (k >= n)
        throw ConfigError("knn_indices: k=" + std::to_string(k) + " must be < N=" +
                          std::to_string(n));
    if (k < 1) throw ConfigError("knn_indices: k must be >= 1");
    KdTree tree(positions);
    std::vector<int> table(size_t(n) * size_t(k));
    for (int i = 0; i < n; ++i) {
        std::vector<int> nn = tree.knn(positions[size_t(i)], k, i);
        for (int j = 0; j < k; ++j) table[size_t(i) * size_t(k) + size_t(j)] = nn[size_t(j)];
    }
    return table;
}

}  // namespace ipcd
