#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "neurbf/error.hpp"
#include "neurbf/geometry.hpp"

namespace neurbf {

struct Neighbor {
  double dist2 = std::numeric_limits<double>::infinity();
  std::uint32_t index = std::numeric_limits<std::uint32_t>::max();

  friend bool operator<(const Neighbor& a, const Neighbor& b) noexcept {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Static KD-tree over a fixed point set. Queries return neighbors ordered by
/// (squared distance, index), so results match a brute-force sort exactly.
template <int D>
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(std::span<const Point<D>> points, std::size_t leaf_size = 8)
      : points_(points.begin(), points.end()), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    require(points_.size() < std::numeric_limits<std::uint32_t>::max(), ErrorKind::config,
            "KdTree: too many points");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    if (!points_.empty()) build(0, static_cast<std::uint32_t>(points_.size()));
  }

  std::size_t size() const noexcept { return points_.size(); }
  const std::vector<Point<D>>& points() const noexcept { return points_; }

  /// The k nearest points, sorted. `out` is resized to min(k, size()).
  void knn(const Point<D>& q, std::size_t k, std::vector<Neighbor>& out) const {
    out.clear();
    k = std::min(k, points_.size());
    if (k == 0) return;
    out.reserve(k);
    search(0, q, k, out);
  }

  std::vector<Neighbor> knn(const Point<D>& q, std::size_t k) const {
    std::vector<Neighbor> out;
    knn(q, k, out);
    return out;
  }

  Neighbor nearest(const Point<D>& q) const {
    require(!points_.empty(), ErrorKind::logic, "KdTree::nearest on empty tree");
    std::vector<Neighbor> out;
    out.reserve(1);
    search(0, q, 1, out);
    return out.front();
  }

 private:
  struct Node {
    std::uint32_t begin = 0, end = 0;  // range in order_
    std::uint32_t left = 0, right = 0;  // children; 0 means leaf (root is never a child)
    int dim = 0;
    double split = 0.0;
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end, 0, 0, 0, 0.0});
    if (end - begin <= leaf_size_) return id;

    Point<D> lo = points_[order_[begin]], hi = lo;
    for (std::uint32_t i = begin + 1; i < end; ++i)
      for (int j = 0; j < D; ++j) {
        lo[j] = std::min(lo[j], points_[order_[i]][j]);
        hi[j] = std::max(hi[j], points_[order_[i]][j]);
      }
    int dim = 0;
    for (int j = 1; j < D; ++j)
      if (hi[j] - lo[j] > hi[dim] - lo[dim]) dim = j;
    if (hi[dim] == lo[dim]) return id;  // all coincident

    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       return points_[a][dim] < points_[b][dim] || (points_[a][dim] == points_[b][dim] && a < b);
                     });
    const double split = points_[order_[mid]][dim];
    const std::uint32_t left = build(begin, mid);
    const std::uint32_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    nodes_[id].dim = dim;
    nodes_[id].split = split;
    return id;
  }

  // `best` is kept sorted ascending, at most k entries.
  void search(std::uint32_t id, const Point<D>& q, std::size_t k, std::vector<Neighbor>& best) const {
    const Node& node = nodes_[id];
    if (node.left == 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const Neighbor cand{squared_distance<D>(q, points_[order_[i]]), order_[i]};
        if (best.size() < k) {
          best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
        } else if (cand < best.back()) {
          best.pop_back();
          best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
        }
      }
      return;
    }
    const double diff = q[node.dim] - node.split;
    const std::uint32_t near = diff < 0.0 ? node.left : node.right;
    const std::uint32_t far = diff < 0.0 ? node.right : node.left;
    search(near, q, k, best);
    // Points across the plane are at least diff^2 away; ties must still be visited.
    if (best.size() < k || diff * diff <= best.back().dist2) search(far, q, k, best);
  }

  std::vector<Point<D>> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_ = 8;
};

/// Reference k-nearest search by full sort; used by tests and tiny sets.
template <int D>
std::vector<Neighbor> brute_force_knn(std::span<const Point<D>> points, const Point<D>& q, std::size_t k) {
  std::vector<Neighbor> all(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    all[i] = Neighbor{squared_distance<D>(q, points[i]), static_cast<std::uint32_t>(i)};
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
  all.resize(k);
  return all;
}

}  // namespace neurbf
