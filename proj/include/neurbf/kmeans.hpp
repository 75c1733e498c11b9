#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "neurbf/error.hpp"
#include "neurbf/geometry.hpp"
#include "neurbf/kdtree.hpp"
#include "neurbf/rbf.hpp"
#include "neurbf/rng.hpp"

namespace neurbf {

template <int D>
struct WeightedPointSet {
  std::vector<Point<D>> points;
  std::vector<double> weights;

  void validate() const {
    require(points.size() == weights.size(), ErrorKind::config, "point/weight count mismatch");
    bool any = false;
    for (std::size_t j = 0; j < points.size(); ++j) {
      for (int d = 0; d < D; ++d)
        require(std::isfinite(points[j][d]), ErrorKind::config, "non-finite point coordinate");
      require(std::isfinite(weights[j]) && weights[j] >= 0.0, ErrorKind::config,
              "point weights must be finite and non-negative");
      any = any || weights[j] > 0.0;
    }
    require(any, ErrorKind::config, "all point weights are zero");
  }

  std::size_t positive_count() const {
    return static_cast<std::size_t>(std::count_if(weights.begin(), weights.end(), [](double w) { return w > 0.0; }));
  }
};

template <int D>
struct ClusterResult {
  std::vector<Point<D>> centers;
  std::vector<std::uint32_t> assignments;
  std::vector<double> objective;        // weighted SSE after each iteration
  std::vector<int> reseed_iterations;   // iterations in which an empty cluster was re-seeded
};

/// Weighted sampling of `n` distinct points without replacement (exponential keys).
/// Zero-weight points never consume random draws.
template <int D>
std::vector<Point<D>> weighted_sample_centers(const WeightedPointSet<D>& pts, std::size_t n, Rng& rng) {
  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(pts.positive_count());
  for (std::size_t j = 0; j < pts.points.size(); ++j) {
    if (!(pts.weights[j] > 0.0)) continue;
    keys.emplace_back(std::log(rng.uniform_open()) / pts.weights[j], j);
  }
  require(n <= keys.size(), ErrorKind::config,
          "requested " + std::to_string(n) + " centers but only " + std::to_string(keys.size()) +
              " points have positive weight");
  auto larger = [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); };
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(n), keys.end(), larger);
  std::vector<Point<D>> centers(n);
  for (std::size_t i = 0; i < n; ++i) centers[i] = pts.points[keys[i].second];
  return centers;
}

/// Weighted SSE of an assignment against centers.
template <int D>
double kmeans_objective(const WeightedPointSet<D>& pts, std::span<const Point<D>> centers,
                        std::span<const std::uint32_t> assignments) {
  double sum = 0.0;
  for (std::size_t j = 0; j < pts.points.size(); ++j)
    sum += pts.weights[j] * squared_distance<D>(pts.points[j], centers[assignments[j]]);
  return sum;
}

/// Lloyd iterations from given centers: assign to the nearest center (ties to the lowest index),
/// then move every center to the weighted mean of its points. A cluster left with zero weight is
/// re-seeded at the worst-fit point.
template <int D>
ClusterResult<D> weighted_kmeans_from(const WeightedPointSet<D>& pts, std::vector<Point<D>> centers, int iters) {
  pts.validate();
  require(iters >= 1, ErrorKind::config, "weighted_kmeans: iterations must be >= 1");
  require(!centers.empty(), ErrorKind::config, "weighted_kmeans: no initial centers");
  const std::size_t M = pts.points.size();
  const std::size_t N = centers.size();

  ClusterResult<D> res;
  res.assignments.assign(M, 0);
  std::vector<double> dist2(M);
  std::vector<double> sum_w(N);
  std::vector<Point<D>> sum_x(N);

  for (int it = 0; it < iters; ++it) {
    const KdTree<D> tree(centers);
    for (std::size_t j = 0; j < M; ++j) {
      const Neighbor nb = tree.nearest(pts.points[j]);
      res.assignments[j] = nb.index;
      dist2[j] = nb.dist2;
    }

    bool reseeded = false;
    for (;;) {
      std::fill(sum_w.begin(), sum_w.end(), 0.0);
      for (auto& s : sum_x) s.fill(0.0);
      for (std::size_t j = 0; j < M; ++j) {
        const double w = pts.weights[j];
        const std::uint32_t a = res.assignments[j];
        sum_w[a] += w;
        for (int d = 0; d < D; ++d) sum_x[a][d] += w * pts.points[j][d];
      }
      const auto empty = std::find_if(sum_w.begin(), sum_w.end(), [](double w) { return !(w > 0.0); });
      if (empty == sum_w.end()) break;

      // Move the empty cluster onto the point contributing the most weighted error.
      const auto e = static_cast<std::uint32_t>(empty - sum_w.begin());
      std::size_t worst = M;
      double worst_cost = -1.0;
      for (std::size_t j = 0; j < M; ++j) {
        if (!(pts.weights[j] > 0.0)) continue;
        const double cost = pts.weights[j] * dist2[j];
        if (cost > worst_cost) {
          worst_cost = cost;
          worst = j;
        }
      }
      require(worst < M && worst_cost > 0.0, ErrorKind::config,
              "weighted_kmeans: more clusters than distinct weighted points");
      centers[e] = pts.points[worst];
      res.assignments[worst] = e;
      dist2[worst] = 0.0;
      reseeded = true;
    }
    if (reseeded) res.reseed_iterations.push_back(it);

    for (std::size_t i = 0; i < N; ++i)
      for (int d = 0; d < D; ++d) centers[i][d] = sum_x[i][d] / sum_w[i];
    res.objective.push_back(kmeans_objective<D>(pts, centers, res.assignments));
  }
  res.centers = std::move(centers);
  return res;
}

/// Weighted K-Means with centers seeded by weighted sampling without replacement.
template <int D>
ClusterResult<D> weighted_kmeans(const WeightedPointSet<D>& pts, std::size_t n, int iters, Rng& rng) {
  pts.validate();
  require(n >= 1, ErrorKind::config, "weighted_kmeans: need at least one center");
  return weighted_kmeans_from<D>(pts, weighted_sample_centers<D>(pts, n, rng), iters);
}

/// Mean distance from each center to its nearest other center.
template <int D>
double mean_center_spacing(std::span<const Point<D>> centers) {
  if (centers.size() < 2) return 1.0;
  const KdTree<D> tree(centers);
  double sum = 0.0;
  std::vector<Neighbor> nb;
  for (const auto& c : centers) {
    tree.knn(c, 2, nb);
    sum += std::sqrt(nb.back().dist2);
  }
  return sum / static_cast<double>(centers.size());
}

/// Default shape regularizer: (0.25 * mean nearest-center spacing)^2.
template <int D>
double default_shape_regularizer(std::span<const Point<D>> centers) {
  const double s = 0.25 * mean_center_spacing<D>(centers);
  return s * s;
}

template <int D>
struct ShapeInit {
  std::vector<SymMatrix<D>> shapes;      // Sigma_i
  std::vector<SymMatrix<D>> inv_shapes;  // Sigma_i^-1
};

/// Weighted scatter of each cluster about its center, plus reg * I. A cluster with zero total
/// weight falls back to s^2 * I with s the mean nearest-center spacing.
template <int D>
ShapeInit<D> init_shapes(const WeightedPointSet<D>& pts, const ClusterResult<D>& result, double reg) {
  require(result.assignments.size() == pts.points.size(), ErrorKind::logic, "init_shapes: assignment size mismatch");
  require(reg >= 0.0 && std::isfinite(reg), ErrorKind::config, "init_shapes: regularizer must be >= 0");
  const std::size_t N = result.centers.size();
  std::vector<SymMatrix<D>> scatter(N);
  std::vector<double> total(N, 0.0);
  for (std::size_t j = 0; j < pts.points.size(); ++j) {
    const std::uint32_t a = result.assignments[j];
    require(a < N, ErrorKind::logic, "init_shapes: assignment out of range");
    const double w = pts.weights[j];
    if (!(w > 0.0)) continue;
    double d[D];
    for (int r = 0; r < D; ++r) d[r] = pts.points[j][r] - result.centers[a][r];
    for (int r = 0; r < D; ++r)
      for (int c = r; c < D; ++c) scatter[a](r, c) += w * d[r] * d[c];
    total[a] += w;
  }

  double fallback = -1.0;
  ShapeInit<D> out;
  out.shapes.resize(N);
  out.inv_shapes.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    SymMatrix<D> s;
    if (total[i] > 0.0) {
      for (std::size_t u = 0; u < s.upper.size(); ++u) s.upper[u] = scatter[i].upper[u] / total[i];
      for (int r = 0; r < D; ++r) s(r, r) += reg;
    } else {
      if (fallback < 0.0) {
        const double sp = mean_center_spacing<D>(result.centers);
        fallback = sp * sp;
      }
      s = SymMatrix<D>::identity(fallback);
    }
    require(is_spd(s), ErrorKind::config,
            "init_shapes: shape " + std::to_string(i) + " is singular (use a positive regularizer)");
    out.shapes[i] = s;
    out.inv_shapes[i] = spd_inverse(s);
  }
  return out;
}

inline constexpr double kImageWeightFloor = 1e-6;

/// Per-pixel gradient magnitude (central differences, replicated border) over all channels,
/// floored at 1e-6. `pixels` is row-major H x W x channels.
inline std::vector<double> image_weights(std::span<const double> pixels, int height, int width, int channels) {
  require(height >= 2 && width >= 2, ErrorKind::config, "image_weights: image must be at least 2x2");
  require(pixels.size() == static_cast<std::size_t>(height) * width * channels, ErrorKind::logic,
          "image_weights: buffer size mismatch");
  auto at = [&](int r, int c, int ch) {
    r = std::clamp(r, 0, height - 1);
    c = std::clamp(c, 0, width - 1);
    return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  };
  std::vector<double> w(static_cast<std::size_t>(height) * width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      double s = 0.0;
      for (int ch = 0; ch < channels; ++ch) {
        const double gx = 0.5 * (at(r, c + 1, ch) - at(r, c - 1, ch));
        const double gy = 0.5 * (at(r + 1, c, ch) - at(r - 1, c, ch));
        s += gx * gx + gy * gy;
      }
      w[static_cast<std::size_t>(r) * width + c] = std::max(std::sqrt(s), kImageWeightFloor);
    }
  return w;
}

/// 1 / (|sdf| + 1e-9).
inline std::vector<double> sdf_weights(std::span<const double> sdf) {
  std::vector<double> w(sdf.size());
  for (std::size_t j = 0; j < sdf.size(); ++j) w[j] = 1.0 / (std::abs(sdf[j]) + 1e-9);
  return w;
}

}  // namespace neurbf
