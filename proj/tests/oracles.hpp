#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "neurbf/geometry.hpp"
#include "neurbf/hash_grid.hpp"
#include "neurbf/rbf.hpp"

namespace neurbf::testing {

/// Straight-line evaluation of the adaptive feature: full sort for the neighborhood, dense
/// quadratic forms, explicit normalization, then the composed sum.
template <int D>
std::vector<double> reference_aggregate(const Point<D>& x, const std::vector<Point<D>>& centers,
                                        const std::vector<SymMatrix<D>>& inv_shapes, const std::vector<double>& m,
                                        const std::vector<double>& w, const std::vector<double>& b, int k,
                                        bool normalize_weights = true) {
  std::vector<std::size_t> order(centers.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto d2 = [&](std::size_t i) {
    double s = 0.0;
    for (int j = 0; j < D; ++j) s += (x[j] - centers[i][j]) * (x[j] - centers[i][j]);
    return s;
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
    return d2(a) < d2(c) || (d2(a) == d2(c) && a < c);
  });
  std::vector<double> phi(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    Eigen::Matrix<double, D, 1> d;
    for (int j = 0; j < D; ++j) d[j] = x[j] - centers[order[i]][j];
    const double q = d.dot(inv_shapes[order[i]].dense() * d);
    phi[i] = 1.0 / (1.0 + q);
    sum += phi[i];
  }
  const std::size_t F = m.size();
  std::vector<double> out(F, 0.0);
  for (int i = 0; i < k; ++i) {
    const double p = normalize_weights ? phi[i] / (sum + 1e-12) : phi[i];
    for (std::size_t f = 0; f < F; ++f) out[f] += std::sin(p * m[f] + b[f]) * w[order[i] * F + f];
  }
  return out;
}

/// Table row of a lattice node, computed without the grid object.
template <int D>
std::uint64_t oracle_row(const std::array<std::uint32_t, D>& node, int res, std::uint64_t table) {
  std::uint64_t dense = 1;
  for (int j = 0; j < D; ++j) dense *= static_cast<std::uint64_t>(res + 1);
  if (dense <= table) {
    std::uint64_t idx = 0;
    for (int j = D - 1; j >= 0; --j) idx = idx * static_cast<std::uint64_t>(res + 1) + node[j];
    return idx;
  }
  const std::uint64_t primes[3] = {1, 2654435761ull, 805459861ull};
  std::uint64_t h = 0;
  for (int j = 0; j < D; ++j) h ^= (node[j] * primes[j]) & 0xffffffffull;
  return h % table;
}

/// Interpolation as a sum of tent functions over every lattice node of every level.
template <int D>
std::vector<double> oracle_interp(const HashGrid<D>& g, const Point<D>& x, std::span<const double> params) {
  const HashGridConfig& cfg = g.config();
  const std::uint64_t table = std::uint64_t{1} << cfg.log2_table;
  std::vector<double> out(static_cast<std::size_t>(g.output_dim()), 0.0);
  std::size_t level_off = 0;
  for (int l = 0; l < cfg.levels; ++l) {
    const int res = g.resolution(l);
    std::size_t nodes = 1;
    for (int j = 0; j < D; ++j) nodes *= static_cast<std::size_t>(res + 1);
    for (std::size_t n = 0; n < nodes; ++n) {
      std::array<std::uint32_t, D> node{};
      std::size_t rem = n;
      double w = 1.0;
      for (int j = 0; j < D; ++j) {
        node[j] = static_cast<std::uint32_t>(rem % static_cast<std::size_t>(res + 1));
        rem /= static_cast<std::size_t>(res + 1);
        w *= std::max(0.0, 1.0 - std::abs(x[j] * res - node[j]));
      }
      if (w == 0.0) continue;
      const std::size_t row = level_off + oracle_row<D>(node, res, table) * cfg.channels;
      for (int c = 0; c < cfg.channels; ++c) out[static_cast<std::size_t>(l * cfg.channels + c)] += w * params[row + c];
    }
    level_off += g.level_size(l) * static_cast<std::size_t>(cfg.channels);
  }
  return out;
}

/// Plain Lloyd iterations with brute-force nearest centers (lowest index wins ties) and
/// weighted means. Returns the final centers and the assignments of the last E-step.
template <int D>
std::pair<std::vector<Point<D>>, std::vector<std::uint32_t>> reference_kmeans(const std::vector<Point<D>>& pts,
                                                                              const std::vector<double>& weights,
                                                                              std::vector<Point<D>> centers, int iters) {
  std::vector<std::uint32_t> assign(pts.size(), 0);
  for (int it = 0; it < iters; ++it) {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < centers.size(); ++i) {
        double d2 = 0.0;
        for (int d = 0; d < D; ++d) d2 += (pts[j][d] - centers[i][d]) * (pts[j][d] - centers[i][d]);
        if (d2 < best) {
          best = d2;
          assign[j] = static_cast<std::uint32_t>(i);
        }
      }
    }
    for (std::size_t i = 0; i < centers.size(); ++i) {
      double w = 0.0;
      Point<D> s{};
      for (std::size_t j = 0; j < pts.size(); ++j) {
        if (assign[j] != i) continue;
        w += weights[j];
        for (int d = 0; d < D; ++d) s[d] += weights[j] * pts[j][d];
      }
      for (int d = 0; d < D; ++d) centers[i][d] = s[d] / w;
    }
  }
  return {centers, assign};
}

}  // namespace neurbf::testing
