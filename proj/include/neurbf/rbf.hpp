#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neurbf/error.hpp"
#include "neurbf/geometry.hpp"
#include "neurbf/kdtree.hpp"
#include "neurbf/param_store.hpp"
#include "neurbf/rng.hpp"

namespace neurbf {

template <int D>
inline constexpr int kSymSize = D * (D + 1) / 2;

/// Symmetric D x D matrix stored as its upper triangle, row by row:
/// (0,0) (0,1) .. (0,D-1) (1,1) .. (D-1,D-1).
template <int D>
struct SymMatrix {
  std::array<double, kSymSize<D>> upper{};

  static constexpr int slot(int i, int j) noexcept {
    if (i > j) std::swap(i, j);
    return i * D - i * (i - 1) / 2 + (j - i);
  }
  double operator()(int i, int j) const noexcept { return upper[slot(i, j)]; }
  double& operator()(int i, int j) noexcept { return upper[slot(i, j)]; }

  static SymMatrix identity(double s = 1.0) {
    SymMatrix m;
    for (int i = 0; i < D; ++i) m(i, i) = s;
    return m;
  }

  Eigen::Matrix<double, D, D> dense() const {
    Eigen::Matrix<double, D, D> a;
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j) a(i, j) = (*this)(i, j);
    return a;
  }
  static SymMatrix from_dense(const Eigen::Matrix<double, D, D>& a) {
    SymMatrix m;
    for (int i = 0; i < D; ++i)
      for (int j = i; j < D; ++j) m(i, j) = 0.5 * (a(i, j) + a(j, i));
    return m;
  }

  friend bool operator==(const SymMatrix&, const SymMatrix&) = default;
};

/// Cholesky test for positive definiteness.
template <int D>
bool is_spd(const SymMatrix<D>& m) {
  for (double v : m.upper)
    if (!std::isfinite(v)) return false;
  Eigen::LLT<Eigen::Matrix<double, D, D>> llt(m.dense());
  if (llt.info() != Eigen::Success) return false;
  for (int i = 0; i < D; ++i)
    if (!(llt.matrixL()(i, i) > 0.0)) return false;
  return true;
}

template <int D>
SymMatrix<D> spd_inverse(const SymMatrix<D>& m) {
  require(is_spd(m), ErrorKind::logic, "spd_inverse: matrix is not positive definite");
  Eigen::LLT<Eigen::Matrix<double, D, D>> llt(m.dense());
  return SymMatrix<D>::from_dense(llt.solve(Eigen::Matrix<double, D, D>::Identity()));
}

/// (x - c)^T A (x - c).
template <int D>
inline double quadratic_form(const Point<D>& x, const Point<D>& c, const SymMatrix<D>& a) noexcept {
  double d[D];
  for (int j = 0; j < D; ++j) d[j] = x[j] - c[j];
  double q = 0.0;
  for (int i = 0; i < D; ++i) {
    q += a(i, i) * d[i] * d[i];
    for (int j = i + 1; j < D; ++j) q += 2.0 * a(i, j) * d[i] * d[j];
  }
  return q;
}

/// Inverse-quadratic anisotropic kernel 1 / (1 + (x-c)^T inv_shape (x-c)); in (0, 1].
template <int D>
inline double kernel_iq(const Point<D>& x, const Point<D>& c, const SymMatrix<D>& inv_shape) noexcept {
  return 1.0 / (1.0 + quadratic_form<D>(x, c, inv_shape));
}

inline constexpr double kNormEps = 1e-12;

/// Partition-of-unity normalization over a neighborhood. An all-zero input yields uniform weights.
inline void normalize(std::span<const double> values, std::span<double> out) {
  require(values.size() == out.size() && !values.empty(), ErrorKind::logic, "normalize: size mismatch");
  double sum = 0.0;
  for (double v : values) sum += v;
  if (!(sum > 0.0)) {
    const double u = 1.0 / static_cast<double>(values.size());
    for (double& o : out) o = u;
    return;
  }
  const double denom = sum + kNormEps;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] / denom;
}

inline std::vector<double> normalize(std::span<const double> values) {
  std::vector<double> out(values.size());
  normalize(values, out);
  return out;
}

/// Geometric progression of `count` frequencies from `low` to `high` inclusive.
inline std::vector<double> freq_ladder(double low, double high, int count) {
  require(count >= 1, ErrorKind::config, "freq_ladder: count must be >= 1");
  require(low > 0.0 && std::isfinite(high), ErrorKind::config, "freq_ladder: frequencies must be positive");
  require(low <= high, ErrorKind::config, "freq_ladder: low frequency exceeds high frequency");
  if (count == 1) {
    require(low == high, ErrorKind::config, "freq_ladder: a single frequency needs low == high");
    return {low};
  }
  std::vector<double> m(static_cast<std::size_t>(count));
  const double step = (std::log(high) - std::log(low)) / (count - 1);
  for (int i = 0; i < count; ++i) m[static_cast<std::size_t>(i)] = std::exp(std::log(low) + step * i);
  m.front() = low;
  m.back() = high;
  return m;
}

/// sin(phi * m + b), elementwise.
inline std::vector<double> sin_compose(double phi, std::span<const double> m, std::span<const double> b) {
  require(m.size() == b.size(), ErrorKind::logic, "sin_compose: size mismatch");
  std::vector<double> out(m.size());
  for (std::size_t f = 0; f < m.size(); ++f) out[f] = std::sin(phi * m[f] + b[f]);
  return out;
}

struct RbfOptions {
  int neighbors = 4;        // |U(x)|
  bool normalize = true;    // partition of unity over U(x)
  bool compose = true;      // multi-frequency sinusoidal composition
};

/// Neighborhood of one query: k center indices and their (normalized) kernel values.
struct Neighborhood {
  std::vector<std::uint32_t> indices;
  std::vector<double> weights;
};

/// Adaptive anisotropic RBFs with fixed centers/shapes and trainable features w (N x F) and phase b (F).
/// Trainable values live in a ParamStore; this object holds their offsets.
template <int D>
class RbfEncoding {
 public:
  RbfEncoding() = default;

  RbfEncoding(std::vector<Point<D>> centers, std::vector<SymMatrix<D>> inv_shapes, std::vector<double> freq,
              RbfOptions options)
      : centers_(std::move(centers)), inv_shapes_(std::move(inv_shapes)), freq_(std::move(freq)), opt_(options) {
    require(!centers_.empty(), ErrorKind::config, "RbfEncoding: no centers");
    require(centers_.size() == inv_shapes_.size(), ErrorKind::config, "RbfEncoding: centers/shapes count mismatch");
    require(opt_.neighbors >= 1, ErrorKind::config, "RbfEncoding: neighborhood size must be >= 1");
    require(centers_.size() >= static_cast<std::size_t>(opt_.neighbors), ErrorKind::config,
            "RbfEncoding: " + std::to_string(centers_.size()) + " centers is fewer than the neighborhood size " +
                std::to_string(opt_.neighbors));
    require(!freq_.empty(), ErrorKind::config, "RbfEncoding: empty frequency ladder");
    for (std::size_t f = 1; f < freq_.size(); ++f)
      require(freq_[f] > freq_[f - 1], ErrorKind::config, "RbfEncoding: frequencies must strictly increase");
    for (std::size_t i = 0; i < centers_.size(); ++i) {
      for (int j = 0; j < D; ++j)
        require(centers_[i][j] >= 0.0 && centers_[i][j] <= 1.0, ErrorKind::config,
                "RbfEncoding: center " + std::to_string(i) + " outside the unit box");
      require(is_spd(inv_shapes_[i]), ErrorKind::config,
              "RbfEncoding: inverse shape " + std::to_string(i) + " is not positive definite");
    }
    index_ = KdTree<D>(centers_);
  }

  std::size_t count() const noexcept { return centers_.size(); }
  int features() const noexcept { return static_cast<int>(freq_.size()); }
  int neighbors() const noexcept { return opt_.neighbors; }
  const RbfOptions& options() const noexcept { return opt_; }
  const std::vector<Point<D>>& centers() const noexcept { return centers_; }
  const std::vector<SymMatrix<D>>& inv_shapes() const noexcept { return inv_shapes_; }
  const std::vector<double>& freq() const noexcept { return freq_; }
  const KdTree<D>& index() const noexcept { return index_; }

  std::size_t feature_offset() const noexcept { return w_off_; }
  std::size_t phase_offset() const noexcept { return b_off_; }

  /// Number of trainable values (w and b).
  std::size_t trainable_size() const noexcept { return count() * freq_.size() + freq_.size(); }

  /// Registers "rbf.features" and "rbf.phase".
  void bind(ParamStore& store, double lr) {
    w_off_ = store.add("rbf.features", count() * freq_.size(), lr);
    b_off_ = store.add("rbf.phase", freq_.size(), lr);
  }

  /// Uniform feature init in [-scale, scale]; phase starts at zero.
  void init_params(std::span<double> values, Rng& rng, double scale) const {
    const std::size_t n = count() * freq_.size();
    for (std::size_t i = 0; i < n; ++i) values[w_off_ + i] = rng.uniform(-scale, scale);
    for (std::size_t f = 0; f < freq_.size(); ++f) values[b_off_ + f] = 0.0;
  }

  /// Fills k indices and normalized kernel values for query x.
  void neighborhood(const Point<D>& x, std::span<std::uint32_t> idx, std::span<double> phi,
                    std::vector<Neighbor>& scratch) const {
    const auto k = static_cast<std::size_t>(opt_.neighbors);
    index_.knn(x, k, scratch);
    for (std::size_t i = 0; i < k; ++i) {
      idx[i] = scratch[i].index;
      phi[i] = kernel_iq<D>(x, centers_[idx[i]], inv_shapes_[idx[i]]);
    }
    if (opt_.normalize) normalize(phi.first(k), phi.first(k));
  }

  Neighborhood neighborhood(const Point<D>& x) const {
    Neighborhood nb;
    nb.indices.resize(static_cast<std::size_t>(opt_.neighbors));
    nb.weights.resize(static_cast<std::size_t>(opt_.neighbors));
    std::vector<Neighbor> scratch;
    neighborhood(x, nb.indices, nb.weights, scratch);
    return nb;
  }

  /// Size of the per-sample buffer `forward` records for `backward` (sin and cos per neighbor/channel).
  std::size_t tape_size() const noexcept { return 2 * static_cast<std::size_t>(opt_.neighbors) * freq_.size(); }

  /// g_b(x) = sum_i sin(phi_i * m + b) (.) w_i over the neighborhood; plain sum_i phi_i w_i when
  /// composition is disabled. `tape` (tape_size() values) may be empty when no backward follows.
  void forward(std::span<const std::uint32_t> idx, std::span<const double> phi, std::span<const double> params,
               std::span<double> out, std::span<double> tape) const {
    const std::size_t F = freq_.size();
    const std::size_t k = idx.size();
    const double* b = params.data() + b_off_;
    for (std::size_t f = 0; f < F; ++f) out[f] = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double* w = params.data() + w_off_ + static_cast<std::size_t>(idx[i]) * F;
      if (!opt_.compose) {
        for (std::size_t f = 0; f < F; ++f) out[f] += phi[i] * w[f];
        continue;
      }
      double* s = tape.empty() ? nullptr : tape.data() + i * F;
      double* c = tape.empty() ? nullptr : tape.data() + (k + i) * F;
      for (std::size_t f = 0; f < F; ++f) {
        const double arg = phi[i] * freq_[f] + b[f];
        const double sv = std::sin(arg);
        if (s) {
          s[f] = sv;
          c[f] = std::cos(arg);
        }
        out[f] += sv * w[f];
      }
    }
  }

  /// Accumulates d/dw_i and d/db for one query given d(loss)/d(g_b).
  void backward(std::span<const std::uint32_t> idx, std::span<const double> phi, std::span<const double> params,
                std::span<const double> upstream, std::span<const double> tape, std::span<double> grads) const {
    const std::size_t F = freq_.size();
    const std::size_t k = idx.size();
    double* gb = grads.data() + b_off_;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t row = static_cast<std::size_t>(idx[i]) * F;
      const double* w = params.data() + w_off_ + row;
      double* gw = grads.data() + w_off_ + row;
      if (!opt_.compose) {
        for (std::size_t f = 0; f < F; ++f) gw[f] += phi[i] * upstream[f];
        continue;
      }
      const double* s = tape.data() + i * F;
      const double* c = tape.data() + (k + i) * F;
      for (std::size_t f = 0; f < F; ++f) {
        gw[f] += s[f] * upstream[f];
        gb[f] += c[f] * w[f] * upstream[f];
      }
    }
  }

  /// Single-query convenience forward.
  std::vector<double> aggregate(const Point<D>& x, std::span<const double> params) const {
    const Neighborhood nb = neighborhood(x);
    std::vector<double> out(freq_.size());
    forward(nb.indices, nb.weights, params, out, {});
    return out;
  }

  /// Single-query backward paired with a recorded neighborhood; rejects a neighborhood that is not x's.
  void aggregate_backward(const Point<D>& x, const Neighborhood& nb, std::span<const double> params,
                          std::span<const double> upstream, std::span<double> grads) const {
    const Neighborhood now = neighborhood(x);
    require(now.indices == nb.indices, ErrorKind::logic,
            "aggregate_backward: neighborhood does not match the forward query");
    std::vector<double> out(freq_.size()), tape(tape_size());
    forward(nb.indices, nb.weights, params, out, tape);
    backward(nb.indices, nb.weights, params, upstream, tape, grads);
  }

  /// Per-center parameter count used by the budget rule (center + shape + features).
  static constexpr std::size_t params_per_center(int features) noexcept {
    return static_cast<std::size_t>(D + kSymSize<D> + features);
  }

 private:
  std::vector<Point<D>> centers_;
  std::vector<SymMatrix<D>> inv_shapes_;
  std::vector<double> freq_;
  RbfOptions opt_;
  KdTree<D> index_;
  std::size_t w_off_ = 0;
  std::size_t b_off_ = 0;
};

}  // namespace neurbf
