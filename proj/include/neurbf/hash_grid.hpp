#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neurbf/error.hpp"
#include "neurbf/geometry.hpp"
#include "neurbf/param_store.hpp"
#include "neurbf/rng.hpp"

namespace neurbf {

struct HashGridConfig {
  int levels = 8;
  int channels = 2;
  int log2_table = 14;
  int res_min = 16;
  int res_max = 256;
};

/// Multi-resolution feature grid with linear-interpolation kernels (one table per level).
/// Coarse levels whose (R+1)^D nodes fit in the table are indexed densely; the rest are hashed.
template <int D>
class HashGrid {
 public:
  static constexpr int kCorners = 1 << D;

  HashGrid() = default;

  explicit HashGrid(HashGridConfig cfg) : cfg_(cfg) {
    require(cfg.levels >= 1 && cfg.channels >= 1, ErrorKind::config, "HashGrid: levels and channels must be >= 1");
    require(cfg.log2_table >= 1 && cfg.log2_table <= 30, ErrorKind::config, "HashGrid: log2_table out of range");
    require(cfg.res_min >= 1 && cfg.res_max >= cfg.res_min, ErrorKind::config, "HashGrid: bad resolution range");
    const std::uint64_t table = std::uint64_t{1} << cfg.log2_table;
    const double growth =
        cfg.levels > 1 ? std::exp((std::log(cfg.res_max) - std::log(cfg.res_min)) / (cfg.levels - 1)) : 1.0;
    std::uint64_t offset = 0;
    for (int l = 0; l < cfg.levels; ++l) {
      Level lv;
      lv.resolution = l == cfg.levels - 1 && cfg.levels > 1
                          ? cfg.res_max
                          : static_cast<int>(std::floor(cfg.res_min * std::pow(growth, l) + 1e-9));
      require(l == 0 || lv.resolution > levels_.back().resolution, ErrorKind::config,
              "HashGrid: level resolutions must strictly increase (widen the range or use fewer levels)");
      std::uint64_t dense = 1;
      for (int j = 0; j < D; ++j) dense *= static_cast<std::uint64_t>(lv.resolution + 1);
      lv.dense = dense <= table;
      lv.size = lv.dense ? dense : table;
      lv.offset = offset;
      offset += lv.size * static_cast<std::uint64_t>(cfg.channels);
      levels_.push_back(lv);
    }
    total_ = offset;
  }

  HashGrid(const HashGrid& o) : cfg_(o.cfg_), levels_(o.levels_), total_(o.total_), off_(o.off_) {}
  HashGrid& operator=(const HashGrid& o) {
    cfg_ = o.cfg_;
    levels_ = o.levels_;
    total_ = o.total_;
    off_ = o.off_;
    return *this;
  }

  const HashGridConfig& config() const noexcept { return cfg_; }
  int levels() const noexcept { return cfg_.levels; }
  int channels() const noexcept { return cfg_.channels; }
  int output_dim() const noexcept { return cfg_.levels * cfg_.channels; }
  int resolution(int level) const { return levels_.at(static_cast<std::size_t>(level)).resolution; }
  bool dense(int level) const { return levels_.at(static_cast<std::size_t>(level)).dense; }
  std::size_t level_size(int level) const { return levels_.at(static_cast<std::size_t>(level)).size; }

  /// Trainable values across all level tables.
  std::size_t trainable_size() const noexcept { return static_cast<std::size_t>(total_); }
  std::size_t offset() const noexcept { return off_; }

  /// Number of forward queries whose input had to be clamped into [0, 1].
  std::size_t clamp_count() const noexcept { return clamps_.load(std::memory_order_relaxed); }

  /// Trainable size for a given configuration without building the grid.
  static std::size_t params_for(HashGridConfig cfg) { return HashGrid(cfg).trainable_size(); }

  void bind(ParamStore& store, double lr) { off_ = store.add("grid.tables", trainable_size(), lr); }

  void init_params(std::span<double> values, Rng& rng, double scale) const {
    for (std::size_t i = 0; i < trainable_size(); ++i) values[off_ + i] = rng.uniform(-scale, scale);
  }

  /// Row of `cell` within level `level`'s table (dense row-major with x fastest, or spatial hash).
  std::uint64_t hash_index(const std::array<std::uint32_t, D>& cell, int level) const {
    const Level& lv = levels_.at(static_cast<std::size_t>(level));
    if (lv.dense) {
      std::uint64_t idx = 0, stride = 1;
      for (int j = 0; j < D; ++j) {
        idx += cell[j] * stride;
        stride *= static_cast<std::uint64_t>(lv.resolution + 1);
      }
      return idx;
    }
    constexpr std::uint32_t primes[3] = {1u, 2654435761u, 805459861u};
    std::uint32_t h = 0;
    for (int j = 0; j < D; ++j) h ^= cell[j] * primes[j];
    return static_cast<std::uint64_t>(h) & (lv.size - 1);
  }

  /// Entries recorded per query for the backward pass.
  std::size_t tape_size() const noexcept { return static_cast<std::size_t>(cfg_.levels) * kCorners; }

  /// Interpolated features, levels concatenated in ascending order. Records the flat parameter row
  /// and weight of every touched corner in `rows`/`weights` (tape_size() each) when non-empty.
  void forward(Point<D> x, std::span<const double> params, std::span<double> out, std::span<std::uint64_t> rows,
               std::span<double> weights) const {
    bool clamped = false;
    for (int j = 0; j < D; ++j) {
      if (!(x[j] >= 0.0 && x[j] <= 1.0)) {
        x[j] = std::isnan(x[j]) ? 0.0 : std::clamp(x[j], 0.0, 1.0);
        clamped = true;
      }
    }
    if (clamped) clamps_.fetch_add(1, std::memory_order_relaxed);

    const auto C = static_cast<std::size_t>(cfg_.channels);
    for (int l = 0; l < cfg_.levels; ++l) {
      const Level& lv = levels_[static_cast<std::size_t>(l)];
      std::array<std::uint32_t, D> base{};
      std::array<double, D> frac{};
      for (int j = 0; j < D; ++j) {
        const double pos = x[j] * lv.resolution;
        const auto cell = std::min(static_cast<int>(std::floor(pos)), lv.resolution - 1);
        base[j] = static_cast<std::uint32_t>(cell);
        frac[j] = pos - cell;
      }
      double* o = out.data() + static_cast<std::size_t>(l) * C;
      for (std::size_t c = 0; c < C; ++c) o[c] = 0.0;
      for (int corner = 0; corner < kCorners; ++corner) {
        std::array<std::uint32_t, D> node = base;
        double w = 1.0;
        for (int j = 0; j < D; ++j) {
          if (corner & (1 << j)) {
            node[j] += 1;
            w *= frac[j];
          } else {
            w *= 1.0 - frac[j];
          }
        }
        const std::uint64_t row = off_ + lv.offset + hash_index(node, l) * C;
        const double* feat = params.data() + row;
        for (std::size_t c = 0; c < C; ++c) o[c] += w * feat[c];
        if (!rows.empty()) {
          rows[static_cast<std::size_t>(l * kCorners + corner)] = row;
          weights[static_cast<std::size_t>(l * kCorners + corner)] = w;
        }
      }
    }
  }

  std::vector<double> interp(const Point<D>& x, std::span<const double> params) const {
    std::vector<double> out(static_cast<std::size_t>(output_dim()));
    forward(x, params, out, {}, {});
    return out;
  }

  /// Scatters upstream * corner weight into every row touched by the paired forward.
  void backward(std::span<const std::uint64_t> rows, std::span<const double> weights, std::span<const double> upstream,
                std::span<double> grads) const {
    const auto C = static_cast<std::size_t>(cfg_.channels);
    for (int l = 0; l < cfg_.levels; ++l) {
      const double* up = upstream.data() + static_cast<std::size_t>(l) * C;
      for (int corner = 0; corner < kCorners; ++corner) {
        const auto t = static_cast<std::size_t>(l * kCorners + corner);
        const double w = weights[t];
        double* g = grads.data() + rows[t];
        for (std::size_t c = 0; c < C; ++c) g[c] += w * up[c];
      }
    }
  }

 private:
  struct Level {
    int resolution = 0;
    bool dense = true;
    std::uint64_t size = 0;    // rows
    std::uint64_t offset = 0;  // within the grid block, in values
  };

  HashGridConfig cfg_;
  std::vector<Level> levels_;
  std::uint64_t total_ = 0;
  std::size_t off_ = 0;
  mutable std::atomic<std::size_t> clamps_{0};
};

}  // namespace neurbf
