#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neurbf/error.hpp"
#include "neurbf/rng.hpp"

namespace neurbf {

/// A named slice of the flat parameter vector. `lr_scale` multiplies the global learning rate.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  double lr_scale = 1.0;
};

/// Flat storage for every trainable value plus a same-shape gradient array.
/// Segments are appended contiguously, so they are disjoint and cover the array.
class ParamStore {
 public:
  /// Appends a segment of `length` zeros and returns its offset.
  std::size_t add(std::string name, std::size_t length, double lr_scale) {
    require(lr_scale > 0.0 && std::isfinite(lr_scale), ErrorKind::config,
            "segment '" + name + "': learning-rate scale must be positive");
    require(find(name) == nullptr, ErrorKind::logic, "duplicate segment '" + name + "'");
    const std::size_t offset = values_.size();
    segments_.push_back(Segment{std::move(name), offset, length, lr_scale});
    values_.resize(offset + length, 0.0);
    grads_.resize(offset + length, 0.0);
    return offset;
  }

  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> grads() noexcept { return grads_; }
  std::span<const double> grads() const noexcept { return grads_; }

  const std::vector<Segment>& segments() const noexcept { return segments_; }

  const Segment* find(std::string_view name) const noexcept {
    for (const auto& s : segments_)
      if (s.name == name) return &s;
    return nullptr;
  }

  const Segment& segment(std::string_view name) const {
    const Segment* s = find(name);
    require(s != nullptr, ErrorKind::logic, "unknown segment '" + std::string(name) + "'");
    return *s;
  }

  std::span<double> values(std::string_view name) {
    const Segment& s = segment(name);
    return std::span<double>(values_).subspan(s.offset, s.length);
  }
  std::span<const double> values(std::string_view name) const {
    const Segment& s = segment(name);
    return std::span<const double>(values_).subspan(s.offset, s.length);
  }
  std::span<double> grads(std::string_view name) {
    const Segment& s = segment(name);
    return std::span<double>(grads_).subspan(s.offset, s.length);
  }

  /// Segment that owns flat index `i`.
  const Segment& owner(std::size_t i) const {
    for (const auto& s : segments_)
      if (i >= s.offset && i < s.offset + s.length) return s;
    fail(ErrorKind::logic, "index " + std::to_string(i) + " outside parameter store");
  }

  void set_lr_scale(std::string_view name, double lr_scale) {
    require(lr_scale > 0.0 && std::isfinite(lr_scale), ErrorKind::config,
            "segment '" + std::string(name) + "': learning-rate scale must be positive");
    for (auto& s : segments_)
      if (s.name == name) {
        s.lr_scale = lr_scale;
        return;
      }
    fail(ErrorKind::logic, "unknown segment '" + std::string(name) + "'");
  }

  void zero_grads() noexcept { std::fill(grads_.begin(), grads_.end(), 0.0); }

 private:
  std::vector<Segment> segments_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;
};

/// Adam moments for a ParamStore.
class Adam {
 public:
  explicit Adam(std::size_t size, AdamConfig cfg = {}) : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  std::int64_t step_count() const noexcept { return t_; }
  std::span<const double> first_moment() const noexcept { return m_; }
  std::span<const double> second_moment() const noexcept { return v_; }

  /// One bias-corrected Adam update using `store.grads()`, scaled per segment; zeroes the grads.
  /// Throws before touching anything if a gradient is non-finite.
  void step(ParamStore& store, double lr) {
    require(store.size() == m_.size(), ErrorKind::logic, "Adam state does not match parameter store");
    require(lr > 0.0, ErrorKind::config, "learning rate must be positive");
    auto grads = store.grads();
    for (const auto& seg : store.segments())
      for (std::size_t i = 0; i < seg.length; ++i)
        if (!std::isfinite(grads[seg.offset + i]))
          fail(ErrorKind::training, "non-finite gradient in segment '" + seg.name + "' at index " +
                                        std::to_string(i));

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto values = store.values();
    for (const auto& seg : store.segments()) {
      const double seg_lr = lr * seg.lr_scale;
      for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i) {
        const double g = grads[i];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = m_[i] / bc1;
        const double v_hat = v_[i] / bc2;
        values[i] -= seg_lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
    store.zero_grads();
  }

  /// Restores moments (checkpoint resume).
  void restore(std::vector<double> m, std::vector<double> v, std::int64_t t) {
    require(m.size() == m_.size() && v.size() == v_.size() && t >= 0, ErrorKind::io,
            "Adam state shape mismatch");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::int64_t t_ = 0;
};

/// Exponential decay from lr0 at step 0 to 0.1 * lr0 at step == total.
inline double lr_schedule(std::int64_t step, std::int64_t total, double lr0) {
  require(total > 0 && step >= 0 && step <= total, ErrorKind::logic, "lr_schedule: step out of range");
  return lr0 * std::pow(0.1, static_cast<double>(step) / static_cast<double>(total));
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t probes = 0;
};

/// Evaluates the loss; when `with_grad` is set it must also accumulate d(loss)/d(params)
/// into `store.grads()` (which the checker zeroes beforehand).
using LossEval = std::function<double(bool with_grad)>;

/// Central-difference gradient check on `probes` random indices drawn from `candidates`
/// (all indices when empty). Relative error uses max(|analytic|, |numeric|, 1e-8).
inline GradCheckReport finite_diff_check(const LossEval& eval, ParamStore& store, std::size_t probes, double h,
                                         Rng& rng, std::span<const std::size_t> candidates = {}) {
  require(h >= 1e-7 && h <= 1e-3, ErrorKind::config, "finite_diff_check: h must be in [1e-7, 1e-3]");
  require(store.size() > 0, ErrorKind::logic, "finite_diff_check: empty parameter store");

  store.zero_grads();
  const double base = eval(true);
  std::vector<double> analytic(store.grads().begin(), store.grads().end());
  store.zero_grads();
  const double again = eval(false);
  const double third = eval(false);
  require(again == third && std::isfinite(base), ErrorKind::logic,
          "finite_diff_check: loss evaluation is not deterministic");

  GradCheckReport report;
  report.probes = probes;
  auto values = store.values();
  for (std::size_t p = 0; p < probes; ++p) {
    const std::size_t idx =
        candidates.empty() ? static_cast<std::size_t>(rng.below(store.size())) : candidates[rng.below(candidates.size())];
    const double saved = values[idx];
    values[idx] = saved + h;
    const double plus = eval(false);
    values[idx] = saved - h;
    const double minus = eval(false);
    values[idx] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[idx]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[idx] - numeric) / denom;
    if (p == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = idx;
      report.worst_analytic = analytic[idx];
      report.worst_numeric = numeric;
    }
  }
  return report;
}

/// Convenience: probes restricted to one named segment.
inline GradCheckReport finite_diff_check_segment(const LossEval& eval, ParamStore& store, std::string_view segment,
                                                 std::size_t probes, double h, Rng& rng) {
  const Segment& seg = store.segment(segment);
  std::vector<std::size_t> idx(seg.length);
  for (std::size_t i = 0; i < seg.length; ++i) idx[i] = seg.offset + i;
  return finite_diff_check(eval, store, probes, h, rng, idx);
}

}  // namespace neurbf
