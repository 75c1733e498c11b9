#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "neurbf/decoder.hpp"
#include "neurbf/error.hpp"
#include "neurbf/hash_grid.hpp"
#include "neurbf/param_store.hpp"
#include "neurbf/rbf.hpp"
#include "neurbf/rng.hpp"

namespace neurbf {

enum class TaskKind { image, sdf };

inline const char* to_string(TaskKind t) { return t == TaskKind::image ? "image" : "sdf"; }

enum class LossKind { l2, mape };

inline constexpr double kMapeEps = 1e-2;

/// Sum of per-element loss terms; writes scale * d(term)/d(pred) into `grad` when non-empty.
inline double loss_terms(LossKind kind, std::span<const double> pred, std::span<const double> target,
                         std::span<double> grad, double scale) {
  require(pred.size() == target.size(), ErrorKind::logic, "loss: prediction/target size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - target[i];
    if (kind == LossKind::l2) {
      sum += r * r;
      if (!grad.empty()) grad[i] = scale * 2.0 * r;
    } else {
      const double denom = std::abs(target[i]) + kMapeEps;
      sum += std::abs(r) / denom;
      if (!grad.empty()) grad[i] = r == 0.0 ? 0.0 : scale * (r > 0.0 ? 1.0 : -1.0) / denom;
    }
  }
  return sum;
}

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

/// Mean squared error over all entries, with its gradient.
inline LossValue loss_l2(std::span<const double> pred, std::span<const double> target) {
  LossValue out;
  out.grad.resize(pred.size());
  const double inv = pred.empty() ? 0.0 : 1.0 / static_cast<double>(pred.size());
  out.value = loss_terms(LossKind::l2, pred, target, out.grad, inv) * inv;
  return out;
}

/// Mean of |pred - target| / (|target| + 0.01), with its (sub)gradient.
inline LossValue loss_mape(std::span<const double> pred, std::span<const double> target) {
  LossValue out;
  out.grad.resize(pred.size());
  const double inv = pred.empty() ? 0.0 : 1.0 / static_cast<double>(pred.size());
  out.value = loss_terms(LossKind::mape, pred, target, out.grad, inv) * inv;
  return out;
}

/// A batch of query points with optional targets (B x O, sample-major) and optional cached
/// neighborhoods (B x k indices and weights).
template <int D>
struct Batch {
  std::vector<Point<D>> points;
  std::vector<double> targets;
  std::vector<std::uint32_t> nb_index;
  std::vector<double> nb_weight;

  std::size_t size() const noexcept { return points.size(); }
};

/// f(x) = decoder([adaptive RBF features || grid features]). All trainable values share one ParamStore.
template <int D>
class HybridField {
 public:
  static constexpr std::size_t kShards = 8;
  static constexpr std::size_t kChunk = 128;

  HybridField(TaskKind task, std::optional<RbfEncoding<D>> rbf, HashGrid<D> grid, DecoderConfig dec, double lr_features,
              double lr_mlp)
      : task_(task), rbf_(std::move(rbf)), grid_(std::move(grid)) {
    dec.input_dim = (rbf_ ? rbf_->features() : 0) + grid_.output_dim();
    dec.output_dim = task == TaskKind::image ? 3 : 1;
    dec.activation = task == TaskKind::image ? OutputActivation::sigmoid : OutputActivation::none;
    decoder_ = Decoder(dec);
    if (rbf_) rbf_->bind(store_, lr_features);
    grid_.bind(store_, lr_features);
    decoder_.bind(store_, lr_mlp);
  }

  TaskKind task() const noexcept { return task_; }
  int output_dim() const noexcept { return decoder_.config().output_dim; }
  int input_dim() const noexcept { return decoder_.config().input_dim; }
  bool has_rbf() const noexcept { return rbf_.has_value(); }
  const RbfEncoding<D>& rbf() const { return *rbf_; }
  const HashGrid<D>& grid() const noexcept { return grid_; }
  const Decoder& decoder() const noexcept { return decoder_; }
  Decoder& decoder() noexcept { return decoder_; }
  ParamStore& store() noexcept { return store_; }
  const ParamStore& store() const noexcept { return store_; }

  std::size_t threads() const noexcept { return threads_; }
  void set_threads(std::size_t n) { threads_ = std::max<std::size_t>(n, 1); }

  void init_params(Rng& rng, double rbf_scale, double grid_scale) {
    auto v = store_.values();
    if (rbf_) rbf_->init_params(v, rng, rbf_scale);
    grid_.init_params(v, rng, grid_scale);
    decoder_.init_params(v, rng);
  }

  /// Cached neighborhoods for a static point set (centers are fixed after initialization).
  void precompute_neighborhoods(std::span<const Point<D>> points, std::vector<std::uint32_t>& idx,
                                std::vector<double>& weight) const {
    if (!rbf_) {
      idx.clear();
      weight.clear();
      return;
    }
    const auto k = static_cast<std::size_t>(rbf_->neighbors());
    idx.resize(points.size() * k);
    weight.resize(points.size() * k);
    std::vector<Neighbor> scratch;
    for (std::size_t s = 0; s < points.size(); ++s)
      rbf_->neighborhood(points[s], std::span(idx).subspan(s * k, k), std::span(weight).subspan(s * k, k), scratch);
  }

  /// Predictions for every point, B x O sample-major.
  void predict(const Batch<D>& batch, std::span<double> out) const {
    require(out.size() == batch.size() * static_cast<std::size_t>(output_dim()), ErrorKind::logic,
            "predict: output size mismatch");
    run(batch, LossKind::l2, false, out, nullptr);
  }

  std::vector<double> predict(std::span<const Point<D>> points) const {
    Batch<D> b;
    b.points.assign(points.begin(), points.end());
    std::vector<double> out(points.size() * static_cast<std::size_t>(output_dim()));
    predict(b, out);
    return out;
  }

  /// Mean loss over the batch; when `with_grad`, adds d(loss)/d(params) into store().grads().
  double loss(const Batch<D>& batch, LossKind kind, bool with_grad) {
    require(batch.targets.size() == batch.size() * static_cast<std::size_t>(output_dim()), ErrorKind::logic,
            "loss: target size mismatch");
    std::span<double> none;
    return run(batch, kind, with_grad, none, with_grad ? &store_ : nullptr);
  }

  /// Sign of every hidden ReLU pre-activation over the batch (1 where positive), sample-major.
  std::vector<std::uint8_t> relu_pattern(const Batch<D>& batch) const {
    std::vector<std::uint8_t> out;
    out.reserve(batch.size() * static_cast<std::size_t>(decoder_.config().width));
    Workspace ws;
    for (std::size_t c = 0; c < batch.size(); c += kChunk) {
      encode_chunk(batch, c, std::min(kChunk, batch.size() - c), false, ws);
      decoder_.forward(ws.x, store_.values(), ws.tape);
      for (Eigen::Index i = 0; i < ws.tape.z1.size(); ++i) out.push_back(ws.tape.z1.data()[i] > 0.0 ? 1 : 0);
    }
    return out;
  }

 private:
  struct Workspace {
    Matrix x, d_out, d_x;
    DecoderTape tape;
    std::vector<std::uint32_t> idx;
    std::vector<double> phi, rbf_tape, grid_w;
    std::vector<std::uint64_t> grid_rows;
    std::vector<Neighbor> scratch;
    std::vector<double> grads;
    double loss = 0.0;
  };

  double run(const Batch<D>& batch, LossKind kind, bool with_grad, std::span<double> pred_out,
             ParamStore* grad_store) const {
    const std::size_t B = batch.size();
    if (B == 0) return 0.0;
    const bool has_targets = !batch.targets.empty();
    const double scale = has_targets ? 1.0 / static_cast<double>(B * static_cast<std::size_t>(output_dim())) : 0.0;
    if (workspaces_.size() != kShards) workspaces_.resize(kShards);

    const std::size_t per = (B + kShards - 1) / kShards;
    auto shard_job = [&](std::size_t s) {
      Workspace& ws = workspaces_[s];
      ws.loss = 0.0;
      if (with_grad) ws.grads.assign(store_.size(), 0.0);
      const std::size_t begin = std::min(B, s * per), end = std::min(B, begin + per);
      for (std::size_t c = begin; c < end; c += kChunk)
        run_chunk(batch, c, std::min(kChunk, end - c), kind, with_grad, scale, pred_out, ws);
    };

    const std::size_t workers = std::min(threads_, kShards);
    if (workers <= 1) {
      for (std::size_t s = 0; s < kShards; ++s) shard_job(s);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t s = w; s < kShards; s += workers) shard_job(s);
        });
      for (auto& t : pool) t.join();
    }

    // Fixed-order reduction keeps results independent of the thread count.
    double total = 0.0;
    for (std::size_t s = 0; s < kShards; ++s) total += workspaces_[s].loss;
    if (with_grad && grad_store) {
      auto g = grad_store->grads();
      for (std::size_t s = 0; s < kShards; ++s) {
        const auto& wg = workspaces_[s].grads;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += wg[i];
      }
    }
    return total * scale;
  }

  /// Fills ws.x with the decoder inputs of samples [begin, begin + n), keeping the backward tapes
  /// when `with_grad`.
  void encode_chunk(const Batch<D>& batch, std::size_t begin, std::size_t n, bool with_grad, Workspace& ws) const {
    const auto params = store_.values();
    const int in = input_dim();
    const int F = rbf_ ? rbf_->features() : 0;
    const std::size_t k = rbf_ ? static_cast<std::size_t>(rbf_->neighbors()) : 0;
    const std::size_t rts = rbf_ ? rbf_->tape_size() : 0, gts = grid_.tape_size();
    const auto gdim = static_cast<std::size_t>(grid_.output_dim());
    const bool cached = !batch.nb_index.empty();

    ws.x.resize(in, static_cast<Eigen::Index>(n));
    if (rbf_) {
      ws.idx.resize(n * k);
      ws.phi.resize(n * k);
      ws.rbf_tape.resize(with_grad ? n * rts : 0);
    }
    ws.grid_rows.resize(with_grad ? n * gts : 0);
    ws.grid_w.resize(with_grad ? n * gts : 0);

    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t j = begin + s;
      double* col = ws.x.data() + static_cast<std::size_t>(in) * s;
      if (rbf_) {
        std::span<std::uint32_t> idx(ws.idx.data() + s * k, k);
        std::span<double> phi(ws.phi.data() + s * k, k);
        if (cached) {
          std::copy_n(batch.nb_index.data() + j * k, k, idx.data());
          std::copy_n(batch.nb_weight.data() + j * k, k, phi.data());
        } else {
          rbf_->neighborhood(batch.points[j], idx, phi, ws.scratch);
        }
        rbf_->forward(idx, phi, params, std::span<double>(col, static_cast<std::size_t>(F)),
                      with_grad ? std::span<double>(ws.rbf_tape.data() + s * rts, rts) : std::span<double>{});
      }
      grid_.forward(batch.points[j], params, std::span<double>(col + F, gdim),
                    with_grad ? std::span<std::uint64_t>(ws.grid_rows.data() + s * gts, gts) : std::span<std::uint64_t>{},
                    with_grad ? std::span<double>(ws.grid_w.data() + s * gts, gts) : std::span<double>{});
    }
  }

  void run_chunk(const Batch<D>& batch, std::size_t begin, std::size_t n, LossKind kind, bool with_grad, double scale,
                 std::span<double> pred_out, Workspace& ws) const {
    const auto params = store_.values();
    const int in = input_dim(), O = output_dim();
    const int F = rbf_ ? rbf_->features() : 0;
    const std::size_t k = rbf_ ? static_cast<std::size_t>(rbf_->neighbors()) : 0;
    const std::size_t rts = rbf_ ? rbf_->tape_size() : 0, gts = grid_.tape_size();
    const auto gdim = static_cast<std::size_t>(grid_.output_dim());
    encode_chunk(batch, begin, n, with_grad, ws);

    decoder_.forward(ws.x, params, ws.tape);
    const double* pred = ws.tape.out.data();  // O x n column-major == sample-major
    const auto On = static_cast<std::size_t>(O) * n;
    if (!pred_out.empty()) std::copy_n(pred, On, pred_out.data() + begin * static_cast<std::size_t>(O));
    if (batch.targets.empty()) return;

    ws.d_out.resize(O, static_cast<Eigen::Index>(n));
    ws.loss += loss_terms(kind, std::span<const double>(pred, On),
                          std::span<const double>(batch.targets.data() + begin * static_cast<std::size_t>(O), On),
                          with_grad ? std::span<double>(ws.d_out.data(), On) : std::span<double>{}, scale);
    if (!with_grad) return;

    decoder_.backward(ws.x, params, ws.tape, ws.d_out, ws.grads, &ws.d_x);
    for (std::size_t s = 0; s < n; ++s) {
      const double* up = ws.d_x.data() + static_cast<std::size_t>(in) * s;
      if (rbf_)
        rbf_->backward(std::span<const std::uint32_t>(ws.idx.data() + s * k, k),
                       std::span<const double>(ws.phi.data() + s * k, k), params,
                       std::span<const double>(up, static_cast<std::size_t>(F)),
                       std::span<const double>(ws.rbf_tape.data() + s * rts, rts), ws.grads);
      grid_.backward(std::span<const std::uint64_t>(ws.grid_rows.data() + s * gts, gts),
                     std::span<const double>(ws.grid_w.data() + s * gts, gts), std::span<const double>(up + F, gdim),
                     ws.grads);
    }
  }

  TaskKind task_;
  std::optional<RbfEncoding<D>> rbf_;
  HashGrid<D> grid_;
  Decoder decoder_;
  ParamStore store_;
  std::size_t threads_ = 1;
  mutable std::vector<Workspace> workspaces_;
};

struct TrainConfig {
  std::int64_t steps = 5000;
  std::size_t batch = 16384;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::l2;
  std::int64_t eval_every = 500;
  AdamConfig adam{};
};

struct MetricPoint {
  std::int64_t step = 0;
  double value = 0.0;
};

struct TrainReport {
  std::vector<double> loss;          // one entry per step
  std::vector<MetricPoint> metric;   // evaluation curve, includes step 0 and the final step
  std::int64_t steps = 0;
  double seconds = 0.0;
  double final_metric = 0.0;
};

/// Produces the batch for a step; must be a pure function of (step, rng state).
template <int D>
using BatchSource = std::function<void(std::int64_t step, Rng& rng, Batch<D>& out)>;

/// Evaluation metric on the current parameters (PSNR, IoU, ...).
using Evaluator = std::function<double()>;

/// sample -> forward -> loss -> backward -> Adam, with exponential learning-rate decay.
/// Throws Error(training) on a non-finite loss, leaving the parameters of the last good step.
template <int D>
TrainReport train(HybridField<D>& model, Adam& adam, const BatchSource<D>& source, const TrainConfig& cfg,
                  const Evaluator& evaluate, const std::function<void(std::int64_t, double)>& on_step = {}) {
  require(cfg.steps >= 0, ErrorKind::config, "train: steps must be >= 0");
  require(cfg.batch >= 1, ErrorKind::config, "train: batch must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  Rng rng(cfg.seed, 0x7A11);
  Batch<D> batch;
  if (evaluate) report.metric.push_back({0, evaluate()});
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    source(step, rng, batch);
    model.store().zero_grads();
    const double l = model.loss(batch, cfg.loss, true);
    if (!std::isfinite(l)) fail(ErrorKind::training, "non-finite loss at step " + std::to_string(step));
    adam.step(model.store(), lr_schedule(step, cfg.steps, 1.0));
    report.loss.push_back(l);
    if (on_step) on_step(step, l);
    const std::int64_t done = step + 1;
    if (evaluate && cfg.eval_every > 0 && done % cfg.eval_every == 0 && done != cfg.steps)
      report.metric.push_back({done, evaluate()});
  }
  if (evaluate && cfg.steps > 0) report.metric.push_back({cfg.steps, evaluate()});
  report.steps = cfg.steps;
  report.final_metric = report.metric.empty() ? 0.0 : report.metric.back().value;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace neurbf
