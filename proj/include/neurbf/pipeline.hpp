#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "neurbf/checkpoint.hpp"
#include "neurbf/config.hpp"
#include "neurbf/field.hpp"
#include "neurbf/hash_grid.hpp"
#include "neurbf/image.hpp"
#include "neurbf/kmeans.hpp"
#include "neurbf/mesh_sdf.hpp"

namespace neurbf {

/// Split of a parameter budget P between grid tables, decoder and adaptive RBFs.
struct BudgetPlan {
  int log2_table = 0;
  std::size_t grid_params = 0;
  std::size_t decoder_params = 0;
  std::size_t rbf_count = 0;
  std::size_t rbf_params = 0;        // N * (D + D(D+1)/2 + F) + F, fixed and trainable
  std::size_t trainable_params = 0;  // grid + decoder + N * F + F
};

inline Json to_json(const BudgetPlan& p) {
  return {{"log2_table", p.log2_table},         {"grid_params", p.grid_params},
          {"decoder_params", p.decoder_params}, {"rbf_count", p.rbf_count},
          {"rbf_params", p.rbf_params},         {"trainable_params", p.trainable_params}};
}

inline HashGridConfig grid_config(const GridSection& g, int log2_table) {
  return HashGridConfig{g.levels, g.channels, log2_table, g.res_min, g.res_max};
}

inline int output_dim(TaskKind task) { return task == TaskKind::image ? 3 : 1; }

/// Grid tables get the largest power-of-two table size whose parameter count fits in
/// budget_fraction * P (all of P minus the decoder when adaptive RBFs are disabled). RBFs get the
/// remainder after the decoder: N = floor((P - grid - decoder - F) / (D + D(D+1)/2 + F)).
template <int D>
BudgetPlan plan_budget(const RunConfig& c) {
  c.validate();
  const auto P = static_cast<std::size_t>(c.budget);
  const int grid_out = c.grid.levels * c.grid.channels;
  const int F = c.rbf.enabled ? c.rbf.features : 0;
  BudgetPlan plan;
  plan.decoder_params = Decoder::params_for(F + grid_out, c.decoder.width, output_dim(c.task));
  require(plan.decoder_params < P, ErrorKind::config,
          "budget " + std::to_string(P) + " does not cover the decoder's " + std::to_string(plan.decoder_params) +
              " parameters");
  const double cap = c.rbf.enabled ? std::floor(c.grid.budget_fraction * static_cast<double>(P))
                                   : static_cast<double>(P - plan.decoder_params);
  for (int t = c.grid.log2_table_max; t >= 4; --t) {
    const std::size_t g = HashGrid<D>::params_for(grid_config(c.grid, t));
    if (static_cast<double>(g) <= cap) {
      plan.log2_table = t;
      plan.grid_params = g;
      break;
    }
  }
  require(plan.log2_table > 0, ErrorKind::config,
          "budget " + std::to_string(P) + " is too small for any grid table (cap " + std::to_string(cap) + ")");
  plan.trainable_params = plan.grid_params + plan.decoder_params;
  if (!c.rbf.enabled) return plan;

  const std::size_t per = RbfEncoding<D>::params_per_center(F);
  const std::size_t used = plan.grid_params + plan.decoder_params + static_cast<std::size_t>(F);
  plan.rbf_count = P > used ? (P - used) / per : 0;
  require(plan.rbf_count >= static_cast<std::size_t>(c.rbf.neighbors), ErrorKind::config,
          "budget " + std::to_string(P) + " leaves room for " + std::to_string(plan.rbf_count) +
              " adaptive RBFs after the grid (" + std::to_string(plan.grid_params) + ") and decoder (" +
              std::to_string(plan.decoder_params) + "), fewer than the neighborhood size k=" +
              std::to_string(c.rbf.neighbors) + "; raise the budget or lower rbf.neighbors");
  plan.rbf_params = plan.rbf_count * per + static_cast<std::size_t>(F);
  plan.trainable_params += plan.rbf_count * static_cast<std::size_t>(F) + static_cast<std::size_t>(F);
  return plan;
}

/// Centers and shapes produced by weighted K-Means.
template <int D>
struct RbfInit {
  std::vector<Point<D>> centers;
  ShapeInit<D> shapes;
  std::vector<double> objective;
  std::vector<int> reseed_iterations;
  double regularizer = 0.0;
};

/// Keeps at most `limit` points, chosen uniformly without replacement, in their original order.
template <int D>
WeightedPointSet<D> subsample(WeightedPointSet<D> pts, std::size_t limit, Rng& rng) {
  if (pts.points.size() <= limit) return pts;
  std::vector<std::size_t> order(pts.points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < limit; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
  order.resize(limit);
  std::sort(order.begin(), order.end());
  WeightedPointSet<D> out;
  out.points.reserve(limit);
  out.weights.reserve(limit);
  for (auto j : order) {
    out.points.push_back(pts.points[j]);
    out.weights.push_back(pts.weights[j]);
  }
  return out;
}

/// Weighted K-Means positions, then scatter shapes regularized by (factor * mean spacing)^2.
template <int D>
RbfInit<D> init_rbfs(const WeightedPointSet<D>& pts, std::size_t count, const InitSection& cfg, Rng& rng) {
  const ClusterResult<D> km = weighted_kmeans<D>(pts, count, cfg.kmeans_iters, rng);
  RbfInit<D> out;
  const double s = cfg.shape_reg_factor * mean_center_spacing<D>(km.centers);
  out.regularizer = s * s;
  out.shapes = init_shapes<D>(pts, km, out.regularizer);
  out.centers = km.centers;
  for (auto& c : out.centers)
    for (int j = 0; j < D; ++j) c[j] = std::clamp(c[j], 0.0, 1.0);
  out.objective = km.objective;
  out.reseed_iterations = km.reseed_iterations;
  return out;
}

/// Pixel centers of an image with gradient-magnitude weights.
inline WeightedPointSet<2> image_point_set(const ImageBuffer& img) {
  WeightedPointSet<2> pts;
  pts.weights = image_weights(img.data, img.height, img.width, 3);
  pts.points.reserve(img.pixels());
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) pts.points.push_back(pixel_coordinate(r, c, img.height, img.width));
  return pts;
}

/// Random streams derived from the single run seed.
enum RunStream : std::uint64_t { kStreamSubsample = 1, kStreamKMeans = 2, kStreamParams = 3, kStreamPool = 4 };

template <int D>
HybridField<D> make_field(const RunConfig& c, const BudgetPlan& plan, std::optional<RbfEncoding<D>> rbf) {
  DecoderConfig dec;
  dec.width = c.decoder.width;
  dec.freq_low = c.decoder.freq_low;
  dec.freq_high = c.decoder.freq_high;
  dec.compose = c.decoder.compose;
  return HybridField<D>(c.task, std::move(rbf), HashGrid<D>(grid_config(c.grid, plan.log2_table)), dec,
                        c.train.lr_features, c.train.lr_mlp);
}

template <int D>
RbfEncoding<D> make_rbf(const RunConfig& c, const RbfInit<D>& init) {
  return RbfEncoding<D>(init.centers, init.shapes.inv_shapes,
                        freq_ladder(c.rbf.freq_low, c.rbf.freq_high, c.rbf.features),
                        RbfOptions{c.rbf.neighbors, c.rbf.normalize, c.rbf.compose});
}

/// Builds a field from a config, a plan and optional initialization, then draws initial parameters.
template <int D>
HybridField<D> build_field(const RunConfig& c, const BudgetPlan& plan, const RbfInit<D>* init) {
  std::optional<RbfEncoding<D>> rbf;
  if (c.rbf.enabled) {
    require(init != nullptr, ErrorKind::logic, "build_field: adaptive RBFs need an initialization");
    rbf = make_rbf<D>(c, *init);
  }
  HybridField<D> field = make_field<D>(c, plan, std::move(rbf));
  Rng rng(c.seed, kStreamParams);
  field.init_params(rng, c.rbf.init_scale, c.grid.init_scale);
  field.set_threads(c.threads > 0 ? static_cast<std::size_t>(c.threads) : 1);
  return field;
}

inline TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.steps = c.train.steps;
  t.batch = static_cast<std::size_t>(c.train.batch);
  t.seed = c.seed;
  t.loss = c.train.loss;
  t.eval_every = c.train.eval_every;
  return t;
}

// ---------------------------------------------------------------------------------------------
// Checkpoints

template <int D>
Checkpoint make_checkpoint(const HybridField<D>& field, const RunConfig& c, const BudgetPlan& plan) {
  Checkpoint ck;
  Json header;
  header["task"] = to_string(field.task());
  header["dim"] = D;
  header["plan"] = to_json(plan);
  header["config"] = result_json(c);
  ck.header = header.dump();
  if (field.has_rbf()) {
    const auto& rbf = field.rbf();
    CheckpointSegment centers{"rbf.centers", false, {rbf.count(), static_cast<std::uint64_t>(D)}, {}};
    for (const auto& p : rbf.centers()) centers.values.insert(centers.values.end(), p.begin(), p.end());
    CheckpointSegment shapes{"rbf.inv_shapes", false, {rbf.count(), static_cast<std::uint64_t>(kSymSize<D>)}, {}};
    for (const auto& s : rbf.inv_shapes()) shapes.values.insert(shapes.values.end(), s.upper.begin(), s.upper.end());
    ck.segments.push_back(std::move(centers));
    ck.segments.push_back(std::move(shapes));
    ck.segments.push_back({"rbf.freq", false, {rbf.freq().size()}, rbf.freq()});
  }
  ck.segments.push_back({"dec.freq", false, {field.decoder().freq().size()}, field.decoder().freq()});
  for (const auto& seg : field.store().segments()) {
    const auto v = field.store().values(seg.name);
    ck.segments.push_back({seg.name, true, {seg.length}, std::vector<double>(v.begin(), v.end())});
  }
  return ck;
}

struct CheckpointHeader {
  TaskKind task = TaskKind::image;
  int dim = 2;
  RunConfig config;
  BudgetPlan plan;
};

inline CheckpointHeader parse_header(const Checkpoint& ck) {
  CheckpointHeader h;
  try {
    const Json j = Json::parse(ck.header);
    h.task = parse_task(j.at("task").get<std::string>());
    h.dim = j.at("dim").get<int>();
    h.config = config_from_json(j.at("config"), h.task);
    const Json& p = j.at("plan");
    h.plan.log2_table = p.at("log2_table").get<int>();
    h.plan.grid_params = p.at("grid_params").get<std::size_t>();
    h.plan.decoder_params = p.at("decoder_params").get<std::size_t>();
    h.plan.rbf_count = p.at("rbf_count").get<std::size_t>();
    h.plan.rbf_params = p.at("rbf_params").get<std::size_t>();
    h.plan.trainable_params = p.at("trainable_params").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("malformed checkpoint header: ") + e.what());
  }
  require(h.dim == (h.task == TaskKind::image ? 2 : 3), ErrorKind::config, "checkpoint dimension does not match its task");
  return h;
}

/// Rebuilds the exact field stored in a checkpoint.
template <int D>
HybridField<D> field_from_checkpoint(const Checkpoint& ck) {
  const CheckpointHeader h = parse_header(ck);
  require(h.dim == D, ErrorKind::config,
          "checkpoint holds a " + std::to_string(h.dim) + "-D field, expected " + std::to_string(D) + "-D");
  const RunConfig& c = h.config;
  std::optional<RbfEncoding<D>> rbf;
  if (c.rbf.enabled) {
    const auto& cs = ck.at("rbf.centers");
    const auto& ss = ck.at("rbf.inv_shapes");
    require(cs.dims.size() == 2 && cs.dims[1] == D && ss.dims.size() == 2 && ss.dims[0] == cs.dims[0] &&
                ss.dims[1] == static_cast<std::uint64_t>(kSymSize<D>),
            ErrorKind::config, "checkpoint RBF segments have inconsistent shapes");
    std::vector<Point<D>> centers(cs.dims[0]);
    std::vector<SymMatrix<D>> shapes(cs.dims[0]);
    for (std::size_t i = 0; i < centers.size(); ++i) {
      for (int j = 0; j < D; ++j) centers[i][j] = cs.values[i * D + j];
      for (int u = 0; u < kSymSize<D>; ++u) shapes[i].upper[u] = ss.values[i * kSymSize<D> + u];
    }
    rbf = RbfEncoding<D>(std::move(centers), std::move(shapes), ck.at("rbf.freq").values,
                         RbfOptions{c.rbf.neighbors, c.rbf.normalize, c.rbf.compose});
  }
  HybridField<D> field = make_field<D>(c, h.plan, std::move(rbf));
  field.decoder().set_freq(ck.at("dec.freq").values);
  for (const auto& seg : field.store().segments()) {
    const auto& s = ck.at(seg.name);
    require(s.values.size() == seg.length, ErrorKind::config,
            "checkpoint segment '" + seg.name + "' has " + std::to_string(s.values.size()) + " values, expected " +
                std::to_string(seg.length));
    std::copy(s.values.begin(), s.values.end(), field.store().values(seg.name).begin());
  }
  field.set_threads(c.threads > 0 ? static_cast<std::size_t>(c.threads) : 1);
  return field;
}

// ---------------------------------------------------------------------------------------------
// Image fitting

struct ImageMetrics {
  double psnr = 0.0;        // continuous predictions
  double psnr_8bit = 0.0;   // predictions rounded to 8 bits
};

/// Fits an image: gradient weights, K-Means, shapes, then training on random pixel batches.
class ImageFit {
 public:
  ImageFit(ImageBuffer target, RunConfig cfg) : target_(std::move(target)), cfg_(std::move(cfg)) {
    cfg_.task = TaskKind::image;
    plan_ = plan_budget<2>(cfg_);
    if (cfg_.rbf.enabled) {
      Rng sub(cfg_.seed, kStreamSubsample), km(cfg_.seed, kStreamKMeans);
      const auto pts = subsample<2>(image_point_set(target_), static_cast<std::size_t>(cfg_.init.max_points), sub);
      init_ = init_rbfs<2>(pts, plan_.rbf_count, cfg_.init, km);
    }
    field_ = std::make_unique<HybridField<2>>(build_field<2>(cfg_, plan_, init_ ? &*init_ : nullptr));
    prepare();
  }

  /// Resumes from a checkpoint (for evaluation).
  ImageFit(ImageBuffer target, const Checkpoint& ck) : target_(std::move(target)) {
    const CheckpointHeader h = parse_header(ck);
    require(h.task == TaskKind::image, ErrorKind::config, "checkpoint was trained on an sdf task, not an image");
    cfg_ = h.config;
    plan_ = h.plan;
    field_ = std::make_unique<HybridField<2>>(field_from_checkpoint<2>(ck));
    prepare();
  }

  const RunConfig& config() const noexcept { return cfg_; }
  const BudgetPlan& plan() const noexcept { return plan_; }
  const std::optional<RbfInit<2>>& init() const noexcept { return init_; }
  HybridField<2>& field() noexcept { return *field_; }
  const HybridField<2>& field() const noexcept { return *field_; }
  const ImageBuffer& target() const noexcept { return target_; }

  TrainReport train(const std::function<void(std::int64_t, double)>& on_step = {}) {
    Adam adam(field_->store().size(), AdamConfig{});
    const std::size_t B = static_cast<std::size_t>(cfg_.train.batch);
    const std::size_t k = field_->has_rbf() ? static_cast<std::size_t>(field_->rbf().neighbors()) : 0;
    BatchSource<2> source = [this, B, k](std::int64_t, Rng& rng, Batch<2>& b) {
      b.points.resize(B);
      b.targets.resize(B * 3);
      b.nb_index.resize(B * k);
      b.nb_weight.resize(B * k);
      for (std::size_t s = 0; s < B; ++s) {
        const auto j = static_cast<std::size_t>(rng.below(all_.size()));
        b.points[s] = all_.points[j];
        std::copy_n(all_.targets.data() + j * 3, 3, b.targets.data() + s * 3);
        std::copy_n(all_.nb_index.data() + j * k, k, b.nb_index.data() + s * k);
        std::copy_n(all_.nb_weight.data() + j * k, k, b.nb_weight.data() + s * k);
      }
    };
    return neurbf::train<2>(*field_, adam, source, train_config(cfg_), [this] { return evaluate().psnr; }, on_step);
  }

  ImageBuffer reconstruct() const {
    ImageBuffer out(target_.height, target_.width);
    out.bit_depth = target_.bit_depth;
    field_->predict(all_, out.data);
    return out;
  }

  ImageMetrics evaluate() const {
    const ImageBuffer rec = reconstruct();
    return {psnr(rec, target_), psnr(quantized(rec, 8), target_)};
  }

 private:
  void prepare() {
    require(target_.height >= 2 && target_.width >= 2, ErrorKind::config, "image must be at least 2x2");
    all_ = image_point_set_batch();
    field_->precompute_neighborhoods(all_.points, all_.nb_index, all_.nb_weight);
  }

  Batch<2> image_point_set_batch() const {
    Batch<2> b;
    b.points.reserve(target_.pixels());
    for (int r = 0; r < target_.height; ++r)
      for (int c = 0; c < target_.width; ++c) b.points.push_back(pixel_coordinate(r, c, target_.height, target_.width));
    b.targets = target_.data;
    return b;
  }

  ImageBuffer target_;
  RunConfig cfg_;
  BudgetPlan plan_;
  std::optional<RbfInit<2>> init_;
  std::unique_ptr<HybridField<2>> field_;
  Batch<2> all_;
};

// ---------------------------------------------------------------------------------------------
// SDF fitting

inline SdfOracle make_oracle(const RunConfig& c) {
  if (!c.input.empty()) return SdfOracle(load_mesh(c.input));
  return SdfOracle(c.shape);
}

/// Fits a signed distance field: weighted K-Means over an initial sample pool, then training on
/// freshly drawn near-surface/uniform samples every step.
class SdfFit {
 public:
  SdfFit(std::shared_ptr<const SdfOracle> oracle, RunConfig cfg) : oracle_(std::move(oracle)), cfg_(std::move(cfg)) {
    cfg_.task = TaskKind::sdf;
    plan_ = plan_budget<3>(cfg_);
    if (cfg_.rbf.enabled) {
      Rng pool_rng(cfg_.seed, kStreamPool), km(cfg_.seed, kStreamKMeans);
      const SdfSamples pool = sample_training_points(*oracle_, static_cast<std::size_t>(cfg_.init.sdf_pool),
                                                     cfg_.train.near_fraction, sigma(), pool_rng);
      WeightedPointSet<3> pts{pool.points, sdf_weights(pool.targets)};
      init_ = init_rbfs<3>(pts, plan_.rbf_count, cfg_.init, km);
    }
    field_ = std::make_unique<HybridField<3>>(build_field<3>(cfg_, plan_, init_ ? &*init_ : nullptr));
  }

  SdfFit(std::shared_ptr<const SdfOracle> oracle, const Checkpoint& ck) : oracle_(std::move(oracle)) {
    const CheckpointHeader h = parse_header(ck);
    require(h.task == TaskKind::sdf, ErrorKind::config, "checkpoint was trained on an image task, not an sdf");
    cfg_ = h.config;
    plan_ = h.plan;
    field_ = std::make_unique<HybridField<3>>(field_from_checkpoint<3>(ck));
  }

  const RunConfig& config() const noexcept { return cfg_; }
  const BudgetPlan& plan() const noexcept { return plan_; }
  const std::optional<RbfInit<3>>& init() const noexcept { return init_; }
  HybridField<3>& field() noexcept { return *field_; }
  const HybridField<3>& field() const noexcept { return *field_; }
  const SdfOracle& oracle() const noexcept { return *oracle_; }

  double sigma() const { return cfg_.train.perturb_std * unit_box_diagonal(); }

  TrainReport train(const std::function<void(std::int64_t, double)>& on_step = {}) {
    Adam adam(field_->store().size(), AdamConfig{});
    const std::size_t B = static_cast<std::size_t>(cfg_.train.batch);
    BatchSource<3> source = [this, B](std::int64_t, Rng& rng, Batch<3>& b) {
      SdfSamples s = sample_training_points(*oracle_, B, cfg_.train.near_fraction, sigma(), rng);
      b.points = std::move(s.points);
      b.targets = std::move(s.targets);
      b.nb_index.clear();
      b.nb_weight.clear();
    };
    return neurbf::train<3>(*field_, adam, source, train_config(cfg_), [this] { return iou(); }, on_step);
  }

  double iou() const { return iou(cfg_.eval.iou_res); }

  double iou(int res) const {
    return iou_grid(
        [this](std::span<const Vec3> pts, std::span<double> out) {
          Batch<3> b;
          b.points.assign(pts.begin(), pts.end());
          field_->predict(b, out);
        },
        *oracle_, res);
  }

 private:
  std::shared_ptr<const SdfOracle> oracle_;
  RunConfig cfg_;
  BudgetPlan plan_;
  std::optional<RbfInit<3>> init_;
  std::unique_ptr<HybridField<3>> field_;
};

}  // namespace neurbf
