#pragma once

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "neurbf/checkpoint.hpp"
#include "neurbf/config.hpp"
#include "neurbf/image.hpp"
#include "neurbf/inspect.hpp"
#include "neurbf/pipeline.hpp"

namespace neurbf::app {

/// Process exit codes (stable API).
enum ExitCode : int { kOk = 0, kConfigError = 1, kIoError = 2, kTrainingAbort = 3, kMeshError = 4, kInternalError = 5 };

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return kConfigError;
    case ErrorKind::io: return kIoError;
    case ErrorKind::training: return kTrainingAbort;
    case ErrorKind::mesh: return kMeshError;
    case ErrorKind::logic: break;
  }
  return kInternalError;
}

/// Command-line overrides applied on top of the config file.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::string> input;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<std::int64_t> steps;
  std::optional<std::int64_t> budget;
};

/// Defaults for `task`, overlaid with the config file and then the command-line flags.
inline RunConfig resolve_config(TaskKind task, const Overrides& o) {
  RunConfig c = o.config ? load_config(*o.config, task) : RunConfig::defaults(task);
  require(c.task == task, ErrorKind::config,
          std::string("config is for task '") + to_string(c.task) + "' but the command expects '" + to_string(task) +
              "'");
  if (o.input) c.input = *o.input;
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.threads) c.threads = *o.threads;
  if (o.steps) c.train.steps = *o.steps;
  if (o.budget) c.budget = *o.budget;
  c.validate();
  return c;
}

inline std::size_t effective_threads(const RunConfig& c) {
  if (c.threads > 0) return static_cast<std::size_t>(c.threads);
  return std::max(1u, std::thread::hardware_concurrency());
}

/// JSON has no infinity; an exact reconstruction reports "inf".
inline Json metric_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot write '" + path.string() + "'");
  out << text;
  out.flush();
  require(out.good(), ErrorKind::io, "failed writing '" + path.string() + "'");
}

inline std::filesystem::path prepare_out_dir(const RunConfig& c) {
  const std::filesystem::path dir(c.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), ErrorKind::io,
          "cannot create output directory '" + dir.string() + "'" + (ec ? ": " + ec.message() : ""));
  write_text(dir / "config.echo.json", to_json(c).dump(2) + "\n");
  return dir;
}

template <class Init>
Json init_json(const std::optional<Init>& init) {
  if (!init) return nullptr;
  return {{"objective", init->objective},
          {"reseed_iterations", init->reseed_iterations},
          {"shape_regularizer", init->regularizer}};
}

inline Json curve_json(const TrainReport& r) {
  Json curve = Json::array();
  for (const auto& m : r.metric) curve.push_back({{"step", m.step}, {"value", metric_json(m.value)}});
  return curve;
}

/// Writes the wall-clock timing separately so that report.json is reproducible byte for byte.
inline void write_timing(const std::filesystem::path& dir, const TrainReport& r, double init_seconds) {
  Json t = {{"init_seconds", init_seconds},
            {"train_seconds", r.seconds},
            {"steps", r.steps},
            {"seconds_per_step", r.steps > 0 ? r.seconds / static_cast<double>(r.steps) : 0.0}};
  write_text(dir / "timing.json", t.dump(2) + "\n");
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <int D>
void write_diagnostic(const std::filesystem::path& dir, const HybridField<D>& field, const RunConfig& c,
                      const BudgetPlan& plan, const std::string& why) {
  try {
    write_checkpoint(make_checkpoint<D>(field, c, plan), (dir / "diagnostic.nrbf").string());
    write_text(dir / "report.json", Json{{"status", "aborted"}, {"error", why}}.dump(2) + "\n");
    spdlog::error("training aborted: {}; diagnostic checkpoint at {}", why, (dir / "diagnostic.nrbf").string());
  } catch (const Error& e) {
    spdlog::error("training aborted: {}; diagnostic checkpoint could not be written: {}", why, e.what());
  }
}

inline std::function<void(std::int64_t, double)> progress_logger(std::int64_t steps) {
  return [steps](std::int64_t step, double loss) {
    if (step % 100 == 0 || step + 1 == steps) spdlog::debug("step {}/{} loss {:.6e}", step + 1, steps, loss);
  };
}

inline int fit_image(const RunConfig& cfg) {
  require(!cfg.input.empty(), ErrorKind::config, "fit-image needs an input image (--input or 'input' in the config)");
  const ImageBuffer target = load_image(cfg.input);
  const auto dir = prepare_out_dir(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  ImageFit fit(target, cfg);
  fit.field().set_threads(effective_threads(cfg));
  const double init_seconds = seconds_since(t0);
  spdlog::info("image {}x{}: {} RBFs, grid table 2^{}, {} trainable parameters", target.width, target.height,
               fit.plan().rbf_count, fit.plan().log2_table, fit.plan().trainable_params);

  TrainReport report;
  try {
    report = fit.train(progress_logger(cfg.train.steps));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::training) write_diagnostic<2>(dir, fit.field(), fit.config(), fit.plan(), e.what());
    throw;
  }
  const ImageMetrics m = fit.evaluate();
  const ImageBuffer rec = fit.reconstruct();
  write_checkpoint(make_checkpoint<2>(fit.field(), fit.config(), fit.plan()), (dir / "checkpoint.nrbf").string());
  save_image(rec, (dir / "reconstruction.png").string(), target.bit_depth);
  save_image(error_map(rec, target), (dir / "error_map.png").string(), 8);

  Json r;
  r["status"] = "ok";
  r["task"] = "image";
  r["input"] = cfg.input;
  r["size"] = {{"height", target.height}, {"width", target.width}};
  r["plan"] = to_json(fit.plan());
  r["init"] = init_json(fit.init());
  r["metric"] = "psnr";
  r["loss_curve"] = report.loss;
  r["metric_curve"] = curve_json(report);
  r["final"] = {{"psnr", metric_json(m.psnr)}, {"psnr_8bit", metric_json(m.psnr_8bit)}};
  r["checkpoint"] = "checkpoint.nrbf";
  r["timing"] = "timing.json";
  r["config"] = result_json(cfg);
  write_text(dir / "report.json", r.dump(2) + "\n");
  write_timing(dir, report, init_seconds);
  spdlog::info("final PSNR {:.3f} dB (8-bit {:.3f} dB) after {} steps in {:.1f} s", m.psnr, m.psnr_8bit, report.steps,
               report.seconds);
  return kOk;
}

inline int fit_sdf(const RunConfig& cfg) {
  const auto oracle = std::make_shared<const SdfOracle>(make_oracle(cfg));
  const auto dir = prepare_out_dir(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  SdfFit fit(oracle, cfg);
  fit.field().set_threads(effective_threads(cfg));
  const double init_seconds = seconds_since(t0);
  spdlog::info("sdf ({}): {} RBFs, grid table 2^{}, {} trainable parameters",
               cfg.input.empty() ? std::string(to_string(cfg.shape.kind)) : cfg.input, fit.plan().rbf_count,
               fit.plan().log2_table, fit.plan().trainable_params);

  TrainReport report;
  try {
    report = fit.train(progress_logger(cfg.train.steps));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::training) write_diagnostic<3>(dir, fit.field(), fit.config(), fit.plan(), e.what());
    throw;
  }
  const double iou = fit.iou();
  write_checkpoint(make_checkpoint<3>(fit.field(), fit.config(), fit.plan()), (dir / "checkpoint.nrbf").string());

  Json r;
  r["status"] = "ok";
  r["task"] = "sdf";
  r["input"] = cfg.input.empty() ? Json(to_string(cfg.shape.kind)) : Json(cfg.input);
  r["plan"] = to_json(fit.plan());
  r["init"] = init_json(fit.init());
  r["metric"] = "iou";
  r["iou_res"] = cfg.eval.iou_res;
  r["loss_curve"] = report.loss;
  r["metric_curve"] = curve_json(report);
  r["final"] = {{"iou", metric_json(iou)}};
  r["checkpoint"] = "checkpoint.nrbf";
  r["timing"] = "timing.json";
  r["config"] = result_json(cfg);
  write_text(dir / "report.json", r.dump(2) + "\n");
  write_timing(dir, report, init_seconds);
  spdlog::info("final IoU {:.6f} after {} steps in {:.1f} s", iou, report.steps, report.seconds);
  return kOk;
}

/// Recomputes the final metrics of a checkpoint and prints them as JSON on `out`.
inline int eval(const std::string& checkpoint_path, const std::optional<std::string>& target_path,
                std::optional<int> threads, std::ostream& out) {
  const Checkpoint ck = read_checkpoint(checkpoint_path);
  const CheckpointHeader h = parse_header(ck);
  RunConfig cfg = h.config;
  if (threads) cfg.threads = *threads;

  std::string target = target_path.value_or(cfg.input);
  const std::string ext = detail::lower_ext(target);
  const bool is_image_target = ext == "png";
  const bool is_mesh_target = ext == "obj" || ext == "ply";
  require(!target.empty() || h.task == TaskKind::sdf, ErrorKind::config, "eval needs --target for an image checkpoint");
  require(target.empty() || is_image_target || is_mesh_target, ErrorKind::config,
          "unsupported target '" + target + "' (expected .png, .obj or .ply)");
  require(!(h.task == TaskKind::image && is_mesh_target), ErrorKind::config,
          "checkpoint holds an image field but the target '" + target + "' is a mesh");
  require(!(h.task == TaskKind::sdf && is_image_target), ErrorKind::config,
          "checkpoint holds an sdf field but the target '" + target + "' is an image");

  Json r;
  r["checkpoint"] = checkpoint_path;
  r["task"] = to_string(h.task);
  if (h.task == TaskKind::image) {
    ImageFit fit(load_image(target), ck);
    fit.field().set_threads(effective_threads(cfg));
    const ImageMetrics m = fit.evaluate();
    r["target"] = target;
    r["final"] = {{"psnr", metric_json(m.psnr)}, {"psnr_8bit", metric_json(m.psnr_8bit)}};
  } else {
    cfg.input = target;
    const auto oracle = std::make_shared<const SdfOracle>(make_oracle(cfg));
    SdfFit fit(oracle, ck);
    fit.field().set_threads(effective_threads(cfg));
    r["target"] = target.empty() ? Json(to_string(cfg.shape.kind)) : Json(target);
    r["iou_res"] = cfg.eval.iou_res;
    r["final"] = {{"iou", metric_json(fit.iou())}};
  }
  out << r.dump(2) << "\n";
  return kOk;
}

/// Writes init.json (centers and shapes) and init_overlay.png without training.
inline int init_inspect(const RunConfig& cfg) {
  require(cfg.task == TaskKind::image, ErrorKind::config, "init-inspect visualizes 2-D image initializations only");
  require(cfg.rbf.enabled, ErrorKind::config, "init-inspect needs adaptive RBFs (rbf.enabled = true)");
  require(!cfg.input.empty(), ErrorKind::config, "init-inspect needs an input image (--input or 'input' in the config)");
  const ImageBuffer img = load_image(cfg.input);
  const auto dir = prepare_out_dir(cfg);
  RunConfig c = cfg;
  const BudgetPlan plan = plan_budget<2>(c);
  Rng sub(c.seed, kStreamSubsample), km(c.seed, kStreamKMeans);
  const auto pts = subsample<2>(image_point_set(img), static_cast<std::size_t>(c.init.max_points), sub);
  const RbfInit<2> init = init_rbfs<2>(pts, plan.rbf_count, c.init, km);

  Json centers = Json::array(), shapes = Json::array();
  for (std::size_t i = 0; i < init.centers.size(); ++i) {
    centers.push_back({init.centers[i][0], init.centers[i][1]});
    const auto& s = init.shapes.shapes[i];
    shapes.push_back({s(0, 0), s(0, 1), s(1, 1)});
  }
  Json j;
  j["input"] = c.input;
  j["count"] = init.centers.size();
  j["objective"] = init.objective;
  j["reseed_iterations"] = init.reseed_iterations;
  j["shape_regularizer"] = init.regularizer;
  j["shape_layout"] = "[s00, s01, s11] of the covariance in normalized coordinates";
  j["centers"] = std::move(centers);
  j["shapes"] = std::move(shapes);
  write_text(dir / "init.json", j.dump(2) + "\n");
  save_image(ellipse_overlay(img, init.centers, init.shapes.shapes), (dir / "init_overlay.png").string(), 8);
  spdlog::info("{} centers written to {}", init.centers.size(), (dir / "init.json").string());
  return kOk;
}

}  // namespace neurbf::app
