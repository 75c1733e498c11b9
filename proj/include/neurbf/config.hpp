#pragma once

#include <json.hpp>
#include <toml.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "neurbf/error.hpp"
#include "neurbf/field.hpp"
#include "neurbf/mesh_sdf.hpp"

namespace neurbf {

using Json = nlohmann::ordered_json;

struct RbfSection {
  bool enabled = true;
  int neighbors = 4;
  int features = 32;
  double freq_low = 0.125;   // 2^-3
  double freq_high = 4096.0; // 2^12
  bool normalize = true;
  bool compose = true;
  double init_scale = 0.01;
};

struct GridSection {
  int levels = 8;
  int channels = 2;
  int log2_table_max = 14;
  int res_min = 16;
  int res_max = 256;
  double budget_fraction = 0.3;
  double init_scale = 0.01;
};

struct DecoderSection {
  int width = 64;
  double freq_low = 1.0;
  double freq_high = 1000.0;
  bool compose = true;
};

struct InitSection {
  int kmeans_iters = 10;
  std::int64_t max_points = 1000000;
  double shape_reg_factor = 0.25;
  std::int64_t sdf_pool = 131072;
};

struct TrainSection {
  std::int64_t steps = 5000;
  std::int64_t batch = 16384;
  double lr_features = 5e-3;
  double lr_mlp = 1e-3;
  std::int64_t eval_every = 500;
  LossKind loss = LossKind::l2;
  double near_fraction = 0.875;
  double perturb_std = 0.01;  // fraction of the unit-box diagonal
};

struct EvalSection {
  int iou_res = 64;
};

/// Everything a run needs. Defaults depend on the task; unknown keys are rejected on load.
struct RunConfig {
  TaskKind task = TaskKind::image;
  std::string input;  // image path, or mesh path for sdf (empty: analytic shape)
  AnalyticShape shape{};
  std::uint64_t seed = 0;
  std::int64_t budget = 128000;
  std::string out = "neurbf_out";
  int threads = 0;  // 0: all logical cores
  RbfSection rbf;
  GridSection grid;
  DecoderSection decoder;
  InitSection init;
  TrainSection train;
  EvalSection eval;

  static RunConfig defaults(TaskKind task) {
    RunConfig c;
    c.task = task;
    if (task == TaskKind::sdf) {
      c.budget = 400000;
      c.rbf.neighbors = 8;
      c.rbf.features = 16;
      c.rbf.freq_low = 1.0;
      c.rbf.freq_high = 8.0;
      c.grid.res_max = 128;
      c.decoder.freq_low = 30.0;
      c.decoder.freq_high = 300.0;
      c.train.lr_features = 1e-4;
      c.train.lr_mlp = 3e-4;
      c.train.loss = LossKind::mape;
      c.train.batch = 16384;
    }
    return c;
  }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) { require(ok, ErrorKind::config, msg); };
    need(budget > 0, "budget must be positive");
    need(threads >= 0, "threads must be >= 0");
    need(rbf.neighbors >= 1, "rbf.neighbors must be >= 1");
    need(rbf.features >= 1, "rbf.features must be >= 1");
    need(rbf.freq_low > 0.0 && rbf.freq_low <= rbf.freq_high, "rbf frequencies need 0 < freq_low <= freq_high");
    need(rbf.features > 1 || rbf.freq_low == rbf.freq_high, "a single rbf feature needs freq_low == freq_high");
    need(rbf.init_scale >= 0.0, "rbf.init_scale must be >= 0");
    need(grid.levels >= 1 && grid.channels >= 1, "grid.levels and grid.channels must be >= 1");
    need(grid.log2_table_max >= 4 && grid.log2_table_max <= 24, "grid.log2_table_max must be in [4, 24]");
    need(grid.res_min >= 1 && grid.res_max >= grid.res_min, "grid resolutions need 1 <= res_min <= res_max");
    need(grid.budget_fraction > 0.0 && grid.budget_fraction <= 1.0, "grid.budget_fraction must be in (0, 1]");
    need(grid.init_scale >= 0.0, "grid.init_scale must be >= 0");
    need(decoder.width >= 1, "decoder.width must be >= 1");
    need(decoder.freq_low > 0.0 && decoder.freq_low <= decoder.freq_high,
         "decoder frequencies need 0 < freq_low <= freq_high");
    need(init.kmeans_iters >= 1, "init.kmeans_iters must be >= 1");
    need(init.max_points >= 1, "init.max_points must be >= 1");
    need(init.shape_reg_factor >= 0.0, "init.shape_reg_factor must be >= 0");
    need(init.sdf_pool >= 1, "init.sdf_pool must be >= 1");
    need(train.steps >= 0, "train.steps must be >= 0");
    need(train.batch >= 1, "train.batch must be >= 1");
    need(train.lr_features > 0.0 && train.lr_mlp > 0.0, "learning rates must be positive");
    need(train.eval_every >= 0, "train.eval_every must be >= 0");
    need(train.near_fraction >= 0.0 && train.near_fraction <= 1.0, "train.near_fraction must be in [0, 1]");
    need(train.perturb_std >= 0.0, "train.perturb_std must be >= 0");
    need(eval.iou_res >= 2, "eval.iou_res must be >= 2");
    if (task == TaskKind::sdf && input.empty()) shape.validate();
  }
};

inline const char* to_string(LossKind k) { return k == LossKind::l2 ? "l2" : "mape"; }
inline const char* to_string(ShapeKind k) {
  return k == ShapeKind::sphere ? "sphere" : (k == ShapeKind::box ? "box" : "torus");
}

inline TaskKind parse_task(const std::string& s) {
  if (s == "image") return TaskKind::image;
  if (s == "sdf") return TaskKind::sdf;
  fail(ErrorKind::config, "unknown task '" + s + "' (expected image or sdf)");
}

inline Json to_json(const RunConfig& c) {
  auto vec3 = [](const Vec3& v) { return Json::array({v[0], v[1], v[2]}); };
  Json j;
  j["task"] = to_string(c.task);
  j["input"] = c.input;
  j["seed"] = c.seed;
  j["budget"] = c.budget;
  j["out"] = c.out;
  j["threads"] = c.threads;
  j["shape"] = {{"kind", to_string(c.shape.kind)},
                {"center", vec3(c.shape.center)},
                {"radius", c.shape.radius},
                {"half_extents", vec3(c.shape.half_extents)},
                {"major_radius", c.shape.major_radius},
                {"minor_radius", c.shape.minor_radius}};
  j["rbf"] = {{"enabled", c.rbf.enabled},         {"neighbors", c.rbf.neighbors}, {"features", c.rbf.features},
              {"freq_low", c.rbf.freq_low},       {"freq_high", c.rbf.freq_high}, {"normalize", c.rbf.normalize},
              {"compose", c.rbf.compose},         {"init_scale", c.rbf.init_scale}};
  j["grid"] = {{"levels", c.grid.levels},
               {"channels", c.grid.channels},
               {"log2_table_max", c.grid.log2_table_max},
               {"res_min", c.grid.res_min},
               {"res_max", c.grid.res_max},
               {"budget_fraction", c.grid.budget_fraction},
               {"init_scale", c.grid.init_scale}};
  j["decoder"] = {{"width", c.decoder.width},
                  {"freq_low", c.decoder.freq_low},
                  {"freq_high", c.decoder.freq_high},
                  {"compose", c.decoder.compose}};
  j["init"] = {{"kmeans_iters", c.init.kmeans_iters},
               {"max_points", c.init.max_points},
               {"shape_reg_factor", c.init.shape_reg_factor},
               {"sdf_pool", c.init.sdf_pool}};
  j["train"] = {{"steps", c.train.steps},
                {"batch", c.train.batch},
                {"lr_features", c.train.lr_features},
                {"lr_mlp", c.train.lr_mlp},
                {"eval_every", c.train.eval_every},
                {"loss", to_string(c.train.loss)},
                {"near_fraction", c.train.near_fraction},
                {"perturb_std", c.train.perturb_std}};
  j["eval"] = {{"iou_res", c.eval.iou_res}};
  return j;
}

/// Config without run-location settings (output directory, thread count), which never change results.
inline Json result_json(const RunConfig& c) {
  Json j = to_json(c);
  j.erase("out");
  j.erase("threads");
  return j;
}

namespace detail {

/// Reads keys from a JSON object, remembering which were consumed.
class ObjectReader {
 public:
  ObjectReader(const Json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    require(obj.is_object(), ErrorKind::config, "'" + (prefix_.empty() ? std::string("config") : prefix_) +
                                                    "' must be a table");
  }

  template <class T>
  void get(const char* key, T& out) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    seen_.insert(key);
    const std::string name = prefix_.empty() ? key : prefix_ + "." + key;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        require(it->is_boolean(), ErrorKind::config, "'" + name + "' must be a boolean");
        out = it->template get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        require(it->is_number_integer() || it->is_number_unsigned(), ErrorKind::config,
                "'" + name + "' must be an integer");
        out = it->template get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        require(it->is_number(), ErrorKind::config, "'" + name + "' must be a number");
        out = it->template get<T>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        require(it->is_string(), ErrorKind::config, "'" + name + "' must be a string");
        out = it->template get<std::string>();
      } else if constexpr (std::is_same_v<T, Vec3>) {
        require(it->is_array() && it->size() == 3, ErrorKind::config, "'" + name + "' must be an array of 3 numbers");
        for (std::size_t i = 0; i < 3; ++i) {
          require((*it)[i].is_number(), ErrorKind::config, "'" + name + "' must be an array of 3 numbers");
          out[i] = (*it)[i].template get<double>();
        }
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::config, "'" + name + "': " + e.what());
    }
  }

  const Json* child(const char* key) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key()))
        fail(ErrorKind::config, "unknown config key '" + (prefix_.empty() ? it.key() : prefix_ + "." + it.key()) + "'");
  }

 private:
  const Json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

inline Json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    Json j = Json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const auto* a = node.as_array()) {
    Json j = Json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  fail(ErrorKind::config, "unsupported TOML value type (dates and times are not config values)");
}

}  // namespace detail

/// Overlays `j` on the defaults of its task (or `fallback` when `task` is absent).
inline RunConfig config_from_json(const Json& j, TaskKind fallback) {
  TaskKind task = fallback;
  if (j.is_object() && j.contains("task")) {
    require(j["task"].is_string(), ErrorKind::config, "'task' must be a string");
    task = parse_task(j["task"].get<std::string>());
  }
  RunConfig c = RunConfig::defaults(task);
  detail::ObjectReader r(j, "");
  std::string task_str;
  r.get("task", task_str);
  r.get("input", c.input);
  r.get("seed", c.seed);
  r.get("budget", c.budget);
  r.get("out", c.out);
  r.get("threads", c.threads);
  if (const Json* s = r.child("shape")) {
    detail::ObjectReader sr(*s, "shape");
    std::string kind = to_string(c.shape.kind);
    sr.get("kind", kind);
    if (kind == "sphere") c.shape.kind = ShapeKind::sphere;
    else if (kind == "box") c.shape.kind = ShapeKind::box;
    else if (kind == "torus") c.shape.kind = ShapeKind::torus;
    else fail(ErrorKind::config, "unknown shape kind '" + kind + "' (expected sphere, box or torus)");
    sr.get("center", c.shape.center);
    sr.get("radius", c.shape.radius);
    sr.get("half_extents", c.shape.half_extents);
    sr.get("major_radius", c.shape.major_radius);
    sr.get("minor_radius", c.shape.minor_radius);
    sr.finish();
  }
  if (const Json* s = r.child("rbf")) {
    detail::ObjectReader sr(*s, "rbf");
    sr.get("enabled", c.rbf.enabled);
    sr.get("neighbors", c.rbf.neighbors);
    sr.get("features", c.rbf.features);
    sr.get("freq_low", c.rbf.freq_low);
    sr.get("freq_high", c.rbf.freq_high);
    sr.get("normalize", c.rbf.normalize);
    sr.get("compose", c.rbf.compose);
    sr.get("init_scale", c.rbf.init_scale);
    sr.finish();
  }
  if (const Json* s = r.child("grid")) {
    detail::ObjectReader sr(*s, "grid");
    sr.get("levels", c.grid.levels);
    sr.get("channels", c.grid.channels);
    sr.get("log2_table_max", c.grid.log2_table_max);
    sr.get("res_min", c.grid.res_min);
    sr.get("res_max", c.grid.res_max);
    sr.get("budget_fraction", c.grid.budget_fraction);
    sr.get("init_scale", c.grid.init_scale);
    sr.finish();
  }
  if (const Json* s = r.child("decoder")) {
    detail::ObjectReader sr(*s, "decoder");
    sr.get("width", c.decoder.width);
    sr.get("freq_low", c.decoder.freq_low);
    sr.get("freq_high", c.decoder.freq_high);
    sr.get("compose", c.decoder.compose);
    sr.finish();
  }
  if (const Json* s = r.child("init")) {
    detail::ObjectReader sr(*s, "init");
    sr.get("kmeans_iters", c.init.kmeans_iters);
    sr.get("max_points", c.init.max_points);
    sr.get("shape_reg_factor", c.init.shape_reg_factor);
    sr.get("sdf_pool", c.init.sdf_pool);
    sr.finish();
  }
  if (const Json* s = r.child("train")) {
    detail::ObjectReader sr(*s, "train");
    sr.get("steps", c.train.steps);
    sr.get("batch", c.train.batch);
    sr.get("lr_features", c.train.lr_features);
    sr.get("lr_mlp", c.train.lr_mlp);
    sr.get("eval_every", c.train.eval_every);
    std::string loss = to_string(c.train.loss);
    sr.get("loss", loss);
    if (loss == "l2") c.train.loss = LossKind::l2;
    else if (loss == "mape") c.train.loss = LossKind::mape;
    else fail(ErrorKind::config, "unknown loss '" + loss + "' (expected l2 or mape)");
    sr.get("near_fraction", c.train.near_fraction);
    sr.get("perturb_std", c.train.perturb_std);
    sr.finish();
  }
  if (const Json* s = r.child("eval")) {
    detail::ObjectReader sr(*s, "eval");
    sr.get("iou_res", c.eval.iou_res);
    sr.finish();
  }
  r.finish();
  return c;
}

inline RunConfig config_from_toml(const std::string& text, TaskKind fallback, const std::string& origin = "config") {
  toml::table tbl;
  try {
    tbl = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << origin << ": " << e.description() << " (line " << e.source().begin.line << ")";
    fail(ErrorKind::config, msg.str());
  }
  return config_from_json(detail::toml_to_json(tbl), fallback);
}

/// Loads a TOML file, or a JSON file (such as a config.echo.json) when the name ends in .json.
inline RunConfig load_config(const std::string& path, TaskKind fallback) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  if (detail::lower_ext(path) == "json") {
    Json j;
    try {
      j = Json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::config, path + ": " + e.what());
    }
    return config_from_json(j, fallback);
  }
  return config_from_toml(ss.str(), fallback, path);
}

namespace detail {

inline void json_to_toml(const Json& j, toml::table& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& v = it.value();
    const std::string& k = it.key();
    if (v.is_object()) {
      toml::table sub;
      json_to_toml(v, sub);
      out.insert(k, std::move(sub));
    } else if (v.is_array()) {
      toml::array arr;
      for (const auto& e : v) arr.push_back(e.get<double>());
      out.insert(k, std::move(arr));
    } else if (v.is_boolean()) {
      out.insert(k, v.get<bool>());
    } else if (v.is_number_integer() || v.is_number_unsigned()) {
      out.insert(k, v.get<std::int64_t>());
    } else if (v.is_number_float()) {
      out.insert(k, v.get<double>());
    } else if (v.is_string()) {
      out.insert(k, v.get<std::string>());
    }
  }
}

}  // namespace detail

/// Effective configuration rendered as TOML.
inline std::string to_toml(const RunConfig& c) {
  toml::table t;
  detail::json_to_toml(to_json(c), t);
  std::ostringstream ss;
  ss << toml::toml_formatter{t, toml::format_flags::relaxed_float_precision} << "\n";
  return ss.str();
}

}  // namespace neurbf
