#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "neurbf/app.hpp"

namespace {

using neurbf::TaskKind;
using neurbf::app::Overrides;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("neurbf");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("NEURBF_LOG")) {
    const std::string level(env);
    if (level == "error") spdlog::set_level(spdlog::level::err);
    else if (level == "info") spdlog::set_level(spdlog::level::info);
    else if (level == "debug") spdlog::set_level(spdlog::level::debug);
    else spdlog::warn("ignoring NEURBF_LOG='{}' (expected error, info or debug)", level);
  }
}

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "TOML config file (or a config.echo.json)");
  cmd->add_option("--input,input", o.input, "Input image, or mesh (.obj/.ply) for fit-sdf");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--threads", o.threads, "Worker threads (0: all logical cores)");
  cmd->add_option("--steps", o.steps, "Training steps");
  cmd->add_option("--budget", o.budget, "Total parameter budget");
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"Neural fields with adaptive radial basis functions"};
  app.require_subcommand(0, 1);
  std::string defaults_task;
  auto* print_flag = app.add_option("--print-defaults", defaults_task, "Print the default TOML config for a task")
                         ->expected(0, 1)
                         ->default_str("image");

  Overrides image_o, sdf_o, inspect_o;
  auto* fit_image = app.add_subcommand("fit-image", "Fit an image");
  add_run_flags(fit_image, image_o);
  auto* fit_sdf = app.add_subcommand("fit-sdf", "Fit a signed distance field (mesh or analytic shape)");
  add_run_flags(fit_sdf, sdf_o);
  auto* inspect = app.add_subcommand("init-inspect", "Write the RBF initialization of an image without training");
  add_run_flags(inspect, inspect_o);

  std::string checkpoint;
  std::optional<std::string> target;
  std::optional<int> eval_threads;
  auto* eval = app.add_subcommand("eval", "Recompute metrics of a checkpoint and print them as JSON");
  eval->add_option("--checkpoint,checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--target,target", target, "Target image or mesh (default: the input recorded in the checkpoint)");
  eval->add_option("--threads", eval_threads, "Worker threads (0: all logical cores)");

  std::string task_name = "image";
  auto* defaults = app.add_subcommand("print-defaults", "Print the default TOML config");
  defaults->add_option("--task,task", task_name, "image or sdf")->check(CLI::IsMember({"image", "sdf"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : neurbf::app::kConfigError;
  }

  try {
    if (*print_flag) {
      std::cout << neurbf::to_toml(neurbf::RunConfig::defaults(neurbf::parse_task(defaults_task)));
      return neurbf::app::kOk;
    }
    if (*defaults) {
      std::cout << neurbf::to_toml(neurbf::RunConfig::defaults(neurbf::parse_task(task_name)));
      return neurbf::app::kOk;
    }
    if (*fit_image) return neurbf::app::fit_image(neurbf::app::resolve_config(TaskKind::image, image_o));
    if (*fit_sdf) return neurbf::app::fit_sdf(neurbf::app::resolve_config(TaskKind::sdf, sdf_o));
    if (*inspect) {
      const neurbf::RunConfig c = inspect_o.config ? neurbf::load_config(*inspect_o.config, TaskKind::image)
                                                   : neurbf::RunConfig::defaults(TaskKind::image);
      neurbf::require(c.task == TaskKind::image, neurbf::ErrorKind::config,
                      "init-inspect visualizes 2-D image initializations only (config task is sdf)");
      return neurbf::app::init_inspect(neurbf::app::resolve_config(TaskKind::image, inspect_o));
    }
    if (*eval) return neurbf::app::eval(checkpoint, target, eval_threads, std::cout);
    std::cout << app.help();
    return neurbf::app::kConfigError;
  } catch (const neurbf::Error& e) {
    spdlog::error("{}", e.what());
    return neurbf::app::exit_code(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return neurbf::app::kInternalError;
  }
}
