#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "otafl/cli.hpp"
#include "otafl/config.hpp"
#include "otafl/errors.hpp"
#include "otafl/io.hpp"

namespace {

// Flat key=value overrides applied on top of the config file, e.g.
//   --set rounds=2000 --set seeds=5
otafl::ExperimentConfig load_config(const std::string& path,
                                    const std::vector<std::string>& overrides) {
  std::string text;
  if (!path.empty()) text = otafl::read_text_file(path);
  for (const auto& kv : overrides) text += "\n" + kv + "\n";
  return otafl::parse_config(text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"over-the-air federated learning: gain optimizer, trainer, bound verifier"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "experiment config file (key = value lines)");
  app.add_option("--set", overrides, "override a config key, e.g. --set rounds=2000");

  bool with_oracle = false;
  auto* optimize = app.add_subcommand("optimize", "solve the transmit-gain design and print it");
  optimize->add_flag("--oracle", with_oracle, "cross-check against the dense-grid oracle");

  std::string strategy_list;
  auto* train = app.add_subcommand("train", "run the federated simulation and write traces");
  train->add_option("--strategy", strategy_list,
                    "comma-separated strategies, e.g. normalized,raw_conservative");

  std::string trace_dir;
  auto* bounds = app.add_subcommand("bounds", "evaluate convergence bounds against traces");
  bounds->add_option("--dir", trace_dir, "trace directory (default: the config's run dir)");

  std::vector<double> eps_targets;
  auto* sweep = app.add_subcommand("sweep", "train at several bias targets (constant step)");
  sweep->add_option("--eps", eps_targets, "bias targets, e.g. --eps 0.05 0.1 0.2")
      ->expected(-1);

  int grid_points = 0;
  auto* oracle = app.add_subcommand("oracle", "compare the solver with the grid oracle");
  oracle->add_option("--grid", grid_points, "grid points per device (default from config)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!strategy_list.empty()) overrides.push_back("strategy = " + strategy_list);
    const otafl::ExperimentConfig cfg = load_config(config_path, overrides);
    if (optimize->parsed()) return otafl::cmd_optimize(cfg, with_oracle);
    if (train->parsed()) return otafl::cmd_train(cfg);
    if (bounds->parsed()) return otafl::cmd_bounds(cfg, trace_dir);
    if (sweep->parsed()) return otafl::cmd_sweep(cfg, eps_targets);
    if (oracle->parsed()) return otafl::cmd_oracle(cfg, grid_points);
  } catch (const otafl::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const otafl::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 1;
  } catch (const otafl::InvalidArgument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return 1;
  } catch (const otafl::SolverFailure& e) {
    std::fprintf(stderr, "solver failure: %s\n", e.what());
    return 2;
  } catch (const otafl::NumericFailure& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
