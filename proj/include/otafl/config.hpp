#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "otafl/numerics.hpp"

namespace otafl {

// Flat key = value experiment description.  Unknown keys are hard errors so a
// typo can never silently fall back to a default.
struct ExperimentConfig {
  int case_no = 1;              // 1: smooth objective, 2: strongly convex
  std::string task = "ridge";   // ridge | nonconvex | idx

  // task shape
  int devices = 20;
  int dim = 20;
  int samples_per_device = 100;
  double data_noise_std = 0.005;
  double ridge_coeff = 0.1;
  double w_true_scale = 1.0;
  int hidden = 12;
  int classes = 4;
  double data_skew = 0.0;
  std::string idx_images;
  std::string idx_labels;

  // channel
  double channel_mean = 1e-5;
  double sigma2 = 1e-7;
  bool channel_redraw = false;
  Vec b_max = {2.2360679774997896};  // sqrt(5); scalar broadcasts to all devices
  double theta_th = 1.0471975511965976;  // pi/3

  // training
  std::vector<std::string> strategies = {"normalized"};
  double p = 0.75;
  double eta = 0.01;
  int rounds = 500;
  int seeds = 20;
  std::uint64_t seed0 = 1;
  std::optional<double> eps;       // case-II bias target
  std::optional<double> s_target;  // case-II contraction target
  int warmup_rounds = 50;
  std::optional<double> delta_f;   // override for the case-I decrease estimate
  double w0_scale = 1.0;
  std::string init = "gaussian";   // gaussian | zero

  // solver / execution
  double rate_tol = 1e-9;
  int oracle_grid = 200;
  int workers = 0;
  std::string out;       // default: $OTAFL_OUT or ./out
  std::string run_name;  // default derived from case and task

  Vec resolved_b_max() const;     // broadcast scalar caps to `devices`
  std::string resolved_out() const;
  std::string resolved_run_name() const;
  std::vector<std::uint64_t> seed_list() const;  // seed0 .. seed0 + seeds - 1

  // Canonical serialisation of the experiment identity (excludes out,
  // workers, run_name) and its FNV-1a fingerprint.
  std::string canonical() const;
  std::string fingerprint() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

}  // namespace otafl
