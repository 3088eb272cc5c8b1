#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "otafl/aggregation.hpp"
#include "otafl/bounds.hpp"
#include "otafl/channel.hpp"
#include "otafl/optimizer.hpp"
#include "otafl/tasks.hpp"

namespace otafl {

struct TraceRow {
  int t = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double min_grad_norm = 0.0;  // running minimum up to this round
  double gap = 0.0;            // NaN when the optimum is unknown
  double theta_max = 0.0;      // 0 if every angle was undefined this round
  double eta = 0.0;
};

struct BreachEvent {
  int round = 0;
  std::string kind;  // "gradient_bound" or "theta_threshold"
  double value = 0.0;
  double threshold = 0.0;
};

// One training run.  Rows cover w^1 .. w^{T+1}: the final row records the
// post-update state so every prefix T has F(w^{T+1}) available.
struct RunTrace {
  std::string strategy;
  std::string fingerprint;  // canonical-config hash, filled in by the CLI layer
  std::uint64_t master_seed = 0;
  std::vector<TraceRow> rows;
  std::vector<Vec> device_grad_norms;   // per row: ||grad F_k|| for every k
  std::vector<double> device_grad_max;  // per row: max_k ||grad F_k||
  std::vector<BreachEvent> breaches;
  double f_star = std::numeric_limits<double>::quiet_NaN();
  double w1_dist2 = std::numeric_limits<double>::quiet_NaN();

  std::string to_csv() const;  // header: t,loss,grad_norm,min_grad_norm,gap,theta_max,eta
  static RunTrace from_csv(const std::string& text);

  TrajectoryView view() const;
  double final_loss() const;
};

struct RunOptions {
  bool redraw_channels = false;  // fresh gains every round (plan stays fixed)
  double redraw_mean = 0.0;      // Rayleigh mean for redraws
};

// Executes `rounds` federated rounds from w1.  All randomness is derived from
// master_seed by (purpose, device, round), so strategies under the same seed
// share noise and channel draws.  Numeric divergence raises NumericFailure;
// assumption breaches are logged in the trace and the run continues.
RunTrace run_rounds(const TrainingTask& task, const ChannelRealization& chan,
                    const AmplificationPlan& plan, const AggregationStrategy& strategy,
                    int rounds, std::uint64_t master_seed, const Vec& w1,
                    const RunOptions& opts = {});

// Bounded-concurrency executor for independent runs.  Results keep job order;
// individual failures are collected, never fatal to the sweep.
struct SweepOutcome {
  std::optional<RunTrace> trace;
  std::string error;
};
std::vector<SweepOutcome> sweep(const std::vector<std::function<RunTrace()>>& jobs,
                                int workers = 0);

// Column-wise mean of several traces (same shape required), as a CSV with the
// standard header.  Values are averaged in job order for determinism.
std::string mean_trace_csv(const std::vector<const RunTrace*>& traces);

}  // namespace otafl
