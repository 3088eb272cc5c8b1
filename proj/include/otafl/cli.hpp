#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "otafl/bounds.hpp"
#include "otafl/channel.hpp"
#include "otafl/config.hpp"
#include "otafl/optimizer.hpp"
#include "otafl/tasks.hpp"

namespace otafl {

// Everything needed to run one seeded experiment: the learning task, a fixed
// channel realization, the initial model, calibrated smoothness/gradient
// constants, and the transmit plan produced by the power optimizer.
struct ExperimentBundle {
  std::unique_ptr<TrainingTask> task;
  ChannelRealization chan;
  Vec w1;
  Vec b_max;
  AmplificationPlan plan;
  CalibrationReport calibration;
  double delta_f_est = 0.0;
  std::uint64_t seed = 0;
};

// Builds the bundle for one master seed.  Data, channel, initial point and
// calibration draws all come from decorrelated substreams of the seed, so the
// bundle is reproducible and independent of the aggregation strategy.
ExperimentBundle prepare_experiment(const ExperimentConfig& cfg, std::uint64_t seed);

// Re-plans the transmit gains for the same bundle with a different contraction
// target (constant-step runs only).  Reuses the solver artifacts so paired
// sweeps share everything except the amplification factor.
AmplificationPlan replan_case2(const ExperimentConfig& cfg, const ExperimentBundle& bundle,
                               double eps_target);

// Bound-evaluator inputs for a bundle's plan (T / delta_f / w1_dist2 are
// trajectory-specific and left at their defaults).
BoundInputs bound_inputs(const ExperimentBundle& bundle);

// Ablation baseline: every device transmits at its cap and the server scale is
// adjusted to keep the budget a * sum_k b_k equal to the optimized plan's
// value.  Both plans then spend the same nominal amplification; they differ in
// how the budget is split across devices.
AmplificationPlan capped_baseline_plan(const AmplificationPlan& plan,
                                       const ChannelRealization& chan, const Vec& b_max);

// Subcommand entry points.  Each returns a process exit code:
//   0 success, 1 configuration error, 2 solver/run failure, 3 bound violation.
int cmd_optimize(const ExperimentConfig& cfg, bool with_oracle);
int cmd_train(const ExperimentConfig& cfg);
int cmd_bounds(const ExperimentConfig& cfg, const std::string& trace_dir);
int cmd_sweep(const ExperimentConfig& cfg, const std::vector<double>& eps_targets);
int cmd_oracle(const ExperimentConfig& cfg, int grid_points);

}  // namespace otafl
