#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "otafl/numerics.hpp"
#include "otafl/schedule.hpp"

namespace otafl {

// Problem constants used by the planner and the bound evaluators.
//   L        smoothness constant (exact for ridge, estimated for the net)
//   M        strong-convexity constant (0 when not strongly convex)
//   G        per-device gradient-norm bound, set by calibration
//   theta_th configured cap on the angle between local and global gradients
struct TaskConstants {
  double L = 0.0;
  double M = 0.0;
  double G = 0.0;
  double theta_th = 0.0;
};

struct Optimum {
  Vec w_star;
  double f_star = 0.0;
};

// In-memory dataset; regression fills `targets`, classification fills `labels`.
struct Dataset {
  std::vector<Vec> features;
  Vec targets;
  std::vector<int> labels;
  int classes = 0;

  std::size_t size() const { return features.size(); }
  std::size_t feature_dim() const { return features.empty() ? 0 : features[0].size(); }
  bool is_classification() const { return !labels.empty(); }
};

// Per-device sample indices into a Dataset.
using DataPartition = std::vector<std::vector<std::size_t>>;

// A federated objective F(w) = sum_k (D_k / D_A) F_k(w).
class TrainingTask {
 public:
  virtual ~TrainingTask() = default;

  virtual int dim() const = 0;
  virtual int devices() const = 0;
  virtual double device_weight(int k) const = 0;  // D_k / D_A

  virtual double loss(const Vec& w) const = 0;
  virtual Vec grad(const Vec& w) const = 0;
  virtual double local_loss(int k, const Vec& w) const = 0;
  virtual Vec local_grad(int k, const Vec& w) const = 0;

  virtual std::string name() const = 0;

  const TaskConstants& constants() const { return constants_; }
  const std::optional<Optimum>& optimum() const { return optimum_; }

  void set_gradient_bound(double g);
  void set_smoothness(double l);
  void set_theta_threshold(double theta);

 protected:
  TaskConstants constants_;
  std::optional<Optimum> optimum_;
};

// Ridge regression F(w) = 1/(2 D_A) sum_i (x_i'w - y_i)^2 + rho/2 ||w||^2.
// L and M come from the exact extreme eigenvalues of the regularised Gram
// matrix; the optimum is the closed-form normal-equations solution.
class RidgeTask : public TrainingTask {
 public:
  RidgeTask(Dataset data, DataPartition partition, double ridge_coeff);

  int dim() const override { return dim_; }
  int devices() const override { return static_cast<int>(partition_.size()); }
  double device_weight(int k) const override;
  double loss(const Vec& w) const override;
  Vec grad(const Vec& w) const override;
  double local_loss(int k, const Vec& w) const override;
  Vec local_grad(int k, const Vec& w) const override;
  std::string name() const override { return "ridge"; }

 private:
  Dataset data_;
  DataPartition partition_;
  double rho_ = 0.0;
  int dim_ = 0;
};

// Two-layer tanh network with softmax cross-entropy: smooth and non-convex.
// Bias-free: parameters are flattened as [W1 (hidden x in), W2 (classes x hidden)].
class SmoothNetTask : public TrainingTask {
 public:
  SmoothNetTask(Dataset data, DataPartition partition, int hidden);

  int dim() const override { return dim_; }
  int devices() const override { return static_cast<int>(partition_.size()); }
  double device_weight(int k) const override;
  double loss(const Vec& w) const override;
  Vec grad(const Vec& w) const override;
  double local_loss(int k, const Vec& w) const override;
  Vec local_grad(int k, const Vec& w) const override;
  std::string name() const override { return "nonconvex"; }

  int input_dim() const { return in_; }
  int hidden_dim() const { return hidden_; }
  int class_count() const { return classes_; }

 private:
  // Accumulates loss and (optionally) gradient over one index set, averaged.
  double pass(const std::vector<std::size_t>& idx, const Vec& w, Vec* grad_out) const;

  Dataset data_;
  DataPartition partition_;
  int in_ = 0, hidden_ = 0, classes_ = 0, dim_ = 0;
};

// Synthetic data generators (all draws taken from the given stream).
Dataset make_linear_dataset(RandomStream& stream, std::size_t samples, int dim,
                            double noise_std, double w_true_scale);
// center_offset shifts every class center by a common positive amount per
// coordinate, mimicking nonnegative intensity features.
Dataset make_blob_dataset(RandomStream& stream, std::size_t samples, int dim, int classes,
                          double center_scale, double blob_std, double center_offset = 0.0);

// Convenience factories: generate data and split it evenly across K devices.
std::unique_ptr<RidgeTask> make_ridge_task(RandomStream stream, int devices,
                                           int samples_per_device, int dim, double noise_std,
                                           double ridge_coeff, double w_true_scale = 1.0);
std::unique_ptr<SmoothNetTask> make_nonconvex_task(RandomStream stream, int devices,
                                                   int samples_per_device, int dim, int hidden,
                                                   int classes, double data_skew = 0.0);

// Splits `data` into K index sets.  skew = 0 is an i.i.d. shuffle-split;
// skew = 1 deals label-sorted (or target-sorted) shards; intermediate values
// mix the two pools proportionally.
DataPartition partition_data(RandomStream& stream, const Dataset& data, int devices,
                             double skew);

// Angle (radians) between each local gradient and the global gradient at w.
// Zero-norm gradients yield NaN entries (undefined angle; excluded by callers).
Vec measure_theta(const TrainingTask& task, const Vec& w);

// Big-endian IDX image/label pair -> classification dataset with features
// scaled into [0, 1].  Malformed input raises FormatError with a byte offset.
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);

// Short pre-run to fix data-dependent constants:
//  - G = safety_factor * (largest per-device gradient norm seen along a
//    normalized-gradient descent warm-up from w1);
//  - if estimate_smoothness, L = 2 * max gradient-difference ratio over
//    >= 10^4 point pairs sampled around the warm-up trajectory.
struct CalibrationReport {
  double max_device_grad_norm = 0.0;
  double gradient_bound = 0.0;
  double smoothness = 0.0;
  int pairs_sampled = 0;
};
CalibrationReport calibrate_constants(TrainingTask& task, const Vec& w1,
                                      const EtaSchedule& schedule, int warmup_rounds,
                                      RandomStream stream, bool estimate_smoothness,
                                      double safety_factor = 1.5);

}  // namespace otafl
