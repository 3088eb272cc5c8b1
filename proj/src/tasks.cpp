#include "otafl/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "otafl/errors.hpp"

namespace otafl {

void TrainingTask::set_gradient_bound(double g) {
  if (!(g > 0.0)) throw InvalidArgument("gradient bound must be > 0");
  constants_.G = g;
}

void TrainingTask::set_smoothness(double l) {
  if (!(l > 0.0)) throw InvalidArgument("smoothness constant must be > 0");
  constants_.L = l;
}

void TrainingTask::set_theta_threshold(double theta) {
  if (!(theta >= 0.0) || !(theta < M_PI / 2.0))
    throw InvalidArgument("theta threshold must lie in [0, pi/2)");
  constants_.theta_th = theta;
}

namespace {

void check_partition(const Dataset& data, const DataPartition& partition) {
  if (partition.empty()) throw InvalidArgument("partition: needs at least one device");
  std::vector<char> seen(data.size(), 0);
  for (const auto& idx : partition) {
    if (idx.empty()) throw InvalidArgument("partition: every device needs data");
    for (std::size_t i : idx) {
      if (i >= data.size()) throw InvalidArgument("partition: index out of range");
      if (seen[i]) throw InvalidArgument("partition: duplicate sample assignment");
      seen[i] = 1;
    }
  }
}

std::size_t partition_total(const DataPartition& partition) {
  std::size_t n = 0;
  for (const auto& idx : partition) n += idx.size();
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// RidgeTask

RidgeTask::RidgeTask(Dataset data, DataPartition partition, double ridge_coeff)
    : data_(std::move(data)), partition_(std::move(partition)), rho_(ridge_coeff) {
  if (data_.size() == 0 || data_.feature_dim() == 0)
    throw InvalidArgument("ridge: empty dataset");
  if (data_.targets.size() != data_.size())
    throw InvalidArgument("ridge: needs regression targets");
  if (!(rho_ >= 0.0)) throw InvalidArgument("ridge: ridge_coeff must be >= 0");
  check_partition(data_, partition_);
  dim_ = static_cast<int>(data_.feature_dim());

  const auto n = static_cast<Eigen::Index>(data_.size());
  const auto d = static_cast<Eigen::Index>(dim_);
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = data_.features[i][j];
    y(i) = data_.targets[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd hess = (x.transpose() * x) * inv_n;
  hess.diagonal().array() += rho_;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
  if (eig.info() != Eigen::Success) throw NumericFailure("ridge: eigen decomposition failed");
  constants_.M = eig.eigenvalues().minCoeff();
  constants_.L = eig.eigenvalues().maxCoeff();
  if (!(constants_.M > 0.0))
    throw InvalidArgument("ridge: objective is not strongly convex (increase ridge_coeff)");

  const Eigen::VectorXd rhs = (x.transpose() * y) * inv_n;
  const Eigen::VectorXd w_star = hess.ldlt().solve(rhs);
  Optimum opt;
  opt.w_star.assign(w_star.data(), w_star.data() + w_star.size());
  opt.f_star = loss(opt.w_star);
  optimum_ = std::move(opt);
}

double RidgeTask::device_weight(int k) const {
  return static_cast<double>(partition_.at(k).size()) /
         static_cast<double>(partition_total(partition_));
}

double RidgeTask::loss(const Vec& w) const {
  if (w.size() != static_cast<std::size_t>(dim_)) throw InvalidArgument("ridge: bad w size");
  double acc = 0.0;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const double r = dot(data_.features[i], w) - data_.targets[i];
    acc += r * r;
  }
  return acc / (2.0 * static_cast<double>(data_.size())) + 0.5 * rho_ * dot(w, w);
}

Vec RidgeTask::grad(const Vec& w) const {
  if (w.size() != static_cast<std::size_t>(dim_)) throw InvalidArgument("ridge: bad w size");
  Vec g(w.size(), 0.0);
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const double r = dot(data_.features[i], w) - data_.targets[i];
    axpy(r, data_.features[i], g);
  }
  scale(g, 1.0 / static_cast<double>(data_.size()));
  axpy(rho_, w, g);
  return g;
}

double RidgeTask::local_loss(int k, const Vec& w) const {
  const auto& idx = partition_.at(k);
  double acc = 0.0;
  for (std::size_t i : idx) {
    const double r = dot(data_.features[i], w) - data_.targets[i];
    acc += r * r;
  }
  return acc / (2.0 * static_cast<double>(idx.size())) + 0.5 * rho_ * dot(w, w);
}

Vec RidgeTask::local_grad(int k, const Vec& w) const {
  const auto& idx = partition_.at(k);
  Vec g(w.size(), 0.0);
  for (std::size_t i : idx) {
    const double r = dot(data_.features[i], w) - data_.targets[i];
    axpy(r, data_.features[i], g);
  }
  scale(g, 1.0 / static_cast<double>(idx.size()));
  axpy(rho_, w, g);
  return g;
}

// ---------------------------------------------------------------------------
// SmoothNetTask

SmoothNetTask::SmoothNetTask(Dataset data, DataPartition partition, int hidden)
    : data_(std::move(data)), partition_(std::move(partition)), hidden_(hidden) {
  if (data_.size() == 0 || data_.feature_dim() == 0)
    throw InvalidArgument("nonconvex task: empty dataset");
  if (!data_.is_classification() || data_.classes < 2)
    throw InvalidArgument("nonconvex task: needs labelled data with >= 2 classes");
  if (hidden_ < 1) throw InvalidArgument("nonconvex task: hidden width must be >= 1");
  check_partition(data_, partition_);
  in_ = static_cast<int>(data_.feature_dim());
  classes_ = data_.classes;
  dim_ = hidden_ * in_ + classes_ * hidden_;
  for (int lab : data_.labels)
    if (lab < 0 || lab >= classes_)
      throw InvalidArgument("nonconvex task: label out of range");
}

double SmoothNetTask::device_weight(int k) const {
  return static_cast<double>(partition_.at(k).size()) /
         static_cast<double>(partition_total(partition_));
}

double SmoothNetTask::pass(const std::vector<std::size_t>& idx, const Vec& w,
                           Vec* grad_out) const {
  if (w.size() != static_cast<std::size_t>(dim_))
    throw InvalidArgument("nonconvex task: bad w size");
  const int in = in_, hid = hidden_, cls = classes_;
  // Bias-free two-layer net: tanh(W1 x) into a softmax readout W2.  The blob
  // centers are drawn around the origin, so biases would be redundant.
  const double* w1 = w.data();         // hid x in
  const double* w2 = w1 + hid * in;    // cls x hid

  double* g1 = nullptr;
  double* g2 = nullptr;
  if (grad_out) {
    grad_out->assign(w.size(), 0.0);
    g1 = grad_out->data();
    g2 = g1 + hid * in;
  }

  std::vector<double> act(hid), logits(cls), probs(cls), dz1(hid);
  double total = 0.0;
  for (std::size_t s : idx) {
    const double* x = data_.features[s].data();
    const int label = data_.labels[s];

    for (int j = 0; j < hid; ++j) {
      double z = 0.0;
      const double* row = w1 + j * in;
      for (int i = 0; i < in; ++i) z += row[i] * x[i];
      act[j] = std::tanh(z);
    }
    double zmax = -1e300;
    for (int m = 0; m < cls; ++m) {
      double z = 0.0;
      const double* row = w2 + m * hid;
      for (int j = 0; j < hid; ++j) z += row[j] * act[j];
      logits[m] = z;
      zmax = std::max(zmax, z);
    }
    double denom = 0.0;
    for (int m = 0; m < cls; ++m) {
      probs[m] = std::exp(logits[m] - zmax);
      denom += probs[m];
    }
    for (int m = 0; m < cls; ++m) probs[m] /= denom;
    total += -std::log(std::max(probs[label], 1e-300));

    if (grad_out) {
      // dL/dz2 = p - onehot; backprop through tanh.
      std::fill(dz1.begin(), dz1.end(), 0.0);
      for (int m = 0; m < cls; ++m) {
        const double dz2 = probs[m] - (m == label ? 1.0 : 0.0);
        double* grow = g2 + m * hid;
        const double* row = w2 + m * hid;
        for (int j = 0; j < hid; ++j) {
          grow[j] += dz2 * act[j];
          dz1[j] += dz2 * row[j];
        }
      }
      for (int j = 0; j < hid; ++j) {
        const double d = dz1[j] * (1.0 - act[j] * act[j]);
        double* grow = g1 + j * in;
        for (int i = 0; i < in; ++i) grow[i] += d * x[i];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  if (grad_out) scale(*grad_out, inv);
  return total * inv;
}

double SmoothNetTask::loss(const Vec& w) const {
  std::vector<std::size_t> all(data_.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return pass(all, w, nullptr);
}

Vec SmoothNetTask::grad(const Vec& w) const {
  std::vector<std::size_t> all(data_.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Vec g;
  pass(all, w, &g);
  return g;
}

double SmoothNetTask::local_loss(int k, const Vec& w) const {
  return pass(partition_.at(k), w, nullptr);
}

Vec SmoothNetTask::local_grad(int k, const Vec& w) const {
  Vec g;
  pass(partition_.at(k), w, &g);
  return g;
}

// ---------------------------------------------------------------------------
// Data generation and partitioning

Dataset make_linear_dataset(RandomStream& stream, std::size_t samples, int dim,
                            double noise_std, double w_true_scale) {
  if (samples == 0 || dim <= 0) throw InvalidArgument("linear dataset: empty shape");
  if (noise_std < 0.0) throw InvalidArgument("linear dataset: noise_std must be >= 0");
  RandomStream feat = stream.derive(StreamPurpose::kFeatures);
  RandomStream targ = stream.derive(StreamPurpose::kTargets);
  const Vec w_true = gaussian_vector(targ, dim, w_true_scale * w_true_scale);
  Dataset data;
  data.features.reserve(samples);
  data.targets.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    Vec x = gaussian_vector(feat, dim, 1.0);
    double y = dot(x, w_true);
    if (noise_std > 0.0) y += noise_std * targ.gaussian();
    data.features.push_back(std::move(x));
    data.targets.push_back(y);
  }
  return data;
}

Dataset make_blob_dataset(RandomStream& stream, std::size_t samples, int dim, int classes,
                          double center_scale, double blob_std, double center_offset) {
  if (samples == 0 || dim <= 0 || classes < 2)
    throw InvalidArgument("blob dataset: bad shape");
  RandomStream feat = stream.derive(StreamPurpose::kFeatures);
  RandomStream targ = stream.derive(StreamPurpose::kTargets);
  std::vector<Vec> centers;
  centers.reserve(classes);
  for (int c = 0; c < classes; ++c) {
    Vec center = gaussian_vector(targ, dim, center_scale * center_scale);
    for (double& v : center) v += center_offset;
    centers.push_back(std::move(center));
  }
  Dataset data;
  data.classes = classes;
  data.features.reserve(samples);
  data.labels.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const int label = static_cast<int>(targ.next_u64() % static_cast<std::uint64_t>(classes));
    Vec x = gaussian_vector(feat, dim, blob_std * blob_std);
    axpy(1.0, centers[label], x);
    data.features.push_back(std::move(x));
    data.labels.push_back(label);
  }
  return data;
}

std::unique_ptr<RidgeTask> make_ridge_task(RandomStream stream, int devices,
                                           int samples_per_device, int dim, double noise_std,
                                           double ridge_coeff, double w_true_scale) {
  if (devices < 1 || samples_per_device < 1)
    throw InvalidArgument("ridge task: devices and samples_per_device must be >= 1");
  Dataset data = make_linear_dataset(
      stream, static_cast<std::size_t>(devices) * samples_per_device, dim, noise_std,
      w_true_scale);
  DataPartition part = partition_data(stream, data, devices, 0.0);
  return std::make_unique<RidgeTask>(std::move(data), std::move(part), ridge_coeff);
}

std::unique_ptr<SmoothNetTask> make_nonconvex_task(RandomStream stream, int devices,
                                                   int samples_per_device, int dim, int hidden,
                                                   int classes, double data_skew) {
  if (devices < 1 || samples_per_device < 1)
    throw InvalidArgument("nonconvex task: devices and samples_per_device must be >= 1");
  // Centers and blob spread are sized so classes overlap moderately at any
  // input width: pairwise center distance grows as center_scale*sqrt(2*dim),
  // so scaling center_scale by 1/sqrt(dim) pins the class separation at about
  // 3.2 noise standard deviations.  The loss floor then stays well above
  // zero, as in realistic classification, instead of the task being linearly
  // separable to zero loss.
  const double blob_std = 0.5;
  const double center_scale = 1.6 * blob_std / std::sqrt(2.0 * dim);
  Dataset data = make_blob_dataset(
      stream, static_cast<std::size_t>(devices) * samples_per_device, dim, classes,
      center_scale, blob_std, /*center_offset=*/0.0);
  DataPartition part = partition_data(stream, data, devices, data_skew);
  return std::make_unique<SmoothNetTask>(std::move(data), std::move(part), hidden);
}

DataPartition partition_data(RandomStream& stream, const Dataset& data, int devices,
                             double skew) {
  const std::size_t n = data.size();
  if (devices < 1) throw InvalidArgument("partition: devices must be >= 1");
  if (n < static_cast<std::size_t>(devices))
    throw InvalidArgument("partition: fewer samples than devices");
  if (!(skew >= 0.0) || !(skew <= 1.0))
    throw InvalidArgument("partition: skew must lie in [0, 1]");

  RandomStream rs = stream.derive(StreamPurpose::kPartition);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rs.next_u64() % (i + 1);
    std::swap(order[i], order[j]);
  }

  // First `sorted_count` shuffled indices form the sorted pool (dealt as
  // contiguous shards); the rest stay shuffled.
  const auto sorted_count = static_cast<std::size_t>(std::llround(skew * static_cast<double>(n)));
  std::vector<std::size_t> pool_sorted(order.begin(), order.begin() + sorted_count);
  std::vector<std::size_t> pool_random(order.begin() + sorted_count, order.end());
  auto key = [&](std::size_t i) {
    return data.is_classification() ? static_cast<double>(data.labels[i]) : data.targets[i];
  };
  std::stable_sort(pool_sorted.begin(), pool_sorted.end(),
                   [&](std::size_t a, std::size_t b) { return key(a) < key(b); });

  DataPartition part(devices);
  const std::size_t base = n / devices, extra = n % devices;
  std::size_t si = 0, ri = 0;
  for (int k = 0; k < devices; ++k) {
    const std::size_t want = base + (static_cast<std::size_t>(k) < extra ? 1 : 0);
    // Deal this device's share of the sorted pool first, then fill randomly.
    std::size_t sorted_share = sorted_count / devices +
        (static_cast<std::size_t>(k) < sorted_count % devices ? 1 : 0);
    sorted_share = std::min(sorted_share, want);
    auto& slot = part[k];
    slot.reserve(want);
    for (std::size_t i = 0; i < sorted_share; ++i) slot.push_back(pool_sorted[si++]);
    while (slot.size() < want) slot.push_back(pool_random[ri++]);
  }
  return part;
}

Vec measure_theta(const TrainingTask& task, const Vec& w) {
  const Vec g = task.grad(w);
  const double gn = norm2(g);
  Vec theta(task.devices(), 0.0);
  for (int k = 0; k < task.devices(); ++k) {
    const Vec gk = task.local_grad(k, w);
    const double gkn = norm2(gk);
    if (gn < 1e-12 || gkn < 1e-12) {
      theta[k] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const double c = std::clamp(dot(g, gk) / (gn * gkn), -1.0, 1.0);
    theta[k] = std::acos(c);
  }
  return theta;
}

// ---------------------------------------------------------------------------
// IDX loader

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'", 0);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

std::uint32_t read_u32_be(const std::vector<unsigned char>& buf, std::size_t offset,
                          const std::string& what) {
  if (offset + 4 > buf.size())
    throw FormatError("truncated " + what, offset);
  return (static_cast<std::uint32_t>(buf[offset]) << 24) |
         (static_cast<std::uint32_t>(buf[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(buf[offset + 2]) << 8) |
         static_cast<std::uint32_t>(buf[offset + 3]);
}

}  // namespace

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  if (read_u32_be(img, 0, "image magic") != 0x00000803u)
    throw FormatError("bad image magic in '" + images_path + "'", 0);
  const std::uint32_t count = read_u32_be(img, 4, "image count");
  const std::uint32_t rows = read_u32_be(img, 8, "image rows");
  const std::uint32_t cols = read_u32_be(img, 12, "image cols");
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  const std::size_t need = 16 + static_cast<std::size_t>(count) * pixels;
  if (img.size() < need) throw FormatError("truncated image payload", img.size());

  const auto lab = read_file(labels_path);
  if (read_u32_be(lab, 0, "label magic") != 0x00000801u)
    throw FormatError("bad label magic in '" + labels_path + "'", 0);
  const std::uint32_t lab_count = read_u32_be(lab, 4, "label count");
  if (lab_count != count)
    throw FormatError("image/label count mismatch", 4);
  if (lab.size() < 8 + static_cast<std::size_t>(lab_count))
    throw FormatError("truncated label payload", lab.size());

  Dataset data;
  data.features.reserve(count);
  data.labels.reserve(count);
  int max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Vec x(pixels);
    const std::size_t off = 16 + static_cast<std::size_t>(i) * pixels;
    for (std::size_t p = 0; p < pixels; ++p)
      x[p] = static_cast<double>(img[off + p]) / 255.0;
    data.features.push_back(std::move(x));
    const int label = static_cast<int>(lab[8 + i]);
    max_label = std::max(max_label, label);
    data.labels.push_back(label);
  }
  data.classes = max_label + 1;
  return data;
}

// ---------------------------------------------------------------------------
// Constant calibration

CalibrationReport calibrate_constants(TrainingTask& task, const Vec& w1,
                                      const EtaSchedule& schedule, int warmup_rounds,
                                      RandomStream stream, bool estimate_smoothness,
                                      double safety_factor) {
  if (warmup_rounds < 1) throw InvalidArgument("calibrate: warmup_rounds must be >= 1");
  if (!(safety_factor >= 1.0)) throw InvalidArgument("calibrate: safety factor must be >= 1");

  CalibrationReport report;
  std::vector<Vec> visited;
  visited.reserve(warmup_rounds + 1);
  Vec w = w1;
  visited.push_back(w);
  for (int t = 1; t <= warmup_rounds; ++t) {
    Vec gbar(w.size(), 0.0);
    for (int k = 0; k < task.devices(); ++k) {
      Vec gk = task.local_grad(k, w);
      report.max_device_grad_norm = std::max(report.max_device_grad_norm, norm2(gk));
      axpy(task.device_weight(k), gk, gbar);
    }
    const double n = norm2(gbar);
    if (n > 1e-12) axpy(-schedule.at(t) / n, gbar, w);
    visited.push_back(w);
  }
  if (!(report.max_device_grad_norm > 0.0))
    throw InvalidArgument("calibrate: all gradients vanished during warm-up");
  report.gradient_bound = safety_factor * report.max_device_grad_norm;
  task.set_gradient_bound(report.gradient_bound);

  if (estimate_smoothness) {
    // Sample points around the visited trajectory; >= 10^4 pairs, factor-2 margin.
    const int points = 160;
    double extent = 0.0;
    for (const auto& v : visited) extent = std::max(extent, norm2(sub(v, visited.back())));
    const double jitter_sd = 0.25 * (extent + 0.1) / std::sqrt(static_cast<double>(w.size()));
    RandomStream cs = stream.derive(StreamPurpose::kCalibrate);
    std::vector<Vec> pts;
    std::vector<Vec> grads;
    pts.reserve(points);
    grads.reserve(points);
    for (int i = 0; i < points; ++i) {
      const auto& base = visited[cs.next_u64() % visited.size()];
      Vec p = gaussian_vector(cs, w.size(), jitter_sd * jitter_sd);
      axpy(1.0, base, p);
      grads.push_back(task.grad(p));
      pts.push_back(std::move(p));
    }
    double worst = 0.0;
    int pairs = 0;
    for (int i = 0; i < points; ++i) {
      for (int j = i + 1; j < points; ++j) {
        const double dw = norm2(sub(pts[i], pts[j]));
        if (dw < 1e-12) continue;
        worst = std::max(worst, norm2(sub(grads[i], grads[j])) / dw);
        ++pairs;
      }
    }
    if (!(worst > 0.0)) throw InvalidArgument("calibrate: smoothness sampling degenerate");
    report.smoothness = 2.0 * worst;
    report.pairs_sampled = pairs;
    task.set_smoothness(report.smoothness);
  } else {
    report.smoothness = task.constants().L;
  }
  return report;
}

}  // namespace otafl
