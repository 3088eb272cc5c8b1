#include "otafl/trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "otafl/errors.hpp"

namespace otafl {
namespace {

void format_row(std::string& out, const TraceRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.t, r.loss,
                r.grad_norm, r.min_grad_norm, r.gap, r.theta_max, r.eta);
  out += buf;
}

constexpr const char* kHeader = "t,loss,grad_norm,min_grad_norm,gap,theta_max,eta";

}  // namespace

std::string RunTrace::to_csv() const {
  std::string out(kHeader);
  out += '\n';
  for (const auto& r : rows) format_row(out, r);
  return out;
}

RunTrace RunTrace::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader)
    throw InvalidArgument("trace csv: unexpected header '" + line + "'");
  RunTrace trace;
  int expect_t = 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TraceRow r;
    const int got = std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &r.t, &r.loss,
                                &r.grad_norm, &r.min_grad_norm, &r.gap, &r.theta_max, &r.eta);
    if (got != 7) throw InvalidArgument("trace csv: malformed row '" + line + "'");
    if (r.t != expect_t)
      throw InvalidArgument("trace csv: rounds must increase by one from 1");
    ++expect_t;
    trace.rows.push_back(r);
  }
  if (trace.rows.empty()) throw InvalidArgument("trace csv: no rows");
  return trace;
}

TrajectoryView RunTrace::view() const {
  TrajectoryView v;
  v.f_star = f_star;
  for (const auto& r : rows) {
    v.loss.push_back(r.loss);
    v.grad_norm.push_back(r.grad_norm);
    v.min_grad_norm.push_back(r.min_grad_norm);
    v.gap.push_back(r.gap);
    v.theta_max.push_back(r.theta_max);
  }
  if (device_grad_max.size() == rows.size()) {
    v.device_grad_max = device_grad_max;
  } else {
    // Traces reloaded from CSV have no per-device series; fall back to the
    // global gradient norm, a lower bound on the per-device max.
    v.device_grad_max = v.grad_norm;
  }
  return v;
}

double RunTrace::final_loss() const {
  if (rows.empty()) throw InvalidArgument("trace: empty");
  return rows.back().loss;
}

RunTrace run_rounds(const TrainingTask& task, const ChannelRealization& chan,
                    const AmplificationPlan& plan, const AggregationStrategy& strategy,
                    int rounds, std::uint64_t master_seed, const Vec& w1,
                    const RunOptions& opts) {
  if (rounds < 1) throw InvalidArgument("run_rounds: need at least one round");
  if (w1.size() != static_cast<std::size_t>(task.dim()))
    throw InvalidArgument("run_rounds: w1 has wrong dimension");
  chan.validate();
  if (task.devices() != chan.devices())
    throw InvalidArgument("run_rounds: task and channel device counts differ");

  const bool ideal = strategy.kind == StrategyKind::kIdealNoiseless;
  TransmitConfig cfg;
  cfg.a = plan.a;
  cfg.b = plan.b;
  cfg.b_max = plan.b_max;
  if (!ideal) cfg.validate(chan);

  const RandomStream root(master_seed);
  RunTrace trace;
  trace.strategy = strategy.name();
  trace.master_seed = master_seed;
  if (task.optimum()) {
    trace.f_star = task.optimum()->f_star;
    trace.w1_dist2 = dot(sub(w1, task.optimum()->w_star), sub(w1, task.optimum()->w_star));
  }

  const int K = task.devices();
  const double theta_cfg = task.constants().theta_th;
  const double g_cfg = task.constants().G;
  Vec w = w1;
  double min_grad = std::numeric_limits<double>::infinity();
  std::vector<Vec> grads(K);
  std::vector<Vec> signals(K);
  ChannelRealization chan_t = chan;

  for (int t = 1; t <= rounds + 1; ++t) {
    // Record the state w^t before updating (the final iteration only records).
    Vec gbar(w.size(), 0.0);
    Vec dev_norms(static_cast<std::size_t>(K), 0.0);
    double dev_max = 0.0;
    for (int k = 0; k < K; ++k) {
      grads[k] = task.local_grad(k, w);
      dev_norms[k] = norm2(grads[k]);
      dev_max = std::max(dev_max, dev_norms[k]);
      axpy(task.device_weight(k), grads[k], gbar);
    }
    const double gn = norm2(gbar);
    min_grad = std::min(min_grad, gn);

    double theta_max = 0.0;  // stays 0 when every angle is undefined
    for (int k = 0; k < K; ++k) {
      if (gn < 1e-12 || dev_norms[k] < 1e-12) continue;
      const double c = std::clamp(dot(gbar, grads[k]) / (gn * dev_norms[k]), -1.0, 1.0);
      theta_max = std::max(theta_max, std::acos(c));
    }

    TraceRow row;
    row.t = t;
    row.loss = task.loss(w);
    row.grad_norm = gn;
    row.min_grad_norm = min_grad;
    row.gap = std::isfinite(trace.f_star) ? row.loss - trace.f_star
                                          : std::numeric_limits<double>::quiet_NaN();
    row.theta_max = theta_max;
    row.eta = plan.eta.at(t);
    trace.rows.push_back(row);
    trace.device_grad_norms.push_back(dev_norms);
    trace.device_grad_max.push_back(dev_max);

    if (g_cfg > 0.0 && dev_max > g_cfg * (1.0 + 1e-12))
      trace.breaches.push_back({t, "gradient_bound", dev_max, g_cfg});
    if (theta_max > theta_cfg && theta_cfg > 0.0)
      trace.breaches.push_back({t, "theta_threshold", theta_max, theta_cfg});

    if (t == rounds + 1) break;

    if (opts.redraw_channels) {
      RandomStream cs = root.derive(StreamPurpose::kChannel, 0, static_cast<std::uint64_t>(t));
      chan_t = draw_channels(cs, K, opts.redraw_mean, chan.sigma2, chan.dim);
    }

    Vec y;
    if (ideal) {
      y = gbar;
    } else {
      for (int k = 0; k < K; ++k) signals[k] = encode(strategy, grads[k]);
      RandomStream noise = root.derive(StreamPurpose::kNoise, 0, static_cast<std::uint64_t>(t));
      y = ota_superpose(signals, cfg, chan_t, noise);
    }

    const double eta_t = plan.eta.at(t);
    const Vec w_prev = w;
    axpy(-eta_t, y, w);

    if (!all_finite(w))
      throw NumericFailure("run diverged: non-finite parameters at round " + std::to_string(t) +
                           " (strategy " + strategy.name() + ", seed " +
                           std::to_string(master_seed) + ")");

    // With unit-norm encodings and a noiseless static channel the update is
    // contained in a ball of radius eta * a * sum h b.
    if (strategy.kind == StrategyKind::kNormalized && chan.sigma2 == 0.0 &&
        !opts.redraw_channels) {
      double sig = 0.0;
      for (int k = 0; k < K; ++k) sig += chan.h[k] * cfg.b[k];
      const double step = norm2(sub(w, w_prev));
      if (step > eta_t * cfg.a * sig * (1.0 + 1e-9))
        throw NumericFailure("update exceeded its noiseless envelope at round " +
                             std::to_string(t));
    }
  }
  return trace;
}

std::vector<SweepOutcome> sweep(const std::vector<std::function<RunTrace()>>& jobs,
                                int workers) {
  std::vector<SweepOutcome> results(jobs.size());
  if (jobs.empty()) return results;
  unsigned n = workers > 0 ? static_cast<unsigned>(workers)
                           : std::max(1u, std::thread::hardware_concurrency());
  n = std::min<unsigned>(n, static_cast<unsigned>(jobs.size()));

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        results[i].trace = jobs[i]();
      } catch (const std::exception& e) {
        results[i].error = e.what();
      }
    }
  };
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return results;
}

std::string mean_trace_csv(const std::vector<const RunTrace*>& traces) {
  if (traces.empty()) throw InvalidArgument("mean trace: no inputs");
  const std::size_t rows = traces[0]->rows.size();
  for (const auto* t : traces)
    if (t->rows.size() != rows) throw InvalidArgument("mean trace: shape mismatch");

  std::string out(kHeader);
  out += '\n';
  const double inv = 1.0 / static_cast<double>(traces.size());
  for (std::size_t i = 0; i < rows; ++i) {
    TraceRow m;
    m.t = traces[0]->rows[i].t;
    for (const auto* t : traces) {
      const auto& r = t->rows[i];
      m.loss += r.loss;
      m.grad_norm += r.grad_norm;
      m.min_grad_norm += r.min_grad_norm;
      m.gap += r.gap;
      m.theta_max += r.theta_max;
      m.eta += r.eta;
    }
    m.loss *= inv;
    m.grad_norm *= inv;
    m.min_grad_norm *= inv;
    m.gap *= inv;
    m.theta_max *= inv;
    m.eta *= inv;
    format_row(out, m);
  }
  return out;
}

}  // namespace otafl
