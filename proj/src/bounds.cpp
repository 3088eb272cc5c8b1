#include "otafl/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "otafl/errors.hpp"

namespace otafl {
namespace {

constexpr double kRelSlack = 1e-12;  // FP slack when comparing measured vs bound

void check_common(const BoundInputs& in) {
  if (in.h.size() != in.b.size() || in.h.empty())
    throw InvalidArgument("bound inputs: h and b must be non-empty and matched");
  if (!(in.a > 0.0)) throw InvalidArgument("bound inputs: a must be > 0");
  if (!(in.L > 0.0)) throw InvalidArgument("bound inputs: L must be > 0");
  if (!(in.theta_th >= 0.0) || !(in.theta_th < M_PI / 2.0))
    throw InvalidArgument("bound inputs: theta_th must lie in [0, pi/2)");
  if (in.sigma2 < 0.0) throw InvalidArgument("bound inputs: sigma2 must be >= 0");
  if (in.dim <= 0) throw InvalidArgument("bound inputs: dim must be > 0");
  if (in.T < 1) throw InvalidArgument("bound inputs: T must be >= 1");
}

double signal_sum(const BoundInputs& in) {
  double s = 0.0;
  for (std::size_t k = 0; k < in.h.size(); ++k) s += in.h[k] * in.b[k];
  if (!(s > 0.0)) throw InvalidArgument("bound inputs: sum h b must be > 0");
  return s;
}

double mean_over_seeds(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

// The guarantees assume every device angle stays below pi/2; once a measured
// angle reaches it the hypothesis is void and no finite bound is claimed.
bool theta_void(double theta) { return !(theta < M_PI / 2.0 * (1.0 - 1e-12)); }

}  // namespace

double variance_proxy(const BoundInputs& in) {
  double quad = 0.0, sig = 0.0;
  for (std::size_t k = 0; k < in.h.size(); ++k) {
    const double u = in.h[k] * in.b[k];
    quad += u * u;
    sig += u;
  }
  return 4.0 * quad + sig * sig + static_cast<double>(in.dim) * in.sigma2;
}

double grad_norm_bound(const BoundInputs& in) {
  check_common(in);
  if (in.eta.kind != EtaSchedule::Kind::kPowerLaw)
    throw InvalidArgument("grad-norm bound: requires the power-law schedule");
  const double p = in.eta.p;
  if (!(p > 0.5) || !(p < 1.0))
    throw InvalidArgument("grad-norm bound: requires 1/2 < p < 1");
  const double sig = signal_sum(in);
  const double cth = std::cos(in.theta_th);
  const double tf = std::pow(static_cast<double>(in.T), 1.0 - p);
  const double term1 = in.delta_f / (tf * cth * in.a * sig);
  const double term2 = (2.0 * p / (tf * (2.0 * p - 1.0))) *
                       (in.a * in.L / (2.0 * cth * sig)) * variance_proxy(in);
  return term1 + term2;
}

double contraction_factor(const BoundInputs& in) {
  check_common(in);
  if (!(in.M > 0.0)) throw InvalidArgument("contraction factor: M must be > 0");
  if (!(in.G > 0.0)) throw InvalidArgument("contraction factor: G must be > 0");
  if (in.eta.kind != EtaSchedule::Kind::kConstant)
    throw InvalidArgument("contraction factor: requires a constant schedule");
  const double cth = std::cos(in.theta_th);
  const double q = 1.0 - 2.0 * in.M * cth * in.eta.eta * in.a * signal_sum(in) / in.G;
  return std::max(q, 0.0);
}

double optimality_gap_bound(const BoundInputs& in) {
  const double q = contraction_factor(in);  // validates inputs
  const double sig = signal_sum(in);
  const double cth = std::cos(in.theta_th);
  const double eta = in.eta.eta;
  // (q)^{T-1} with the T = 1 convention 0^0 = 1.
  const double decay = (in.T == 1) ? 1.0 : std::pow(q, static_cast<double>(in.T - 1));
  const double transient = 0.5 * in.L * decay * in.w1_dist2;
  const double amp = std::max(in.a * eta * in.G / (2.0 * in.M * cth * sig),
                              in.a * in.a * eta * eta);
  return transient + 0.5 * in.L * amp * variance_proxy(in);
}

int TrajectoryView::horizon() const {
  // Row t-1 describes w^t; the last row is post-update, so prefixes T go up
  // to rows-1 (delta_f / gap at T needs row index T).
  const auto rows = static_cast<int>(loss.size());
  return rows - 1;
}

namespace {

struct SeriesMax {
  // Running max over rounds, shared helper for theta and device-grad series.
  static std::vector<double> running(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (std::isfinite(v[i])) m = std::max(m, v[i]);
      out[i] = m;
    }
    return out;
  }
};

void check_runs(const std::vector<SeedTrajectory>& runs) {
  if (runs.empty()) throw InvalidArgument("bound verification: no runs supplied");
  for (const auto& r : runs) {
    if (r.trace.horizon() < 1)
      throw InvalidArgument("bound verification: trace needs at least two rows");
    const std::size_t n = r.trace.loss.size();
    if (r.trace.grad_norm.size() != n || r.trace.min_grad_norm.size() != n ||
        r.trace.theta_max.size() != n || r.trace.device_grad_max.size() != n)
      throw InvalidArgument("bound verification: ragged trace columns");
  }
}

}  // namespace

BoundReport verify_grad_norm_bound(const std::vector<SeedTrajectory>& runs) {
  check_runs(runs);
  int horizon = runs[0].trace.horizon();
  for (const auto& r : runs) horizon = std::min(horizon, r.trace.horizon());

  std::vector<std::vector<double>> theta_run, dev_run;
  for (const auto& r : runs) {
    theta_run.push_back(SeriesMax::running(r.trace.theta_max));
    dev_run.push_back(SeriesMax::running(r.trace.device_grad_max));
  }

  BoundReport rep;
  rep.check = "grad_norm";
  rep.seeds = static_cast<int>(runs.size());
  for (int T = 1; T <= horizon; ++T) {
    std::vector<double> measured(runs.size()), bound(runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& tr = runs[i].trace;
      BoundInputs in = runs[i].inputs;
      in.T = T;
      in.delta_f = tr.loss[0] - tr.loss[static_cast<std::size_t>(T)];
      in.theta_th = std::max(in.theta_th, theta_run[i][static_cast<std::size_t>(T - 1)]);
      rep.theta_used = std::max(rep.theta_used, in.theta_th);
      rep.g_used = std::max(rep.g_used,
                            std::max(runs[i].inputs.G, dev_run[i][static_cast<std::size_t>(T - 1)]));
      measured[i] = tr.min_grad_norm[static_cast<std::size_t>(T - 1)];
      bound[i] = theta_void(in.theta_th) ? std::numeric_limits<double>::infinity()
                                         : grad_norm_bound(in);
      if (measured[i] > bound[i] * (1.0 + kRelSlack)) ++rep.per_seed_violations;
    }
    BoundCheckRow row;
    row.T = T;
    row.measured = mean_over_seeds(measured);
    row.bound = mean_over_seeds(bound);
    row.margin = row.bound - row.measured;
    if (row.measured > row.bound * (1.0 + kRelSlack)) ++rep.violations;
    rep.rows.push_back(row);
  }
  return rep;
}

BoundReport verify_gap_bound(const std::vector<SeedTrajectory>& runs) {
  check_runs(runs);
  int horizon = runs[0].trace.horizon();
  for (const auto& r : runs) {
    horizon = std::min(horizon, r.trace.horizon());
    if (!std::isfinite(r.trace.f_star))
      throw InvalidArgument("gap verification: f_star required for every run");
  }

  std::vector<std::vector<double>> theta_run, dev_run;
  for (const auto& r : runs) {
    theta_run.push_back(SeriesMax::running(r.trace.theta_max));
    dev_run.push_back(SeriesMax::running(r.trace.device_grad_max));
  }

  BoundReport rep;
  rep.check = "gap";
  rep.seeds = static_cast<int>(runs.size());
  double q_mean = 0.0;
  for (std::size_t i = 0; i < runs.size(); ++i)
    q_mean += contraction_factor(runs[i].inputs);
  q_mean /= static_cast<double>(runs.size());
  rep.reference_rate = (q_mean > 0.0) ? std::log(q_mean)
                                      : -std::numeric_limits<double>::infinity();

  for (int T = 1; T <= horizon + 1; ++T) {
    // Gap rows cover w^1 .. w^{T_final+1}: row index T-1.
    std::vector<double> measured(runs.size()), bound(runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& tr = runs[i].trace;
      BoundInputs in = runs[i].inputs;
      in.T = T;
      const auto upto = static_cast<std::size_t>(std::min<int>(T, horizon + 1) - 1);
      in.theta_th = std::max(in.theta_th, theta_run[i][upto]);
      in.G = std::max(in.G, dev_run[i][upto]);
      rep.theta_used = std::max(rep.theta_used, in.theta_th);
      rep.g_used = std::max(rep.g_used, in.G);
      // Recompute the gap from the loss column so a corrupted trace cannot
      // slip through via a stale gap column.
      measured[i] = tr.loss[static_cast<std::size_t>(T - 1)] - tr.f_star;
      bound[i] = theta_void(in.theta_th) ? std::numeric_limits<double>::infinity()
                                         : optimality_gap_bound(in);
      if (measured[i] > bound[i] * (1.0 + kRelSlack)) ++rep.per_seed_violations;
    }
    BoundCheckRow row;
    row.T = T;
    row.measured = mean_over_seeds(measured);
    row.bound = mean_over_seeds(bound);
    row.margin = row.bound - row.measured;
    if (row.measured > row.bound * (1.0 + kRelSlack)) ++rep.violations;
    rep.rows.push_back(row);
  }

  // Log-linear decay rate of the mean gap over its first decade, compared
  // against log(q_max).  Floor estimated from the trailing 10% of rounds.
  {
    const std::size_t n = rep.rows.size();
    const std::size_t tail = std::max<std::size_t>(1, n / 10);
    double floor_est = 0.0;
    for (std::size_t i = n - tail; i < n; ++i) floor_est += rep.rows[i].measured;
    floor_est /= static_cast<double>(tail);

    std::vector<double> ts, ys;
    const double d1 = rep.rows[0].measured - floor_est;
    for (const auto& row : rep.rows) {
      const double d = row.measured - floor_est;
      if (d <= 0.0 || d1 <= 0.0) break;
      if (d < 0.1 * d1) break;  // first decade only
      ts.push_back(static_cast<double>(row.T));
      ys.push_back(std::log(d));
    }
    if (ts.size() >= 5) {
      const double tm = mean_over_seeds(ts), ym = mean_over_seeds(ys);
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t i = 0; i < ts.size(); ++i) {
        sxx += (ts[i] - tm) * (ts[i] - tm);
        sxy += (ts[i] - tm) * (ys[i] - ym);
      }
      if (sxx > 0.0) rep.fitted_rate = sxy / sxx;
    }
  }
  return rep;
}

std::string BoundReport::to_json() const {
  nlohmann::json j;
  j["check"] = check;
  j["seeds"] = seeds;
  j["violations"] = violations;
  j["per_seed_violations"] = per_seed_violations;
  j["theta_used"] = theta_used;
  j["g_used"] = g_used;
  if (std::isfinite(fitted_rate)) j["fitted_rate"] = fitted_rate;
  if (std::isfinite(reference_rate)) j["reference_rate"] = reference_rate;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : this->rows)
    rows.push_back({{"T", r.T}, {"measured", r.measured}, {"bound", r.bound},
                    {"margin", r.margin}});
  j["rows"] = rows;
  return j.dump(2);
}

std::string BoundReport::to_csv() const {
  std::ostringstream out;
  out << "T,measured,bound,margin\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.T, r.measured, r.bound,
                  r.margin);
    out << buf;
  }
  return out.str();
}

}  // namespace otafl
