#include "otafl/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "otafl/errors.hpp"

namespace otafl {
namespace {

void check_caps(const ChannelRealization& chan, const Vec& b_max) {
  chan.validate();
  if (b_max.size() != chan.h.size())
    throw InvalidArgument("gain caps must match device count");
  for (double c : b_max)
    if (!(c > 0.0) || !std::isfinite(c))
      throw InvalidArgument("gain caps must be finite and > 0");
}

double gap_value(const Vec& u, double c, double rate) {
  double q = 0.0, s = 0.0;
  for (double v : u) {
    q += v * v;
    s += v;
  }
  return std::sqrt(4.0 * q + c) - rate * s;
}

// Projected-gradient stationarity residual on the box [0, cap].
double box_residual(const Vec& u, const Vec& g, const Vec& cap) {
  double res = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    double viol;
    if (u[k] <= 0.0) viol = std::max(0.0, -g[k]);
    else if (u[k] >= cap[k]) viol = std::max(0.0, g[k]);
    else viol = std::abs(g[k]);
    res = std::max(res, viol);
  }
  return res;
}

struct PgdOutcome {
  Vec u;
  double value = 0.0;
  int iterations = 0;
  double stationarity = 0.0;
};

// Armijo projected descent on phi(u) = sqrt(4||u||^2 + c) - rate * sum(u).
PgdOutcome pgd_minimize(Vec u, const Vec& cap, double c, double rate,
                        const FeasibilityOptions& opts) {
  const double tol = opts.stationarity_tol * std::max(1.0, rate);
  PgdOutcome out;
  Vec g(u.size()), trial(u.size());
  double value = gap_value(u, c, rate);
  double residual = std::numeric_limits<double>::infinity();

  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    double q = 0.0;
    for (double v : u) q += v * v;
    const double rho = std::sqrt(4.0 * q + c);
    for (std::size_t k = 0; k < u.size(); ++k)
      g[k] = (rho > 0.0 ? 4.0 * u[k] / rho : 2.0) - rate;

    residual = box_residual(u, g, cap);
    if (residual <= tol) break;

    // Inverse-curvature step for the radial part, shrunk until sufficient
    // decrease; the step naturally diminishes as rho does.
    double step = (rho > 0.0 ? rho / 4.0 : 0.25 * *std::max_element(cap.begin(), cap.end()));
    bool moved = false;
    for (int back = 0; back < 70; ++back) {
      double pred = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) {
        trial[k] = std::clamp(u[k] - step * g[k], 0.0, cap[k]);
        pred += g[k] * (u[k] - trial[k]);
      }
      if (pred <= 0.0) break;  // projection blocked every coordinate
      const double trial_value = gap_value(trial, c, rate);
      if (trial_value <= value - 1e-4 * pred) {
        u = trial;
        value = trial_value;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;  // no productive step at this scale; residual reported below
  }

  // Recompute the residual at the final point.
  {
    double q = 0.0;
    for (double v : u) q += v * v;
    const double rho = std::sqrt(4.0 * q + c);
    for (std::size_t k = 0; k < u.size(); ++k)
      g[k] = (rho > 0.0 ? 4.0 * u[k] / rho : 2.0) - rate;
    residual = box_residual(u, g, cap);
  }

  out.u = std::move(u);
  out.value = value;
  out.iterations = it;
  out.stationarity = residual;
  return out;
}

// Closed-form minimiser of phi restricted to the clipped diagonal
// u_k = min(t, cap_k): certifies feasibility cheaply and provides a second
// start for the descent.
Vec diagonal_candidate(const Vec& cap, double c, double rate) {
  const auto K = static_cast<double>(cap.size());
  const double cap_min = *std::min_element(cap.begin(), cap.end());
  double t;
  const double denom = 16.0 - 4.0 * K * rate * rate;
  if (c == 0.0) {
    t = (rate > 2.0 / std::sqrt(K)) ? cap_min : 0.0;
  } else if (denom <= 0.0) {
    t = cap_min;
  } else {
    t = std::min(rate * std::sqrt(c / denom), cap_min);
  }
  Vec u(cap.size());
  for (std::size_t k = 0; k < cap.size(); ++k) u[k] = std::min(t, cap[k]);
  return u;
}

// Stationary point of phi on the box.  phi is convex and its gradient is
// separable given the radius rho, so every unclamped coordinate shares one
// value t with  t = rate * sqrt(4 sum_k min(cap_k, t)^2 + c) / 4; the root is
// found by bisection to machine precision.
Vec kkt_candidate(const Vec& cap, double c, double rate) {
  const auto K = static_cast<double>(cap.size());
  Vec u(cap.size(), 0.0);
  if (c == 0.0 && rate <= 2.0 / std::sqrt(K)) return u;  // minimum at the origin

  const auto rhs = [&](double t) {
    double q = 0.0;
    for (double ck : cap) {
      const double v = std::min(ck, t);
      q += v * v;
    }
    return rate * std::sqrt(4.0 * q + c) / 4.0;
  };
  const double cap_max = *std::max_element(cap.begin(), cap.end());
  double lo = c == 0.0 ? 1e-12 * *std::min_element(cap.begin(), cap.end()) : 0.0;
  double hi = std::max(cap_max, rhs(cap_max)) + 1.0;
  if (rhs(lo) <= lo) return u;  // no positive root; origin is stationary
  for (int i = 0; i < 200 && hi - lo > 1e-16 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    if (rhs(mid) > mid) lo = mid;
    else hi = mid;
  }
  const double t = 0.5 * (lo + hi);
  for (std::size_t k = 0; k < cap.size(); ++k) u[k] = std::min(cap[k], t);
  return u;
}

}  // namespace

double feasibility_gap(double rate, const ChannelRealization& chan, const Vec& b) {
  if (!(rate > 0.0) || !std::isfinite(rate))
    throw InvalidArgument("feasibility_gap: rate must be finite and > 0");
  chan.validate();
  if (b.size() != chan.h.size())
    throw InvalidArgument("feasibility_gap: gain/channel device mismatch");
  Vec u(b.size());
  for (std::size_t k = 0; k < b.size(); ++k) u[k] = chan.h[k] * b[k];
  return gap_value(u, static_cast<double>(chan.dim) * chan.sigma2, rate);
}

FeasibilityResult feasibility_value(double rate, const ChannelRealization& chan,
                                    const Vec& b_max, const FeasibilityOptions& opts) {
  if (!(rate > 0.0) || !std::isfinite(rate))
    throw InvalidArgument("feasibility_value: rate must be finite and > 0");
  check_caps(chan, b_max);
  const double c = static_cast<double>(chan.dim) * chan.sigma2;
  Vec cap(chan.h.size());
  for (std::size_t k = 0; k < cap.size(); ++k) cap[k] = chan.h[k] * b_max[k];

  // The KKT start is exact up to bisection error, so the descent usually
  // terminates immediately; the cap and diagonal starts guard against a
  // missed clamp pattern.
  PgdOutcome best = pgd_minimize(kkt_candidate(cap, c, rate), cap, c, rate, opts);
  int total_iters = best.iterations;
  const double tol = opts.stationarity_tol * std::max(1.0, rate);
  if (best.stationarity > tol) {
    for (const Vec& start : {cap, diagonal_candidate(cap, c, rate)}) {
      PgdOutcome alt = pgd_minimize(start, cap, c, rate, opts);
      total_iters += alt.iterations;
      const bool better_value = alt.value < best.value - 1e-12 * (1.0 + std::fabs(best.value));
      const bool same_value = std::fabs(alt.value - best.value) <=
                              1e-12 * (1.0 + std::fabs(best.value));
      if (better_value || (same_value && alt.stationarity < best.stationarity))
        best = std::move(alt);
    }
  }

  if (best.stationarity > tol && best.value > 0.0)
    throw SolverFailure("feasibility solve did not reach stationarity", best.stationarity);

  FeasibilityResult res;
  res.b.resize(cap.size());
  double signal = 0.0;
  for (std::size_t k = 0; k < cap.size(); ++k) {
    res.b[k] = std::clamp(best.u[k] / chan.h[k], 0.0, b_max[k]);
    signal += chan.h[k] * res.b[k];
  }
  res.iterations = total_iters;
  res.stationarity = best.stationarity;
  res.value = best.value;
  res.feasible = (best.value <= 0.0) && (signal > 0.0);
  if (!res.feasible && res.value <= 0.0) {
    // Zero-collapse with zero noise: gap 0 at b = 0 certifies nothing.
    res.value = std::numeric_limits<double>::min();
  }
  return res;
}

SolverArtifacts solve_Z(const ChannelRealization& chan, const Vec& b_max, double rate_tol,
                        const FeasibilityOptions& opts) {
  check_caps(chan, b_max);
  if (!(rate_tol > 0.0)) throw InvalidArgument("solve_Z: rate_tol must be > 0");
  const double c = static_cast<double>(chan.dim) * chan.sigma2;

  double cap_quad = 0.0, cap_sig = 0.0;
  for (std::size_t k = 0; k < chan.h.size(); ++k) {
    const double u = chan.h[k] * b_max[k];
    cap_quad += u * u;
    cap_sig += u;
  }
  // b = b_max attains its own ratio with zero gap, so this bracket is
  // feasible.  The ratio is inflated by a few ulps so the gap re-evaluated at
  // the caps rounds strictly negative instead of oscillating around zero (and,
  // with zero noise and equal channels, so the rate sits strictly above the
  // origin-collapse threshold 2/sqrt(K)).
  const double r_hi_start =
      std::sqrt(4.0 * cap_quad + c) / cap_sig * (1.0 + 64.0 * std::numeric_limits<double>::epsilon());

  FeasibilityResult at_hi = feasibility_value(r_hi_start, chan, b_max, opts);
  if (!at_hi.feasible)
    throw SolverFailure("bisection bracket unexpectedly infeasible", at_hi.value);

  SolverArtifacts art;
  double r_lo = 0.0, r_hi = r_hi_start;
  Vec best_b = at_hi.b;
  double best_stat = at_hi.stationarity;
  int inner = at_hi.iterations;
  int steps = 0;
  while (r_hi - r_lo > rate_tol) {
    if (++steps > 200)
      throw SolverFailure("bisection failed to shrink its bracket", r_hi - r_lo);
    const double mid = 0.5 * (r_lo + r_hi);
    FeasibilityResult res = feasibility_value(mid, chan, b_max, opts);
    inner += res.iterations;
    if (res.feasible) {
      r_hi = mid;
      best_b = res.b;
      best_stat = res.stationarity;
    } else {
      r_lo = mid;
    }
  }

  art.r_star = r_hi;
  art.b_star = best_b;
  art.bisection_iterations = steps;
  art.inner_iterations = inner;
  double quad = 0.0, sig = 0.0;
  for (std::size_t k = 0; k < chan.h.size(); ++k) {
    const double u = chan.h[k] * best_b[k];
    quad += u * u;
    sig += u;
  }
  if (!(sig > 0.0)) throw SolverFailure("solver returned a zero-signal design", 0.0);
  art.Z = (4.0 * quad + c) / (sig * sig);
  art.residuals.gap_at_opt = std::sqrt(4.0 * quad + c) - art.r_star * sig;
  art.residuals.stationarity = best_stat;
  return art;
}

double oracle_Z(const ChannelRealization& chan, const Vec& b_max, int grid_points) {
  check_caps(chan, b_max);
  const int K = chan.devices();
  if (K > 4) throw InvalidArgument("oracle_Z: dense grid limited to K <= 4 devices");
  if (grid_points < 2) throw InvalidArgument("oracle_Z: need at least 2 grid points");
  const double c = static_cast<double>(chan.dim) * chan.sigma2;

  std::vector<int> idx(K, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    double quad = 0.0, sig = 0.0;
    for (int k = 0; k < K; ++k) {
      const double b = b_max[k] * static_cast<double>(idx[k]) /
                       static_cast<double>(grid_points - 1);
      const double u = chan.h[k] * b;
      quad += u * u;
      sig += u;
    }
    if (sig > 0.0) best = std::min(best, (4.0 * quad + c) / (sig * sig));

    int pos = 0;
    while (pos < K && ++idx[pos] == grid_points) idx[pos++] = 0;
    if (pos == K) break;
  }
  return best;
}

double optimal_S(double Z, double L, double p, double delta_f) {
  if (!(Z > 0.0)) throw InvalidArgument("optimal_S: Z must be > 0");
  if (!(L > 0.0)) throw InvalidArgument("optimal_S: smoothness L must be > 0");
  if (!(p > 0.5) || !(p < 1.0)) throw InvalidArgument("optimal_S: requires 1/2 < p < 1");
  if (!(delta_f > 0.0)) throw InvalidArgument("optimal_S: delta_f must be > 0");
  return std::sqrt(L * (Z + 1.0) * p / ((2.0 * p - 1.0) * delta_f));
}

double AmplificationPlan::signal_sum(const ChannelRealization& chan) const {
  if (b.size() != chan.h.size()) throw InvalidArgument("plan/channel device mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) s += chan.h[k] * b[k];
  return s;
}

namespace {

nlohmann::json artifacts_json(const SolverArtifacts& art) {
  nlohmann::json j;
  j["r_star"] = art.r_star;
  j["Z"] = art.Z;
  j["b_star"] = art.b_star;
  j["iterations"] = {{"bisection", art.bisection_iterations},
                     {"inner", art.inner_iterations}};
  j["residuals"] = {{"gap_at_opt", art.residuals.gap_at_opt},
                    {"stationarity", art.residuals.stationarity}};
  if (art.S) j["S"] = *art.S;
  if (art.s) j["s"] = *art.s;
  if (art.q_max) j["q_max"] = *art.q_max;
  if (art.eps) j["eps"] = *art.eps;
  return j;
}

}  // namespace

std::string SolverArtifacts::to_json() const { return artifacts_json(*this).dump(2); }

SolverArtifacts SolverArtifacts::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  SolverArtifacts art;
  art.r_star = j.at("r_star").get<double>();
  art.Z = j.at("Z").get<double>();
  art.b_star = j.at("b_star").get<Vec>();
  art.bisection_iterations = j.at("iterations").at("bisection").get<int>();
  art.inner_iterations = j.at("iterations").at("inner").get<int>();
  art.residuals.gap_at_opt = j.at("residuals").at("gap_at_opt").get<double>();
  art.residuals.stationarity = j.at("residuals").at("stationarity").get<double>();
  if (j.contains("S")) art.S = j["S"].get<double>();
  if (j.contains("s")) art.s = j["s"].get<double>();
  if (j.contains("q_max")) art.q_max = j["q_max"].get<double>();
  if (j.contains("eps")) art.eps = j["eps"].get<double>();
  return art;
}

std::string AmplificationPlan::to_json() const {
  nlohmann::json j;
  j["a"] = a;
  j["b"] = b;
  j["b_max"] = b_max;
  if (eta.kind == EtaSchedule::Kind::kPowerLaw) j["eta"] = {{"kind", "power_law"}, {"p", eta.p}};
  else j["eta"] = {{"kind", "constant"}, {"eta", eta.eta}};
  j["artifacts"] = artifacts_json(artifacts);
  return j.dump(2);
}

AmplificationPlan plan_case1(const ChannelRealization& chan, const SolverArtifacts& art,
                             const Vec& b_max, double L, double p, double delta_f) {
  AmplificationPlan plan;
  plan.artifacts = art;
  plan.b = art.b_star;
  plan.b_max = b_max;
  plan.eta = EtaSchedule::power_law(p);
  const double S = optimal_S(art.Z, L, p, delta_f);
  plan.artifacts.S = S;
  const double sig = plan.signal_sum(chan);
  if (!(sig > 0.0)) throw SolverFailure("case-I plan has zero signal sum", 0.0);
  plan.a = 1.0 / (S * sig);
  return plan;
}

AmplificationPlan plan_case1(const ChannelRealization& chan, const Vec& b_max, double L,
                             double p, double delta_f, double rate_tol) {
  return plan_case1(chan, solve_Z(chan, b_max, rate_tol), b_max, L, p, delta_f);
}

double case2_qmax_zero_floor(const SolverArtifacts& art, const TaskConstants& constants) {
  if (!(constants.M > 0.0))
    throw InvalidArgument("bias floor: strong convexity (M > 0) required");
  if (!(constants.L > 0.0) || !(constants.G > 0.0))
    throw InvalidArgument("bias floor: L and G must be > 0");
  if (!(constants.theta_th >= 0.0) || !(constants.theta_th < M_PI / 2.0))
    throw InvalidArgument("bias floor: theta_th must lie in [0, pi/2)");
  const double cs = std::cos(constants.theta_th);
  return (art.Z + 1.0) * constants.L * constants.G * constants.G /
         (8.0 * constants.M * constants.M * cs * cs);
}

double case2_qmax_zero_floor(const ChannelRealization& chan, const Vec& b_max,
                             const TaskConstants& constants, double rate_tol) {
  return case2_qmax_zero_floor(solve_Z(chan, b_max, rate_tol), constants);
}

AmplificationPlan plan_case2(const ChannelRealization& chan, const SolverArtifacts& art,
                             const Vec& b_max, const TaskConstants& constants, double eta,
                             Case2Target target) {
  if (!(eta > 0.0)) throw InvalidArgument("case-II plan: eta must be > 0");
  if (target.eps.has_value() == target.s.has_value())
    throw InvalidArgument("case-II plan: specify exactly one of eps or s");
  const double floor = case2_qmax_zero_floor(art, constants);

  double s, eps;
  if (target.eps) {
    eps = *target.eps;
    if (!(eps > 0.0)) throw InvalidArgument("case-II plan: eps must be > 0");
    s = 1.0 - eps / floor;
    if (!(s > 0.0))
      throw InvalidArgument(
          "case-II plan: eps target unreachable; the zero-contraction bias floor is " +
          std::to_string(floor) + ", request eps strictly below it");
  } else {
    s = *target.s;
    if (!(s > 0.0) || !(s < 1.0))
      throw InvalidArgument("case-II plan: s must lie strictly in (0, 1)");
    eps = floor * (1.0 - s);
  }

  AmplificationPlan plan;
  plan.artifacts = art;
  plan.artifacts.s = s;
  plan.artifacts.q_max = s;  // q^max = 1 - (1 - s) by construction
  plan.artifacts.eps = eps;
  plan.b = art.b_star;
  plan.b_max = b_max;
  plan.eta = EtaSchedule::constant(eta);
  const double sig = plan.signal_sum(chan);
  if (!(sig > 0.0)) throw SolverFailure("case-II plan has zero signal sum", 0.0);
  const double cs = std::cos(constants.theta_th);
  plan.a = constants.G * (1.0 - s) / (2.0 * constants.M * cs * eta * sig);
  return plan;
}

AmplificationPlan plan_case2(const ChannelRealization& chan, const Vec& b_max,
                             const TaskConstants& constants, double eta, Case2Target target,
                             double rate_tol) {
  return plan_case2(chan, solve_Z(chan, b_max, rate_tol), b_max, constants, eta, target);
}

}  // namespace otafl
