#pragma once

#include <optional>
#include <string>

#include "otafl/channel.hpp"
#include "otafl/numerics.hpp"
#include "otafl/schedule.hpp"
#include "otafl/tasks.hpp"

namespace otafl {

// The transmit-gain design minimises the variance-to-signal ratio
//   Z(b) = (4 sum_k h_k^2 b_k^2 + dim * sigma2) / (sum_k h_k b_k)^2
// over the box 0 <= b <= b_max.  Z is found by bisecting on the ratio r and
// testing feasibility of  sqrt(4 sum h^2 b^2 + dim sigma2) <= r sum h b.

struct FeasibilityOptions {
  int max_iterations = 60000;
  double stationarity_tol = 1e-9;  // projected-gradient residual target
};

struct FeasibilityResult {
  double value = 0.0;        // minimum of the gap phi(b) = sqrt(...) - r * sum h b
  Vec b;                     // minimiser, always inside [0, b_max]
  bool feasible = false;     // value <= 0 AND sum h b > 0
  int iterations = 0;
  double stationarity = 0.0;
};

// Minimises the convex gap phi over the box by projected first-order descent
// (diagonally rescaled variables u = h .* b; Armijo backtracking).  A zero
// minimiser with zero gap is NOT a feasibility certificate: the signal-sum
// constraint fails, and `value` is reported as the smallest positive double so
// the sign convention "feasible iff value <= 0" stays intact.
FeasibilityResult feasibility_value(double rate, const ChannelRealization& chan,
                                    const Vec& b_max, const FeasibilityOptions& opts = {});

// Point evaluation of the same gap,
//   phi(b) = sqrt(4 sum_k (h_k b_k)^2 + dim * sigma2) - rate * sum_k h_k b_k,
// used by the solver's chord (convexity) self-checks.
double feasibility_gap(double rate, const ChannelRealization& chan, const Vec& b);

struct SolverResiduals {
  double gap_at_opt = 0.0;     // phi(b_star) at r_star
  double stationarity = 0.0;   // inner-solver residual at the accepted point
};

// Everything needed to audit or replay one gain-design solve.
struct SolverArtifacts {
  double r_star = 0.0;
  double Z = 0.0;
  Vec b_star;
  int bisection_iterations = 0;
  int inner_iterations = 0;
  SolverResiduals residuals;

  // Filled in by the planners.
  std::optional<double> S;      // case-I signal scale
  std::optional<double> s;      // case-II contraction target
  std::optional<double> q_max;  // case-II worst-case contraction factor
  std::optional<double> eps;    // case-II bias target

  std::string to_json() const;
  static SolverArtifacts from_json(const std::string& text);
};

// Bisection on r over [0, ratio at b_max]; the upper bracket is always
// feasible because b = b_max attains its own ratio exactly.
SolverArtifacts solve_Z(const ChannelRealization& chan, const Vec& b_max, double rate_tol,
                        const FeasibilityOptions& opts = {});

// Independent dense-grid minimiser of the same objective, for cross-checking.
// Cost grows as grid_points^K, so K <= 4 only.
double oracle_Z(const ChannelRealization& chan, const Vec& b_max, int grid_points);

// Case-I scale minimising C1(S) + C2(S) = S * delta_f-term + (Z+1)/S-term:
// S* = sqrt(L (Z+1) p / ((2p-1) delta_f)).
double optimal_S(double Z, double L, double p, double delta_f);

// A fully resolved transmit design: receiver scale, per-device gains, learning
// rate schedule, plus the solver artifacts they came from.
struct AmplificationPlan {
  double a = 0.0;
  Vec b;
  Vec b_max;
  EtaSchedule eta;
  SolverArtifacts artifacts;

  double signal_sum(const ChannelRealization& chan) const;  // sum_k h_k b_k
  std::string to_json() const;
};

// Case I (smooth objective, eta_t = 1/t^p): a = 1/(S* sum h b*).
AmplificationPlan plan_case1(const ChannelRealization& chan, const Vec& b_max, double L,
                             double p, double delta_f, double rate_tol = 1e-9);
AmplificationPlan plan_case1(const ChannelRealization& chan, const SolverArtifacts& art,
                             const Vec& b_max, double L, double p, double delta_f);

// Case II (strongly convex, constant eta): target either the contraction
// factor s in (0,1) or the bias level eps; the two are linearly equivalent,
//   eps(s) = (Z+1) L G^2 (1-s) / (8 M^2 cos^2 theta_th).
struct Case2Target {
  std::optional<double> eps;
  std::optional<double> s;
};
AmplificationPlan plan_case2(const ChannelRealization& chan, const Vec& b_max,
                             const TaskConstants& constants, double eta, Case2Target target,
                             double rate_tol = 1e-9);
AmplificationPlan plan_case2(const ChannelRealization& chan, const SolverArtifacts& art,
                             const Vec& b_max, const TaskConstants& constants, double eta,
                             Case2Target target);

// Smallest bias level expressible by the case-II family (reached as s -> 0).
double case2_qmax_zero_floor(const ChannelRealization& chan, const Vec& b_max,
                             const TaskConstants& constants, double rate_tol = 1e-9);
double case2_qmax_zero_floor(const SolverArtifacts& art, const TaskConstants& constants);

}  // namespace otafl
