#include "otafl/aggregation.hpp"

#include <cmath>

#include "otafl/errors.hpp"

namespace otafl {

namespace {
constexpr double kDegenerateTol = 1e-12;
}

std::string AggregationStrategy::name() const {
  switch (kind) {
    case StrategyKind::kNormalized: return "normalized";
    case StrategyKind::kRawConservative: return "raw_conservative";
    case StrategyKind::kStandardized: return "standardized";
    case StrategyKind::kIdealNoiseless: return "ideal";
  }
  return "unknown";
}

AggregationStrategy parse_strategy(const std::string& name, double gradient_bound) {
  AggregationStrategy s;
  s.gradient_bound = gradient_bound;
  if (name == "normalized") s.kind = StrategyKind::kNormalized;
  else if (name == "raw_conservative") s.kind = StrategyKind::kRawConservative;
  else if (name == "standardized") s.kind = StrategyKind::kStandardized;
  else if (name == "ideal") s.kind = StrategyKind::kIdealNoiseless;
  else throw InvalidArgument("unknown strategy '" + name + "'");
  return s;
}

Vec encode(const AggregationStrategy& strategy, const Vec& gradient) {
  if (!all_finite(gradient)) throw InvalidArgument("encode: gradient has non-finite entries");
  if (gradient.empty()) throw InvalidArgument("encode: empty gradient");

  switch (strategy.kind) {
    case StrategyKind::kNormalized: {
      const double n = norm2(gradient);
      if (n < kDegenerateTol) return Vec(gradient.size(), 0.0);
      return scaled(gradient, 1.0 / n);
    }
    case StrategyKind::kRawConservative: {
      if (!(strategy.gradient_bound > 0.0))
        throw InvalidArgument("encode: raw_conservative needs gradient_bound > 0");
      return scaled(gradient, 1.0 / strategy.gradient_bound);
    }
    case StrategyKind::kStandardized: {
      // Element-wise z-score with the population standard deviation; the
      // transmitted vector has mean 0 and std 1, so its norm is sqrt(n) and
      // the scheme rides the same gain schedule with a larger signal.
      const double m = mean_of(gradient);
      double var = 0.0;
      for (double v : gradient) var += (v - m) * (v - m);
      var /= static_cast<double>(gradient.size());
      const double sd = std::sqrt(var);
      if (sd < kDegenerateTol) return Vec(gradient.size(), 0.0);
      Vec out(gradient.size());
      for (std::size_t i = 0; i < gradient.size(); ++i) out[i] = (gradient[i] - m) / sd;
      return out;
    }
    case StrategyKind::kIdealNoiseless:
      return gradient;
  }
  throw InvalidArgument("encode: unhandled strategy");
}

void server_update(ModelState& state, const Vec& y, double eta) {
  if (state.w.size() != y.size()) throw InvalidArgument("server_update: dimension mismatch");
  if (!(eta > 0.0) || !std::isfinite(eta))
    throw InvalidArgument("server_update: eta must be finite and > 0");
  axpy(-eta, y, state.w);
  state.round += 1;
}

}  // namespace otafl
