#pragma once

#include <string>

#include "otafl/numerics.hpp"

namespace otafl {

// What each device sends for a local gradient g:
//   kNormalized      g / ||g||           (unit norm; the proposed scheme)
//   kRawConservative g / G               (norm <= 1 via the gradient bound G)
//   kStandardized    (g - mean) / std    (element-wise; population std; no
//                                         server-side inverse transform)
//   kIdealNoiseless  g                   (bypasses the channel entirely)
enum class StrategyKind { kNormalized, kRawConservative, kStandardized, kIdealNoiseless };

struct AggregationStrategy {
  StrategyKind kind = StrategyKind::kNormalized;
  double gradient_bound = 0.0;  // G, required > 0 for kRawConservative

  std::string name() const;
};

AggregationStrategy parse_strategy(const std::string& name, double gradient_bound = 0.0);

// Device-side encoding of a local gradient. Degenerate inputs (norm or std
// below 1e-12) encode to the zero vector; non-finite gradients are an error.
Vec encode(const AggregationStrategy& strategy, const Vec& gradient);

struct ModelState {
  Vec w;
  int round = 1;  // rounds are 1-indexed
};

// w <- w - eta * y, round <- round + 1.
void server_update(ModelState& state, const Vec& y, double eta);

}  // namespace otafl
