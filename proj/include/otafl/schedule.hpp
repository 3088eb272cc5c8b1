#pragma once

#include <cmath>

#include "otafl/errors.hpp"

namespace otafl {

// Learning-rate schedule over 1-indexed rounds: either eta_t = 1/t^p with
// 1/2 < p < 1, or a constant eta.
struct EtaSchedule {
  enum class Kind { kPowerLaw, kConstant };

  Kind kind = Kind::kPowerLaw;
  double p = 0.75;    // power-law exponent
  double eta = 0.01;  // constant value

  static EtaSchedule power_law(double p) {
    if (!(p > 0.5) || !(p < 1.0))
      throw InvalidArgument("eta schedule: power-law exponent requires 1/2 < p < 1");
    EtaSchedule s;
    s.kind = Kind::kPowerLaw;
    s.p = p;
    return s;
  }

  static EtaSchedule constant(double eta) {
    if (!(eta > 0.0)) throw InvalidArgument("eta schedule: constant eta must be > 0");
    EtaSchedule s;
    s.kind = Kind::kConstant;
    s.eta = eta;
    return s;
  }

  double at(int round) const {
    if (round < 1) throw InvalidArgument("eta schedule: rounds are 1-indexed");
    if (kind == Kind::kConstant) return eta;
    return 1.0 / std::pow(static_cast<double>(round), p);
  }
};

}  // namespace otafl
