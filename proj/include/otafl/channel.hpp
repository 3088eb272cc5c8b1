#pragma once

#include <cstdint>
#include <string>

#include "otafl/numerics.hpp"

namespace otafl {

// One multiple-access channel realisation: per-device real fading gains,
// receiver noise variance, and the model dimension the noise acts on.
// Gains are held fixed across rounds unless the caller redraws explicitly.
struct ChannelRealization {
  Vec h;                 // per-device gain, all > 0
  double sigma2 = 0.0;   // receiver noise variance per coordinate
  int dim = 0;           // signal dimension (model size)
  std::uint64_t seed = 0;  // stream key the gains were drawn from

  int devices() const { return static_cast<int>(h.size()); }
  void validate() const;

  std::string to_json() const;
  static ChannelRealization from_json(const std::string& text);
};

// Transmit-side scaling chosen by the optimizer: receiver amplification a and
// per-device gains b (bounded by caps).
struct TransmitConfig {
  double a = 0.0;  // receiver-side scale, > 0
  Vec b;           // per-device transmit gain, 0 <= b_k <= b_max_k
  Vec b_max;       // per-device cap, > 0

  void validate(const ChannelRealization& chan) const;
};

// K gains drawn i.i.d. Rayleigh with the given mean, using the stream as-is.
ChannelRealization draw_channels(RandomStream& stream, int devices, double mean_gain,
                                 double sigma2, int dim);

// Receiver output for one simultaneous transmission:
//   y = a * (sum_k h_k b_k x_k + z),  z ~ N(0, sigma2 I_dim)
// signals[k] must have length chan.dim.  sigma2 == 0 skips the noise draw.
Vec ota_superpose(const std::vector<Vec>& signals, const TransmitConfig& cfg,
                  const ChannelRealization& chan, RandomStream& noise_stream);

}  // namespace otafl
