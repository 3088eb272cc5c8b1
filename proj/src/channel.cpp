#include "otafl/channel.hpp"

#include <cmath>

#include <json.hpp>

#include "otafl/errors.hpp"

namespace otafl {

void ChannelRealization::validate() const {
  if (h.empty()) throw InvalidArgument("channel: needs at least one device");
  for (double g : h)
    if (!(g > 0.0) || !std::isfinite(g))
      throw InvalidArgument("channel: gains must be finite and > 0");
  if (sigma2 < 0.0 || !std::isfinite(sigma2))
    throw InvalidArgument("channel: sigma2 must be finite and >= 0");
  if (dim <= 0) throw InvalidArgument("channel: dim must be > 0");
}

std::string ChannelRealization::to_json() const {
  nlohmann::json j;
  j["h"] = h;
  j["sigma2"] = sigma2;
  j["dim"] = dim;
  j["seed"] = seed;
  return j.dump();
}

ChannelRealization ChannelRealization::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ChannelRealization chan;
  chan.h = j.at("h").get<Vec>();
  chan.sigma2 = j.at("sigma2").get<double>();
  chan.dim = j.at("dim").get<int>();
  chan.seed = j.at("seed").get<std::uint64_t>();
  chan.validate();
  return chan;
}

void TransmitConfig::validate(const ChannelRealization& chan) const {
  const std::size_t k = chan.h.size();
  if (b.size() != k || b_max.size() != k)
    throw InvalidArgument("transmit config: gain vectors must match device count");
  if (!(a > 0.0) || !std::isfinite(a))
    throw InvalidArgument("transmit config: a must be finite and > 0");
  double signal = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!(b_max[i] > 0.0)) throw InvalidArgument("transmit config: caps must be > 0");
    if (!(b[i] >= 0.0) || b[i] > b_max[i] * (1.0 + 1e-12))
      throw InvalidArgument("transmit config: b out of [0, b_max]");
    signal += chan.h[i] * b[i];
  }
  if (!(signal > 0.0))
    throw InvalidArgument("transmit config: sum_k h_k b_k must be > 0");
}

ChannelRealization draw_channels(RandomStream& stream, int devices, double mean_gain,
                                 double sigma2, int dim) {
  if (devices <= 0) throw InvalidArgument("draw_channels: devices must be > 0");
  ChannelRealization chan;
  chan.h.reserve(devices);
  for (int k = 0; k < devices; ++k) chan.h.push_back(rayleigh_draw(stream, mean_gain));
  chan.sigma2 = sigma2;
  chan.dim = dim;
  chan.seed = stream.key();
  chan.validate();
  return chan;
}

Vec ota_superpose(const std::vector<Vec>& signals, const TransmitConfig& cfg,
                  const ChannelRealization& chan, RandomStream& noise_stream) {
  chan.validate();
  if (signals.size() != chan.h.size())
    throw InvalidArgument("ota_superpose: one signal per device required");
  if (cfg.b.size() != chan.h.size())
    throw InvalidArgument("ota_superpose: transmit gains must match device count");
  const std::size_t dim = static_cast<std::size_t>(chan.dim);
  Vec y(dim, 0.0);
  for (std::size_t k = 0; k < signals.size(); ++k) {
    if (signals[k].size() != dim)
      throw InvalidArgument("ota_superpose: signal dimension mismatch");
    axpy(chan.h[k] * cfg.b[k], signals[k], y);
  }
  if (chan.sigma2 > 0.0) {
    const Vec z = gaussian_vector(noise_stream, dim, chan.sigma2);
    axpy(1.0, z, y);
  }
  scale(y, cfg.a);
  return y;
}

}  // namespace otafl
