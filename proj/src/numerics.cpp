#include "otafl/numerics.hpp"

#include <cmath>
#include <cstddef>

#include "otafl/errors.hpp"

namespace otafl {
namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

}  // namespace

RandomStream::RandomStream(std::uint64_t key) : key_(key) {
  std::uint64_t s = key;
  for (auto& w : state_) w = splitmix64(s);
}

RandomStream RandomStream::derive(StreamPurpose purpose, std::uint64_t device,
                                  std::uint64_t round) const {
  // Chain-mix the identifying tuple into a fresh key.  Uses the stream's key,
  // not its consumed state, so derivation order never matters.
  std::uint64_t s = key_;
  std::uint64_t k = splitmix64(s);
  s ^= static_cast<std::uint64_t>(purpose) * 0x9E3779B97F4A7C15ULL;
  k ^= splitmix64(s);
  s ^= device * 0xC2B2AE3D27D4EB4FULL;
  k ^= splitmix64(s);
  s ^= round * 0x165667B19E3779F9ULL;
  k ^= splitmix64(s);
  return RandomStream(k);
}

std::uint64_t RandomStream::next_u64() {
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double RandomStream::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform_open() { return 1.0 - uniform01(); }

double RandomStream::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_gauss_;
  }
  const double u = uniform_open();  // in (0,1], log is safe
  const double v = uniform01();
  const double radius = std::sqrt(-2.0 * std::log(u));
  const double angle = 2.0 * M_PI * v;
  spare_gauss_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Vec gaussian_vector(RandomStream& stream, std::size_t dim, double variance) {
  if (variance < 0.0 || !std::isfinite(variance))
    throw InvalidArgument("gaussian_vector: variance must be finite and >= 0");
  Vec out(dim, 0.0);
  if (variance == 0.0) return out;
  const double sd = std::sqrt(variance);
  for (auto& v : out) v = sd * stream.gaussian();
  return out;
}

double rayleigh_draw(RandomStream& stream, double mean) {
  if (!(mean > 0.0) || !std::isfinite(mean))
    throw InvalidArgument("rayleigh_draw: mean must be finite and > 0");
  const double sigma = mean / std::sqrt(M_PI / 2.0);
  return sigma * std::sqrt(-2.0 * std::log(stream.uniform_open()));
}

double dot(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw InvalidArgument("dot: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

double sum(const Vec& x) {
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc;
}

double mean_of(const Vec& x) {
  if (x.empty()) throw InvalidArgument("mean_of: empty vector");
  return sum(x) / static_cast<double>(x.size());
}

void axpy(double alpha, const Vec& x, Vec& y) {
  if (x.size() != y.size()) throw InvalidArgument("axpy: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(Vec& x, double alpha) {
  for (auto& v : x) v *= alpha;
}

Vec scaled(const Vec& x, double alpha) {
  Vec out = x;
  scale(out, alpha);
  return out;
}

Vec sub(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw InvalidArgument("sub: size mismatch");
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return out;
}

Vec add(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw InvalidArgument("add: size mismatch");
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return out;
}

bool all_finite(const Vec& x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace otafl
