#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace otafl {

using Vec = std::vector<double>;

// Stable stream labels so every consumer of randomness gets its own substream.
// Values are part of the reproducibility contract: changing them changes all draws.
enum class StreamPurpose : std::uint64_t {
  kChannel = 1,    // fading gains
  kNoise = 2,      // receiver noise, per round
  kFeatures = 3,   // synthetic feature draws
  kTargets = 4,    // synthetic target/label noise
  kInit = 5,       // model initialisation
  kPartition = 6,  // dataset shuffling / device assignment
  kCalibrate = 7,  // constant-estimation sampling
  kGeneric = 8,
};

// Deterministic, hierarchically derivable random stream (xoshiro256++ core,
// splitmix64 key mixing).  Two streams derived with the same (key, purpose,
// device, round) are identical; any difference in the tuple decorrelates them.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key);

  // Child stream identified by (purpose, device, round); independent of how
  // much the parent has already been consumed.
  RandomStream derive(StreamPurpose purpose, std::uint64_t device = 0,
                      std::uint64_t round = 0) const;

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64();
  double uniform01();         // [0, 1)
  double uniform_open();      // (0, 1]
  double gaussian();          // N(0, 1)

 private:
  std::uint64_t key_ = 0;
  std::array<std::uint64_t, 4> state_{};
  double spare_gauss_ = 0.0;
  bool has_spare_ = false;
};

// dim i.i.d. N(0, variance) entries. variance == 0 returns zeros without
// consuming the stream; variance < 0 is an error.
Vec gaussian_vector(RandomStream& stream, std::size_t dim, double variance);

// Rayleigh sample parameterised by its MEAN (not the usual scale sigma);
// mean = sigma * sqrt(pi/2).  mean must be > 0.
double rayleigh_draw(RandomStream& stream, double mean);

// Dense vector helpers.
double dot(const Vec& x, const Vec& y);
double norm2(const Vec& x);
double sum(const Vec& x);
double mean_of(const Vec& x);
void axpy(double alpha, const Vec& x, Vec& y);  // y += alpha * x
void scale(Vec& x, double alpha);
Vec scaled(const Vec& x, double alpha);
Vec sub(const Vec& x, const Vec& y);
Vec add(const Vec& x, const Vec& y);
bool all_finite(const Vec& x);

}  // namespace otafl
