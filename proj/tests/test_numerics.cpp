#include <cmath>
#include <cstdint>

#include <doctest.h>

#include "otafl/errors.hpp"
#include "otafl/numerics.hpp"

using namespace otafl;

TEST_CASE("derived streams are reproducible and decorrelated") {
  const RandomStream root(42);

  RandomStream a = root.derive(StreamPurpose::kNoise, 3, 17);
  RandomStream b = root.derive(StreamPurpose::kNoise, 3, 17);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());

  // Any change in the (purpose, device, round) tuple gives a different stream.
  RandomStream c = root.derive(StreamPurpose::kNoise, 3, 18);
  RandomStream d = root.derive(StreamPurpose::kNoise, 4, 17);
  RandomStream e = root.derive(StreamPurpose::kChannel, 3, 17);
  RandomStream f = root.derive(StreamPurpose::kNoise, 3, 17);
  int same_c = 0, same_d = 0, same_e = 0;
  for (int i = 0; i < 64; ++i) {
    const std::uint64_t ref = f.next_u64();
    same_c += c.next_u64() == ref;
    same_d += d.next_u64() == ref;
    same_e += e.next_u64() == ref;
  }
  CHECK(same_c == 0);
  CHECK(same_d == 0);
  CHECK(same_e == 0);
}

TEST_CASE("derivation does not depend on parent consumption") {
  const RandomStream root(9001);
  RandomStream before = root.derive(StreamPurpose::kInit, 0, 0);

  RandomStream scratch(9001);
  for (int i = 0; i < 1000; ++i) scratch.next_u64();
  RandomStream after = RandomStream(scratch.key()).derive(StreamPurpose::kInit, 0, 0);
  for (int i = 0; i < 16; ++i) CHECK(before.next_u64() == after.next_u64());
}

TEST_CASE("uniform draws respect their half-open ranges") {
  RandomStream s(7);
  double lo01 = 1.0, hi01 = 0.0, lo_open = 1.0, hi_open = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = s.uniform01();
    const double v = s.uniform_open();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
    lo01 = std::min(lo01, u);
    hi01 = std::max(hi01, u);
    lo_open = std::min(lo_open, v);
    hi_open = std::max(hi_open, v);
  }
  // The draws cover the interval rather than clustering.
  CHECK(lo01 < 0.01);
  CHECK(hi01 > 0.99);
  CHECK(lo_open < 0.01);
  CHECK(hi_open > 0.99);
}

TEST_CASE("gaussian_vector matches its requested moments") {
  RandomStream s(7);
  const std::size_t n = 100000;
  const Vec x = gaussian_vector(s, n, 1.0);
  REQUIRE(x.size() == n);
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  var /= static_cast<double>(n - 1);
  CHECK(std::fabs(m) < 0.02);
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));

  RandomStream t(7);
  const Vec y = gaussian_vector(t, 1000, 4.0);
  double vy = 0.0;
  for (double v : y) vy += v * v;
  vy /= 1000.0;
  CHECK(vy == doctest::Approx(4.0).epsilon(0.2));
}

TEST_CASE("zero-variance gaussian vector consumes nothing") {
  RandomStream s(123);
  const Vec z = gaussian_vector(s, 8, 0.0);
  for (double v : z) CHECK(v == 0.0);
  RandomStream fresh(123);
  CHECK(s.next_u64() == fresh.next_u64());

  RandomStream t(123);
  CHECK_THROWS_AS(gaussian_vector(t, 4, -1.0), InvalidArgument);
}

TEST_CASE("rayleigh draws are parameterised by their mean") {
  RandomStream s(11);
  const int n = 1000000;
  double m = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = rayleigh_draw(s, 1e-5);
    CHECK(v > 0.0);
    m += v;
  }
  m /= n;
  CHECK(m == doctest::Approx(1e-5).epsilon(0.01));

  RandomStream t(11);
  CHECK_THROWS_AS(rayleigh_draw(t, 0.0), InvalidArgument);
  CHECK_THROWS_AS(rayleigh_draw(t, -2.0), InvalidArgument);
}

TEST_CASE("two derived gaussian streams are uncorrelated") {
  const RandomStream root(5);
  RandomStream a = root.derive(StreamPurpose::kNoise, 0, 1);
  RandomStream b = root.derive(StreamPurpose::kNoise, 0, 2);
  const int n = 20000;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = a.gaussian();
    const double y = b.gaussian();
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  const double corr = sab / std::sqrt(saa * sbb);
  CHECK(std::fabs(corr) < 0.03);
}

TEST_CASE("vector helpers") {
  const Vec x = {1.0, 2.0, 3.0};
  const Vec y = {4.0, -5.0, 6.0};
  CHECK(dot(x, y) == doctest::Approx(12.0));
  CHECK(norm2(x) == doctest::Approx(std::sqrt(14.0)));
  CHECK(sum(y) == doctest::Approx(5.0));
  CHECK(mean_of(x) == doctest::Approx(2.0));

  Vec z = y;
  axpy(2.0, x, z);
  CHECK(z[0] == doctest::Approx(6.0));
  CHECK(z[1] == doctest::Approx(-1.0));
  CHECK(z[2] == doctest::Approx(12.0));

  Vec w = scaled(x, -1.0);
  CHECK(w[2] == doctest::Approx(-3.0));
  scale(w, -2.0);
  CHECK(w[2] == doctest::Approx(6.0));

  CHECK(sub(x, x) == Vec{0.0, 0.0, 0.0});
  CHECK(add(x, sub(y, y)) == x);

  CHECK(all_finite(x));
  CHECK_FALSE(all_finite({1.0, std::nan(""), 2.0}));
  CHECK_FALSE(all_finite({1.0, std::numeric_limits<double>::infinity()}));

  CHECK_THROWS_AS(dot(x, {1.0}), InvalidArgument);
  CHECK_THROWS_AS(mean_of({}), InvalidArgument);
}
