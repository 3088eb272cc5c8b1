#include <cmath>

#include <doctest.h>

#include "otafl/aggregation.hpp"
#include "otafl/errors.hpp"
#include "otafl/numerics.hpp"

using namespace otafl;

TEST_CASE("strategy names round-trip through the parser") {
  for (const char* name : {"normalized", "raw_conservative", "standardized", "ideal"}) {
    const AggregationStrategy s = parse_strategy(name, 1.0);
    CHECK(s.name() == name);
  }
  CHECK_THROWS_AS(parse_strategy("gradient", 1.0), InvalidArgument);
  CHECK_THROWS_AS(parse_strategy("", 1.0), InvalidArgument);
}

TEST_CASE("normalized encoding has unit norm and keeps direction") {
  const AggregationStrategy s = parse_strategy("normalized");
  RandomStream g(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec grad = gaussian_vector(g, 9, 4.0);
    const Vec x = encode(s, grad);
    CHECK(norm2(x) == doctest::Approx(1.0).epsilon(1e-12));
    // Collinear with the gradient: x'g == ||g||.
    CHECK(dot(x, grad) == doctest::Approx(norm2(grad)).epsilon(1e-12));
  }
  // Degenerate gradients encode to zero instead of blowing up.
  CHECK(encode(s, Vec{0.0, 0.0}) == Vec{0.0, 0.0});
  CHECK(encode(s, Vec{1e-15, -1e-15}) == Vec{0.0, 0.0});
}

TEST_CASE("raw_conservative scales by the gradient bound") {
  const AggregationStrategy s = parse_strategy("raw_conservative", 8.0);
  const Vec grad = {4.0, -4.0};
  const Vec x = encode(s, grad);
  CHECK(x[0] == doctest::Approx(0.5));
  CHECK(x[1] == doctest::Approx(-0.5));
  // Norm stays <= 1 whenever ||g|| <= G.
  CHECK(norm2(x) <= 1.0);

  const AggregationStrategy bad = parse_strategy("raw_conservative");
  CHECK_THROWS_AS(encode(bad, grad), InvalidArgument);
}

TEST_CASE("standardized encoding is an element-wise z-score") {
  const AggregationStrategy s = parse_strategy("standardized");
  const Vec grad = {1.0, 3.0};
  const Vec x = encode(s, grad);
  // Mean 2, population std 1.
  CHECK(x[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(1.0).epsilon(1e-12));

  // Every non-degenerate output has elementwise mean 0 and population std 1,
  // so its norm is sqrt(n): the scheme transmits a larger signal than the
  // unit-norm strategies under the same gains.
  RandomStream rs(404);
  const Vec g2 = gaussian_vector(rs, 40, 2.0);
  const Vec x2 = encode(s, g2);
  CHECK(mean_of(x2) == doctest::Approx(0.0).epsilon(1e-10));
  double var = 0.0;
  for (double v : x2) var += v * v;
  CHECK(std::sqrt(var / 40.0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(norm2(x2) == doctest::Approx(std::sqrt(40.0)).epsilon(1e-10));

  // Constant gradients have zero std and encode to zero.
  CHECK(encode(s, Vec{5.0, 5.0, 5.0}) == Vec{0.0, 0.0, 0.0});
}

TEST_CASE("ideal encoding is the identity") {
  const AggregationStrategy s = parse_strategy("ideal");
  const Vec grad = {3.0, -1.0, 0.5};
  CHECK(encode(s, grad) == grad);
}

TEST_CASE("encode rejects malformed gradients") {
  const AggregationStrategy s = parse_strategy("normalized");
  CHECK_THROWS_AS(encode(s, Vec{}), InvalidArgument);
  CHECK_THROWS_AS(encode(s, Vec{1.0, std::nan("")}), InvalidArgument);
}

TEST_CASE("server update subtracts the scaled aggregate and advances the round") {
  ModelState st;
  st.w = {1.0, 2.0};
  st.round = 5;
  server_update(st, Vec{0.5, -1.0}, 0.1);
  CHECK(st.w[0] == doctest::Approx(0.95));
  CHECK(st.w[1] == doctest::Approx(2.1));
  CHECK(st.round == 6);

  CHECK_THROWS_AS(server_update(st, Vec{1.0}, 0.1), InvalidArgument);
  CHECK_THROWS_AS(server_update(st, Vec{1.0, 1.0}, 0.0), InvalidArgument);
}
