#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"

#include "hybridpipe/half.hpp"

using namespace hybridpipe;

namespace {

// All finite binary16 values in ascending order, decoded independently.
std::vector<double> all_finite_halves() {
  std::vector<double> v;
  for (int e = 0; e < 31; ++e) {
    for (int m = 0; m < 1024; ++m) {
      v.push_back(e == 0 ? std::ldexp(m, -24) : std::ldexp(1024 + m, e - 25));
    }
  }
  return v;
}

double nearest_by_search(double x) {
  static const auto grid = all_finite_halves();
  const double a = std::abs(x);
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double d = std::abs(grid[i] - a), bd = std::abs(grid[best] - a);
    // Index parity is mantissa parity, so ties go to the even index.
    if (d < bd || (d == bd && i % 2 == 0)) best = i;
  }
  return std::copysign(grid[best], x);
}

}  // namespace

TEST_CASE("half rounding examples") {
  CHECK(round_to_half(1.0) == 1.0);
  CHECK(round_to_half(0.1) == 0.0999755859375);
  CHECK(round_to_half(70000.0) == 65504.0);
  CHECK(round_to_half(-70000.0) == -65504.0);
  CHECK(round_to_half(std::numeric_limits<double>::infinity()) == kHalfMax);
  CHECK(std::isnan(round_to_half(std::nan(""))));
  CHECK(round_to_half(kHalfMinSubnormal) == kHalfMinSubnormal);
  CHECK(round_to_half(kHalfMinSubnormal / 2) == 0.0);
  CHECK(round_to_half(kHalfMinSubnormal * 0.75) == kHalfMinSubnormal);
}

TEST_CASE("half rounding agrees with nearest-neighbour search") {
  const double probes[] = {0.1, 0.2, 0.3, 1.0 / 3.0, 3.14159, 1000.1, 2049.0, 2051.0, 65519.0, 1e-5, 3e-7,
                           6.1e-5, 12345.678, -7.77, 0.5004882812500001};
  for (double x : probes) CHECK(round_to_half(x) == nearest_by_search(x));
}

TEST_CASE("half round trip is exact for every finite half") {
  for (double h : all_finite_halves()) {
    REQUIRE(round_to_half(h) == h);
    REQUIRE(to_double(to_half(h)) == h);
    REQUIRE(to_double(to_half(-h)) == -h);
  }
}

TEST_CASE("ties round to even") {
  // 2049 lies halfway between 2048 and 2050.
  CHECK(round_to_half(2049.0) == 2048.0);
  CHECK(round_to_half(2051.0) == 2052.0);
}

TEST_CASE("quantize and dequantize vectors") {
  const std::vector<double> v = {1.0, 0.1, 70000.0, -2.5};
  const auto q = quantize_half(v);
  const auto d = dequantize(q);
  CHECK(d == std::vector<double>{1.0, 0.0999755859375, 65504.0, -2.5});
  CHECK(to_half(1.0).bits == 0x3c00);
  CHECK(element_bytes(Precision::Mixed) == 2);
  CHECK(element_bytes(Precision::Double) == 8);
  CHECK(apply_precision(Precision::Double, 0.1) == 0.1);
}
