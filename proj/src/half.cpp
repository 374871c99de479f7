#include "hybridpipe/half.hpp"

#include <cmath>
#include <limits>

namespace hybridpipe {

double round_to_half(double x) {
  if (std::isnan(x)) return x;
  const double mag = std::fabs(x);
  // 65520 is the midpoint between 65504 and 2^16; ties-to-even would pick
  // 2^16, i.e. infinity.
  if (mag >= 65520.0) return std::copysign(kHalfMax, x);
  double quantum;
  if (mag < kHalfMinNormal) {
    quantum = kHalfMinSubnormal;
  } else {
    int exp2 = 0;
    std::frexp(mag, &exp2);  // mag = m * 2^exp2, m in [0.5, 1)
    quantum = std::ldexp(1.0, exp2 - 1 - 10);
  }
  // Division by a power of two is exact; nearbyint honours the default
  // round-to-nearest-even mode.
  return std::nearbyint(x / quantum) * quantum;
}

Half to_half(double x) {
  if (std::isnan(x)) return Half{0x7E00};
  const double q = round_to_half(x);
  const std::uint16_t sign = std::signbit(q) ? 0x8000 : 0;
  const double mag = std::fabs(q);
  if (mag == 0.0) return Half{sign};
  if (mag < kHalfMinNormal) {
    return Half{static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(mag / kHalfMinSubnormal))};
  }
  int exp2 = 0;
  const double m = std::frexp(mag, &exp2);
  const int unbiased = exp2 - 1;
  const auto mantissa = static_cast<std::uint16_t>((m * 2.0 - 1.0) * 1024.0);
  const auto exponent = static_cast<std::uint16_t>(unbiased + 15);
  return Half{static_cast<std::uint16_t>(sign | (exponent << 10) | mantissa)};
}

double to_double(Half h) {
  const bool negative = (h.bits & 0x8000) != 0;
  const int exponent = (h.bits >> 10) & 0x1F;
  const int mantissa = h.bits & 0x3FF;
  double mag;
  if (exponent == 0) {
    mag = mantissa * kHalfMinSubnormal;
  } else if (exponent == 0x1F) {
    mag = mantissa == 0 ? std::numeric_limits<double>::infinity()
                        : std::numeric_limits<double>::quiet_NaN();
  } else {
    mag = std::ldexp(1.0 + mantissa / 1024.0, exponent - 15);
  }
  return negative ? -mag : mag;
}

std::vector<Half> quantize_half(std::span<const double> values) {
  std::vector<Half> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(to_half(v));
  return out;
}

std::vector<double> dequantize(std::span<const Half> values) {
  std::vector<double> out;
  out.reserve(values.size());
  for (Half h : values) out.push_back(to_double(h));
  return out;
}

void apply_precision(Precision p, std::span<double> values) {
  if (p != Precision::Mixed) return;
  for (double& v : values) v = round_to_half(v);
}

}  // namespace hybridpipe
