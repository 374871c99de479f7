#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace hybridpipe {

/// IEEE binary16 storage (1 sign, 5 exponent, 10 mantissa bits).
struct Half {
  std::uint16_t bits = 0;

  friend bool operator==(Half, Half) = default;
};

inline constexpr double kHalfMax = 65504.0;
inline constexpr double kHalfMinNormal = 6.103515625e-05;       // 2^-14
inline constexpr double kHalfMinSubnormal = 5.9604644775390625e-08;  // 2^-24

/// Rounds to the nearest binary16 value (ties to even) and returns it in
/// working precision. Magnitudes past the largest finite half saturate to
/// +-65504, including infinities. NaN propagates.
double round_to_half(double x);

Half to_half(double x);
double to_double(Half h);

std::vector<Half> quantize_half(std::span<const double> values);
std::vector<double> dequantize(std::span<const Half> values);

/// Working precision of the numeric engine. Mixed keeps reduced-precision
/// copies of parameters, activations and gradients by quantizing after each
/// layer op; Double leaves every value untouched.
enum class Precision { Double, Mixed };

inline double apply_precision(Precision p, double x) {
  return p == Precision::Mixed ? round_to_half(x) : x;
}

void apply_precision(Precision p, std::span<double> values);

/// Bytes per element of the reduced-precision working copies.
inline constexpr std::int64_t element_bytes(Precision p) {
  return p == Precision::Mixed ? 2 : 8;
}

}  // namespace hybridpipe
