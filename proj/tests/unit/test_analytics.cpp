#include <boost/multiprecision/cpp_dec_float.hpp>
#include <random>

#include "doctest.h"

#include "hybridpipe/analytics.hpp"

using namespace hybridpipe;
using Big = boost::multiprecision::cpp_dec_float_50;

TEST_CASE("activation units") {
  for (int g : {1, 2, 4}) CHECK(activation_units(16, g, 4) == 9.0);
  CHECK(activation_units(10, 1, 1) == 12.0);
  CHECK(activation_units(48, 6, 8) == 15.0);
  CHECK(activation_units(48, 1, 6) == 15.0);
  CHECK(activation_units(48, 1, 8) == 15.0);
  CHECK(activation_units(48, 2, 4) == 17.0);
  CHECK(select_checkpoint_interval(48, 1) == 6);
  CHECK_THROWS_AS(activation_units(16, 4, 3), Error);
}

TEST_CASE("model state bytes") {
  const std::int64_t phi = 2'000'000'000;
  CHECK(model_state_bytes(phi, false, 0) == 40'000'000'000LL);
  CHECK(model_state_bytes(phi, true, 16'000'000) == 8'256'000'000LL);
  double prev = 0.0;
  for (std::int64_t b = phi; b >= 1; b /= 10) {
    const double r = static_cast<double>(model_state_bytes(phi, false, b)) / static_cast<double>(model_state_bytes(phi, true, b));
    CHECK(r > prev);
    CHECK(r < 5.0);
    prev = r;
  }
  CHECK(prev > 4.9999);
}

TEST_CASE("memory ledger rows") {
  const auto plain = memory_ledger(2'000'000'000, false, 16'000'000, 9.0, 1000);
  const auto opt = memory_ledger(2'000'000'000, true, 16'000'000, 9.0, 1000);
  CHECK(plain.device_model_state_bytes() == 40'000'000'000LL);
  CHECK(opt.device_model_state_bytes() == 8'256'000'000LL);
  CHECK(plain.device_activation_bytes() == opt.device_activation_bytes());
  CHECK(plain.device_activation_bytes() == 9000);
  CHECK(opt.host_bytes() == 24'000'000'000LL);
  bool scratch = false;
  for (const auto& r : opt.rows) scratch = scratch || (r.component == "bucket_scratch" && r.bytes == 256'000'000);
  CHECK(scratch);
}

TEST_CASE("rational") {
  CHECK(Rational(6, 4) == Rational(3, 2));
  CHECK(Rational(3, 2) * 4 == Rational(6, 1));
  CHECK(Rational(1, 3) < Rational(1, 2));
}

TEST_CASE("comm/comp counters") {
  RunConfig c;
  c.network = NetworkSpec::uniform(12, 8, 8, 8);
  c.parallel.checkpoint_interval = 1;
  c.batch.batch_size = 24;
  std::int64_t bytes3 = 0;
  for (int g : {3, 6, 12}) {
    c.parallel.g_inter = g;
    c.parallel.g_data = 12 / g;
    c.workers = 12;
    const auto k = comm_comp_counters(validate_or_throw(c));
    const std::int64_t shard = 24 / (12 / g);
    CHECK(k.p2p_bytes_per_worker == shard * 16 * 2);
    CHECK(k.flops_per_worker == shard * (12 / g) * 6 * 64);
    if (g == 3) bytes3 = k.p2p_bytes_per_worker;
    CHECK(k.p2p_bytes_per_worker * 3 == bytes3 * g);
  }
}

TEST_CASE("training time") {
  CHECK(estimated_training_time(2048.0 * 512.0, 2048, 512) == 3e11);
  CHECK(estimated_training_time(1.0, 2048, 512) == doctest::Approx(286102.294921875).epsilon(1e-15));
  CHECK(estimated_training_time(1.0, 2048, 512) / 86400.0 == doctest::Approx(3.31).epsilon(1e-2));
}

TEST_CASE("flop rate against 50-digit arithmetic") {
  auto exact = [](Big b, Big s, Big l, Big h, Big v, Big t) {
    return Big(96) * b * s * l * h * h / t * (Big(1) + s / (Big(6) * h) + v / (Big(16) * l * h));
  };
  const auto r = flops_and_peak_fraction(16384, 512, 48, 4512, 51200, 7.5, 125e12, 384);
  const Big e = exact(16384, 512, 48, 4512, 51200, Big(7.5));
  CHECK(static_cast<double>(abs((Big(r.flops_per_second) - e) / e)) < 1e-15);
  CHECK(static_cast<double>(abs((Big(r.peak_fraction) - e / Big(125e12 * 384)) / (e / Big(125e12 * 384)))) < 1e-15);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(1.0, 1000.0);
  for (int i = 0; i < 100; ++i) {
    const double b = u(gen), s = u(gen), l = u(gen), h = u(gen), v = u(gen), t = u(gen);
    const Big x = exact(b, s, l, h, v, t);
    CHECK(static_cast<double>(abs((Big(flops_and_peak_fraction(b, s, l, h, v, t, 1e12, 1).flops_per_second) - x) / x)) <
          1e-12);
  }
}

TEST_CASE("transformer parameter count") {
  CHECK(transformer_parameter_count(1, 2, 3, 4) == 12 * 4 + 13 * 2 + 6 + 8);
  const auto p = transformer_parameter_count(48, 4512, 51200, 512);
  CHECK(p > 11'500'000'000LL);
  CHECK(p < 12'500'000'000LL);
}
