#include <cmath>

#include "doctest.h"

#include "hybridpipe/optimizer.hpp"
#include "hybridpipe/random.hpp"

using namespace hybridpipe;

namespace {

std::vector<double> random_grad(std::size_t n, std::uint64_t seed, double scale) {
  Rng rng(seed);
  std::vector<double> g(n);
  for (auto& x : g) x = round_to_half(rng.uniform(-scale, scale));
  return g;
}

}  // namespace

TEST_CASE("descale examples") {
  const std::vector<Half> zero(3, to_half(0.0));
  CHECK(promote_and_descale(zero, 1024.0) == std::vector<double>(3, 0.0));
  const auto q = quantize_half(std::vector<double>{8.0, 0.1});
  CHECK(promote_and_descale(q, 1024.0)[0] == 0.0078125);
  CHECK(promote_and_descale(q, 1.0) == dequantize(q));
  CHECK(first_nonfinite(std::vector<double>{1.0, INFINITY}, 1.0) == 1);
  CHECK(first_nonfinite(std::vector<double>{1.0, 2.0}, 1.0) == -1);
}

TEST_CASE("adam closed forms") {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  auto s = OptimizerState::from_parameters(std::vector<double>{1.0});
  adam_step(s, std::vector<double>{1.0}, cfg);
  CHECK(s.master_params[0] == doctest::Approx(0.999).epsilon(1e-9));
  CHECK(s.step_count == 1);

  auto z = OptimizerState::from_parameters(std::vector<double>{2.0, -3.0});
  z.first_moment = {0.5, -0.5};
  z.second_moment = {0.25, 0.25};
  adam_step(z, std::vector<double>{0.0, 0.0}, cfg);
  CHECK(std::abs(z.first_moment[0]) < 0.5);
  CHECK(z.second_moment[1] < 0.25);
  CHECK(z.first_moment[0] == 0.45);
}

TEST_CASE("adam matches a scalar transcription") {
  OptimizerConfig cfg;
  cfg.learning_rate = 0.01;
  std::vector<double> p = {0.3, -1.2, 4.0};
  auto s = OptimizerState::from_parameters(p);
  std::vector<double> m(3, 0.0), v(3, 0.0);
  for (int t = 1; t <= 5; ++t) {
    const auto g = random_grad(3, static_cast<std::uint64_t>(t), 2.0);
    adam_step(s, g, cfg);
    for (std::size_t i = 0; i < 3; ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t));
      const double vh = v[i] / (1 - std::pow(cfg.beta2, t));
      p[i] *= 1 - cfg.learning_rate * cfg.weight_decay;
      p[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
    }
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(s.master_params[i] == doctest::Approx(p[i]).epsilon(1e-14));
}

TEST_CASE("non-finite gradient leaves state untouched") {
  OptimizerConfig cfg;
  auto s = OptimizerState::from_parameters(std::vector<double>{1.0, 2.0});
  const auto before = s.master_params;
  CHECK_THROWS_AS(adam_step(s, std::vector<double>{1.0, NAN}, cfg), Error);
  CHECK(s.master_params == before);
  CHECK(s.step_count == 0);

  OffloadStore store(OptimizerState::from_parameters(before), 1);
  try {
    bucketed_step(store, std::vector<double>{1.0, INFINITY}, cfg);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteGradient);
  }
  CHECK(store.host_state().master_params == before);
  CHECK(store.host_state().step_count == 0);
}

TEST_CASE("buckets of 3 over 10 parameters") {
  std::vector<double> p(10);
  for (int i = 0; i < 10; ++i) p[static_cast<std::size_t>(i)] = 0.1 * i - 0.4;
  OffloadStore store(OptimizerState::from_parameters(p), 3);
  REQUIRE(store.bucket_count() == 4);
  CHECK(store.bucket_range(0) == std::pair<std::int64_t, std::int64_t>{0, 3});
  CHECK(store.bucket_range(3) == std::pair<std::int64_t, std::int64_t>{9, 10});

  OptimizerConfig cfg;
  cfg.loss_scale = 64.0;
  auto mono = OptimizerState::from_parameters(p);
  std::vector<double> refreshed(10, 0.0);
  for (int step = 0; step < 4; ++step) {
    const auto g = random_grad(10, 100 + static_cast<std::uint64_t>(step), 50.0);
    adam_step(mono, promote_and_descale(std::span<const double>(g), cfg.loss_scale), cfg);
    bucketed_step(store, g, cfg, [&](std::int64_t off, std::span<const double> vals) {
      std::copy(vals.begin(), vals.end(), refreshed.begin() + off);
    });
    std::int64_t peak = 0;
    for (const auto& e : store.trace()) peak = std::max(peak, e.device_bytes);
    CHECK(peak == 16 * 3);
    CHECK(store.trace().back().device_bytes == 0);
    store.clear_trace();
  }
  CHECK(store.host_state().master_params == mono.master_params);
  CHECK(store.host_state().first_moment == mono.first_moment);
  CHECK(store.host_state().second_moment == mono.second_moment);
  CHECK(refreshed == mono.master_params);
  CHECK(store.peak_device_bytes() == 48);
}

TEST_CASE("bucket at least phi is a single step") {
  const std::vector<double> p = {1.0, 2.0, 3.0};
  OffloadStore store(OptimizerState::from_parameters(p), 100);
  CHECK(store.bucket_count() == 1);
  OptimizerConfig cfg;
  auto mono = OptimizerState::from_parameters(p);
  const std::vector<double> g = {0.5, -0.25, 1.0};
  adam_step(mono, g, cfg);
  bucketed_step(store, g, cfg);
  CHECK(store.host_state().master_params == mono.master_params);
  CHECK(store.peak_device_bytes() == 16 * 3);
}

TEST_CASE("buckets must be visited in order") {
  OffloadStore store(OptimizerState::from_parameters(std::vector<double>(6, 1.0)), 2);
  const std::vector<double> g(6, 0.5);
  OptimizerConfig cfg;
  store.begin_step(g, 1.0);
  CHECK_THROWS_AS(store.step_bucket(1, g, cfg), Error);
}
