#include <cmath>
#include <map>

#include "doctest.h"

#include "hybridpipe/data.hpp"
#include "hybridpipe/engine.hpp"
#include "hybridpipe/reference.hpp"

using namespace hybridpipe;

namespace {

RunConfig toy(int gi, int gd, int mb, int batch) {
  RunConfig c;
  c.network = NetworkSpec::uniform(4, 8, 8, 8);
  c.parallel.g_inter = gi;
  c.parallel.g_data = gd;
  c.parallel.microbatch_size = mb;
  c.workers = gi * gd;
  c.batch.batch_size = batch;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("1x1 grid is bit-identical to the serial loop") {
  const auto run = validate_or_throw(toy(1, 1, 4, 4));
  const auto p = init_parameters(run.config.network, 3);
  const SyntheticData data(run.config.network, run.config.data, 4, 3);
  HybridTrainer t(run, p);
  SerialReference ref(run, p);
  for (int i = 0; i < 20; ++i) CHECK(t.train_step(data.batch(i)).loss == ref.step(data.batch(i)));
  CHECK(t.parameters() == ref.parameters());
}

TEST_CASE("single microbatch runs forward chain then backward chain") {
  const auto run = validate_or_throw(toy(4, 1, 2, 2));
  HybridTrainer t(run, init_parameters(run.config.network, 3));
  const SyntheticData data(run.config.network, run.config.data, 2, 3);
  t.inter_layer_parallel_phase(data.batch(0));
  std::vector<std::pair<ScheduleKind, int>> seq;
  for (const auto& e : t.schedule()) {
    if (e.kind == ScheduleKind::Forward || e.kind == ScheduleKind::Backward) seq.push_back({e.kind, e.worker.stage});
  }
  const std::vector<std::pair<ScheduleKind, int>> expect = {
      {ScheduleKind::Forward, 0},  {ScheduleKind::Forward, 1},  {ScheduleKind::Forward, 2},  {ScheduleKind::Forward, 3},
      {ScheduleKind::Backward, 3}, {ScheduleKind::Backward, 2}, {ScheduleKind::Backward, 1}, {ScheduleKind::Backward, 0}};
  CHECK(seq == expect);
}

TEST_CASE("data-parallel step sums shard gradients") {
  const auto run = validate_or_throw(toy(1, 2, 1, 4));
  const auto p = init_parameters(run.config.network, 3);
  const SyntheticData data(run.config.network, run.config.data, 4, 3);
  HybridTrainer t(run, p);
  t.inter_layer_parallel_phase(data.batch(0));
  const auto g1 = t.gradients(0), g2 = t.gradients(1);
  t.data_parallel_step();
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(t.gradients(0)[i] == g1[i] + g2[i]);
  CHECK(t.gradients(1) == t.gradients(0));

  const auto solo = validate_or_throw(toy(2, 1, 1, 4));
  HybridTrainer s(solo, p);
  s.inter_layer_parallel_phase(data.batch(0));
  const auto before = s.gradients(0);
  s.data_parallel_step();
  CHECK(s.gradients(0) == before);
}

TEST_CASE("schedule safety over seeds and limits") {
  for (int limit : {1, 2, 4}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      auto c = toy(4, 2, 1, 16);
      c.parallel.pipeline_limit = limit;
      c.fabric_seed = seed;
      const auto run = validate_or_throw(c);
      HybridTrainer t(run, init_parameters(c.network, 3));
      const SyntheticData data(c.network, c.data, 16, 3);
      t.train_step(data.batch(0));
      std::map<std::tuple<int, int, int, ScheduleKind>, int> counts;
      for (const auto& e : t.schedule()) {
        REQUIRE(e.pipeline_in_flight <= limit);
        if (e.kind == ScheduleKind::Forward || e.kind == ScheduleKind::Backward) {
          ++counts[{e.worker.replica, e.worker.stage, e.index, e.kind}];
        }
      }
      CHECK(counts.size() == 2u * 4u * 8u * 2u);
      for (const auto& [k, n] : counts) REQUIRE(n == 1);
      CHECK(t.max_in_flight() == limit);
    }
  }
}

TEST_CASE("overlap is numerically neutral") {
  auto c = toy(2, 2, 1, 8);
  c.parallel.bucket_size = 12;
  c.precision = Precision::Mixed;
  c.optimizer.loss_scale = 128.0;
  const auto p = init_parameters(c.network, 3);
  const SyntheticData data(c.network, c.data, 8, 3);
  HybridTrainer seq(validate_or_throw(c), p);
  seq.set_overlap(false);
  seq.train(data, 3);
  for (int k : {1, 4, 100}) {
    c.parallel.coarsening_k = k;
    HybridTrainer t(validate_or_throw(c), p);
    t.train(data, 3);
    CHECK(t.parameters(0) == seq.parameters(0));
  }
}

TEST_CASE("non-finite gradients skip the step") {
  auto c = toy(2, 1, 1, 4);
  c.optimizer.loss_scale = 64.0;
  c.optimizer.dynamic_loss_scale = true;
  const auto p = init_parameters(c.network, 3);
  const SyntheticData data(c.network, c.data, 4, 3);
  auto bad = data.batch(0);
  bad.inputs(2, 3) = std::nan("");
  for (bool overlap : {true, false}) {
    HybridTrainer t(validate_or_throw(c), p);
    t.set_overlap(overlap);
    const auto r = t.train_step(bad);
    CHECK(r.skipped);
    CHECK(t.parameters() == p);
    CHECK(t.loss_scale() == 32.0);
    CHECK_FALSE(t.train_step(data.batch(1)).skipped);
  }
}

TEST_CASE("activation peak respects the checkpoint bound") {
  auto c = toy(2, 1, 1, 8);
  c.network = NetworkSpec::uniform(8, 4, 4, 4);
  for (int ac : {1, 2, 4}) {
    c.parallel.checkpoint_interval = ac;
    const auto run = validate_or_throw(c);
    HybridTrainer t(run, init_parameters(c.network, 1));
    const SyntheticData data(c.network, c.data, 8, 1);
    t.train_step(data.batch(0));
    CHECK(t.peak_activation_units() <= 8 / ac + 1 + ac);
    CHECK(t.peak_optimizer_device_bytes() <= 16 * c.parallel.bucket_size);
  }
}
