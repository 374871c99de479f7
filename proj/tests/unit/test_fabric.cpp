#include <set>

#include "doctest.h"

#include "hybridpipe/errors.hpp"
#include "hybridpipe/fabric.hpp"

using namespace hybridpipe;

namespace {

Message msg(WorkerId from, WorkerId to, int mb, std::size_t elems = 1) {
  Message m;
  m.source = from;
  m.dest = to;
  m.microbatch_id = mb;
  m.kind = from.stage < to.stage ? MessageKind::ActivationForward : MessageKind::GradientBackward;
  m.payload = Matrix(1, elems);
  return m;
}

}  // namespace

TEST_CASE("per-link FIFO") {
  Fabric f(2, 1, Precision::Double, 3);
  f.send(msg({0, 0}, {1, 0}, 1));
  f.send(msg({0, 0}, {1, 0}, 2));
  CHECK(f.receive({1, 0})->microbatch_id == 1);
  CHECK(f.receive({1, 0})->microbatch_id == 2);
  CHECK_THROWS_AS(f.receive({1, 0}), Error);
}

TEST_CASE("single pending message is returned; others see none") {
  Fabric f(3, 1, Precision::Double, 0);
  f.send(msg({0, 0}, {1, 0}, 4));
  CHECK_FALSE(f.receive({2, 0}).has_value());
  CHECK(f.receive({1, 0})->microbatch_id == 4);
}

TEST_CASE("delivery order across links depends on seed") {
  std::set<int> firsts;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Fabric f(3, 1, Precision::Double, seed);
    f.send(msg({0, 0}, {1, 0}, 10));
    f.send(msg({2, 0}, {1, 0}, 20));
    const int first = f.receive({1, 0})->microbatch_id;
    firsts.insert(first);
    CHECK(f.receive({1, 0})->microbatch_id == 30 - first);
  }
  CHECK(firsts == std::set<int>{10, 20});

  // Same seed, same order.
  Fabric a(3, 1, Precision::Double, 42), b(3, 1, Precision::Double, 42);
  for (int i = 0; i < 8; ++i) {
    a.send(msg({0, 0}, {1, 0}, i));
    a.send(msg({2, 0}, {1, 0}, 100 + i));
    b.send(msg({0, 0}, {1, 0}, i));
    b.send(msg({2, 0}, {1, 0}, 100 + i));
  }
  for (int i = 0; i < 16; ++i) CHECK(a.deliver_next().microbatch_id == b.deliver_next().microbatch_id);
}

TEST_CASE("byte accounting") {
  Fabric f(2, 1, Precision::Mixed, 0);
  f.send(msg({0, 0}, {1, 0}, 0, 1'000'000));
  f.receive({1, 0});
  CHECK(f.stats({0, 0}).p2p_bytes_sent == 2'000'000);
  CHECK(f.stats({1, 0}).p2p_bytes_received == 2'000'000);
  CHECK(f.stats({0, 0}).p2p_bytes_received == 0);
  CHECK(f.total_stats().p2p_bytes_sent == 2'000'000);
}

TEST_CASE("invalid routes") {
  Fabric f(3, 2, Precision::Double, 0);
  CHECK_THROWS_AS(f.send(msg({0, 0}, {2, 0}, 0)), Error);
  CHECK_THROWS_AS(f.send(msg({0, 0}, {1, 1}, 0)), Error);
  CHECK_THROWS_AS(f.send(msg({0, 0}, {3, 0}, 0)), Error);
}

TEST_CASE("all-reduce") {
  Fabric f(1, 2, Precision::Double, 0);
  std::vector<double> a = {1, 2}, b = {3, 4};
  std::vector<std::span<double>> bufs = {a, b};
  const std::vector<WorkerId> group = {{0, 0}, {0, 1}};
  f.all_reduce(group, bufs);
  CHECK(a == std::vector<double>{4, 6});
  CHECK(b == std::vector<double>{4, 6});

  Fabric one(1, 1, Precision::Double, 0);
  std::vector<double> c = {1.5, -2};
  std::vector<std::span<double>> single = {c};
  const std::vector<WorkerId> g1 = {{0, 0}};
  one.all_reduce(g1, single);
  CHECK(c == std::vector<double>{1.5, -2});
}

TEST_CASE("ring traffic for p=4 and 8 MB") {
  Fabric f(1, 4, Precision::Mixed, 0);
  std::vector<std::vector<double>> data(4, std::vector<double>(4'000'000, 0.5));
  std::vector<std::span<double>> bufs(data.begin(), data.end());
  const std::vector<WorkerId> group = {{0, 0}, {0, 1}, {0, 2}, {0, 3}};
  f.all_reduce(group, bufs);
  CHECK(f.stats({0, 2}).allreduce_bytes == 12'000'000.0);
  CHECK(data[3][0] == 2.0);
}

TEST_CASE("chunked all-reduce equals monolithic") {
  std::vector<double> a0(10), a1(10);
  for (int i = 0; i < 10; ++i) {
    a0[static_cast<std::size_t>(i)] = 0.1 * i;
    a1[static_cast<std::size_t>(i)] = 1.0 / (i + 1);
  }
  auto b0 = a0, b1 = a1;
  const std::vector<WorkerId> group = {{0, 0}, {0, 1}};
  Fabric f(1, 2, Precision::Mixed, 0);
  std::vector<std::span<double>> mono = {a0, a1};
  f.all_reduce(group, mono);
  std::vector<std::span<double>> chunked = {b0, b1};
  std::vector<std::int64_t> sizes;
  const auto done = f.all_reduce_chunked(group, chunked, 4, [&](const ChunkCompletion& c) { sizes.push_back(c.end - c.begin); });
  CHECK(sizes == std::vector<std::int64_t>{4, 4, 2});
  CHECK(done.size() == 3);
  CHECK(a0 == b0);
  CHECK(a1 == b1);

  auto c0 = a0, c1 = a1;
  std::vector<std::span<double>> whole = {c0, c1};
  CHECK(f.all_reduce_chunked(group, whole, 100).size() == 1);
}
