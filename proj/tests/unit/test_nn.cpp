#include <cmath>

#include "doctest.h"

#include "hybridpipe/nn.hpp"
#include "hybridpipe/random.hpp"

using namespace hybridpipe;

namespace {

NetworkSpec linear_net(std::vector<LayerDim> dims) {
  NetworkSpec s;
  s.layer_dims = std::move(dims);
  s.hidden_activation = Activation::Identity;
  s.output_activation = Activation::Identity;
  return s;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (auto& x : m.values()) x = rng.uniform(-1.0, 1.0);
  return m;
}

double network_loss(const NetworkSpec& spec, const std::vector<double>& params, const Matrix& x, const Matrix& y) {
  NetworkShard shard(spec, 0, spec.num_layers(), params, Precision::Double, 1);
  const auto out = shard.forward(x, 0);
  return loss_and_grad(out, y, spec.loss, 1, 1.0).loss;
}

}  // namespace

TEST_CASE("identity network passes input through") {
  const auto spec = linear_net({{3, 3}, {3, 3}});
  std::vector<double> p;
  for (int l = 0; l < 2; ++l) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) p.push_back(i == j ? 1.0 : 0.0);
    }
    p.insert(p.end(), 3, 0.0);
  }
  NetworkShard shard(spec, 0, 2, p, Precision::Double, 1);
  const auto x = random_matrix(4, 3, 1);
  CHECK(shard.forward(x, 0) == x);
}

TEST_CASE("two scaling layers compose") {
  const auto spec = linear_net({{2, 2}, {2, 2}});
  const std::vector<double> p = {1, 0, 0, 1, 0, 0, 2, 0, 0, 2, 0, 0};
  NetworkShard shard(spec, 0, 2, p, Precision::Double, 1);
  CHECK(shard.forward(Matrix(1, 2, {1.0, 1.0}), 0) == Matrix(1, 2, {2.0, 2.0}));
}

TEST_CASE("checkpoint stash holds every ac-th layer input") {
  NetworkSpec spec = NetworkSpec::uniform(4, 6, 6, 6);
  const auto p = init_parameters(spec, 4);
  const auto x = random_matrix(3, 6, 2);
  NetworkShard plain(spec, 0, 4, p, Precision::Double, 1);
  NetworkShard ckpt(spec, 0, 4, p, Precision::Double, 2);
  const auto a = plain.forward(x, 0);
  const auto b = ckpt.forward(x, 0);
  CHECK(a == b);
  CHECK(ckpt.stashed_layers(0) == std::vector<int>{0, 2});
  CHECK(plain.stashed_layers(0) == std::vector<int>{0, 1, 2, 3});

  const auto g = random_matrix(3, 6, 3);
  plain.begin_batch();
  ckpt.begin_batch();
  CHECK(plain.backward(0, g) == ckpt.backward(0, g));
  CHECK(ckpt.stash_entries() == 0);
  plain.drain();
  ckpt.drain();
  CHECK(std::equal(plain.grad_accumulator().begin(), plain.grad_accumulator().end(), ckpt.grad_accumulator().begin()));
}

TEST_CASE("linear layer backward") {
  const auto spec = linear_net({{2, 3}});
  const std::vector<double> p = {1, 2, 3, 4, 5, 6, 0.5, -0.5, 0.25};
  NetworkShard shard(spec, 0, 1, p, Precision::Double, 1);
  shard.begin_batch();
  shard.forward(Matrix(1, 2, {1.0, -2.0}), 7);
  const auto dx = shard.backward(7, Matrix(1, 3, {1.0, 0.5, -1.0}));
  // W^T g
  CHECK(dx == Matrix(1, 2, {1 * 1 + 3 * 0.5 - 5 * 1.0, 2 * 1 + 4 * 0.5 - 6 * 1.0}));
  shard.drain();
  const auto acc = shard.grad_accumulator();
  // g x^T, then bias = g
  const std::vector<double> expect = {1, -2, 0.5, -1, -1, 2, 1, 0.5, -1};
  CHECK(std::vector<double>(acc.begin(), acc.end()) == expect);
}

TEST_CASE("shard errors") {
  const auto spec = NetworkSpec::uniform(2, 4, 4, 4);
  const auto p = init_parameters(spec, 1);
  NetworkShard shard(spec, 0, 2, p, Precision::Double, 1);
  CHECK_THROWS_AS(shard.forward(Matrix(1, 3), 0), Error);
  CHECK_THROWS_AS(shard.backward(5, Matrix(1, 4)), Error);
  shard.forward(Matrix(1, 4), 0);
  CHECK_THROWS_AS(shard.backward(0, Matrix(1, 2)), Error);
}

TEST_CASE("loss examples") {
  const auto y = random_matrix(3, 2, 5);
  auto r = loss_and_grad(y, y, LossKind::SquaredError, 1, 1.0);
  CHECK(r.loss == 0.0);
  for (double g : r.grad.values()) CHECK(g == 0.0);
  const Matrix pred(1, 2, {1.0, 3.0});
  const Matrix target(1, 2, {0.0, 1.0});
  CHECK(loss_and_grad(pred, target, LossKind::SquaredError, 1, 1.0).loss == 2.5);
  CHECK(loss_and_grad(pred, target, LossKind::SquaredError, 4, 8.0).loss == 5.0);
  CHECK_THROWS_AS(loss_and_grad(pred, Matrix(1, 3), LossKind::SquaredError, 1, 1.0), Error);
}

TEST_CASE("gradients match finite differences") {
  for (auto loss : {LossKind::SquaredError, LossKind::CrossEntropy}) {
    for (auto act : {Activation::Tanh, Activation::Relu}) {
      auto spec = NetworkSpec::uniform(3, 5, 4, 3);
      spec.loss = loss;
      spec.hidden_activation = act;
      const auto p = init_parameters(spec, 8);
      const auto x = random_matrix(6, 4, 9);
      Matrix y = random_matrix(6, 3, 10);
      if (loss == LossKind::CrossEntropy) {
        for (std::size_t r = 0; r < 6; ++r) {
          for (std::size_t c = 0; c < 3; ++c) y(r, c) = c == r % 3 ? 1.0 : 0.0;
        }
      }
      NetworkShard shard(spec, 0, 3, p, Precision::Double, 1);
      shard.begin_batch();
      const auto out = shard.forward(x, 0);
      shard.backward(0, loss_and_grad(out, y, loss, 1, 1.0).grad);
      shard.drain();
      const auto g = shard.grad_accumulator();
      const double h = 1e-6;
      double worst = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto plus = p, minus = p;
        plus[i] += h;
        minus[i] -= h;
        const double fd = (network_loss(spec, plus, x, y) - network_loss(spec, minus, x, y)) / (2 * h);
        worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(fd)));
      }
      CHECK(worst < 1e-6);
    }
  }
}

TEST_CASE("parameter init is seeded") {
  const auto spec = NetworkSpec::uniform(3, 4, 4, 4);
  CHECK(init_parameters(spec, 1) == init_parameters(spec, 1));
  CHECK(init_parameters(spec, 1) != init_parameters(spec, 2));
  CHECK(parameter_offset(spec, 2) == 40);
  CHECK(spec.parameter_count_total() == 60);
}
