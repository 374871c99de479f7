#include "hybridpipe/data.hpp"

#include <cmath>

#include "hybridpipe/random.hpp"

namespace hybridpipe {

SyntheticData::SyntheticData(const NetworkSpec& net, const DataConfig& cfg, int batch_size, std::uint64_t seed) {
  const auto in = static_cast<std::size_t>(net.layer_dims.front().in);
  const auto out = static_cast<std::size_t>(net.layer_dims.back().out);
  Rng rng(derive_seed(seed, 0xDA7A));
  Matrix teacher(out, in);
  const double bound = 2.0 / std::sqrt(static_cast<double>(in));
  for (double& v : teacher.values()) v = rng.uniform(-bound, bound);

  const auto rows = static_cast<std::size_t>(batch_size);
  for (int b = 0; b < cfg.num_batches; ++b) {
    DataBatch batch{Matrix(rows, in), Matrix(rows, out)};
    for (double& v : batch.inputs.values()) v = rng.uniform(-1.0, 1.0);
    for (std::size_t s = 0; s < rows; ++s) {
      std::size_t best = 0;
      double best_score = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        double score = 0.0;
        for (std::size_t i = 0; i < in; ++i) score += teacher(o, i) * batch.inputs(s, i);
        if (cfg.kind == DataKind::Regression) {
          batch.targets(s, o) = std::tanh(score) + cfg.noise * rng.uniform(-1.0, 1.0);
        } else if (o == 0 || score > best_score) {
          best = o;
          best_score = score;
        }
      }
      if (cfg.kind == DataKind::Classification) batch.targets(s, best) = 1.0;
    }
    batches_.push_back(std::move(batch));
  }
}

}  // namespace hybridpipe
