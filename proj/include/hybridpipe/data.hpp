#pragma once

#include <cstdint>
#include <vector>

#include "hybridpipe/config.hpp"
#include "hybridpipe/nn.hpp"

namespace hybridpipe {

/// Deterministic synthetic task: inputs uniform in [-1, 1], targets from a
/// fixed random teacher (tanh(Ax) + noise for regression, one-hot argmax(Ax)
/// for classification). Cycles through `num_batches` distinct batches.
class SyntheticData {
 public:
  SyntheticData(const NetworkSpec& net, const DataConfig& cfg, int batch_size, std::uint64_t seed);

  const DataBatch& batch(std::int64_t step) const {
    return batches_[static_cast<std::size_t>(step % static_cast<std::int64_t>(batches_.size()))];
  }
  std::size_t distinct_batches() const { return batches_.size(); }

 private:
  std::vector<DataBatch> batches_;
};

}  // namespace hybridpipe
