#pragma once

#include <cstdint>
#include <vector>

#include "hybridpipe/config.hpp"
#include "hybridpipe/nn.hpp"

namespace hybridpipe {

/// Plain single-process trainer used as the correctness oracle for the
/// parallel engine. Shares no code with it beyond activation functions and
/// half-precision rounding: no shards, messages, checkpointing or buckets.
///
/// In Double precision the gradient is the full-batch gradient in one pass.
/// In Mixed precision the batch is walked in the same (replica, microbatch)
/// partition the engine uses, rounding partial sums at the same points, so
/// results can be compared bit for bit.
class SerialReference {
 public:
  SerialReference(const ValidatedRun& run, std::vector<double> initial_params);

  struct Gradient {
    /// Scaled loss gradient (not yet divided by the loss scale).
    std::vector<double> grad;
    /// Batch-mean loss with the loss scale divided out.
    double loss = 0.0;
  };

  Gradient gradient(const DataBatch& batch) const;
  /// Gradient over the whole batch as a single pass, regardless of precision.
  Gradient full_batch_gradient(const DataBatch& batch) const;

  /// Gradient plus an Adam step. Returns the logged loss.
  double step(const DataBatch& batch);

  const std::vector<double>& parameters() const { return params_; }
  std::int64_t steps_taken() const { return step_; }

 private:
  Gradient partitioned_gradient(const DataBatch& batch) const;
  /// Loss and scaled gradient of `rows` samples, with the loss pre-divided by
  /// `divisor`. Gradient entries are rounded per the run's precision.
  double accumulate(const DataBatch& batch, std::size_t first, std::size_t rows, int divisor,
                    std::vector<double>& grad) const;

  ValidatedRun run_;
  std::vector<double> params_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::int64_t step_ = 0;
};

}  // namespace hybridpipe
