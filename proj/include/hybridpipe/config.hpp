#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hybridpipe/cost_model.hpp"
#include "hybridpipe/errors.hpp"
#include "hybridpipe/half.hpp"

namespace hybridpipe {

/// Hybrid grid and scheduling hyperparameters. g_inter is the pipeline depth
/// (stages per replica), g_data the number of data-parallel replicas.
struct ParallelConfig {
  int g_inter = 1;
  int g_data = 1;
  int microbatch_size = 1;
  /// Maximum microbatches active in one pipeline; defaults to g_inter.
  std::optional<int> pipeline_limit;
  /// Parameters per optimizer offload bucket.
  std::int64_t bucket_size = 1 << 20;
  /// Buckets per chunked all-reduce call.
  int coarsening_k = 1;
  /// Activation checkpoint interval; chosen by select_checkpoint_interval when unset.
  std::optional<int> checkpoint_interval;

  friend bool operator==(const ParallelConfig&, const ParallelConfig&) = default;
};

enum class Activation { Identity, Tanh, Relu };
enum class LossKind { SquaredError, CrossEntropy };

struct LayerDim {
  int in = 0;
  int out = 0;
  friend bool operator==(const LayerDim&, const LayerDim&) = default;
};

struct NetworkSpec {
  std::vector<LayerDim> layer_dims;
  Activation hidden_activation = Activation::Tanh;
  Activation output_activation = Activation::Identity;
  LossKind loss = LossKind::SquaredError;
  /// Bytes of one layer output activation for a single sample. Assumed equal
  /// for every layer by the communication counters.
  std::int64_t uniform_activation_bytes = 0;

  int num_layers() const { return static_cast<int>(layer_dims.size()); }
  std::int64_t parameter_count_total() const;
  /// Weight + bias element count of layers [first, first + count).
  std::int64_t parameter_count(int first, int count) const;

  /// A chain of `layers` dense layers of the given width.
  static NetworkSpec uniform(int layers, int width, int input_width, int output_width);

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct BatchConfig {
  int batch_size = 1;
  friend bool operator==(const BatchConfig&, const BatchConfig&) = default;
};

struct OptimizerConfig {
  double learning_rate = 1.0e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1.0e-8;
  double weight_decay = 0.01;
  double loss_scale = 1.0;
  /// Halve loss_scale after a step skipped for non-finite gradients.
  bool dynamic_loss_scale = false;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

enum class DataKind { Regression, Classification };

struct DataConfig {
  DataKind kind = DataKind::Regression;
  /// Distinct batches before the stream repeats.
  int num_batches = 4;
  double noise = 0.0;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct RunConfig {
  int workers = 1;
  ParallelConfig parallel;
  NetworkSpec network;
  BatchConfig batch;
  OptimizerConfig optimizer;
  Precision precision = Precision::Double;
  DataConfig data;
  CostModel cost;
  /// Seeds parameter initialization and synthetic data.
  std::uint64_t seed = 0;
  /// Seeds cross-link delivery order in the simulated fabric.
  std::uint64_t fabric_seed = 0;
};

struct Violation {
  ErrorCode code;
  std::string message;
};

/// A run configuration that passed validation, with defaults resolved and
/// derived batch geometry filled in. Immutable after construction.
struct ValidatedRun {
  RunConfig config;
  int pipeline_limit = 1;
  int checkpoint_interval = 1;
  int layers_per_worker = 1;
  int shard_size = 1;
  int microbatches_per_shard = 1;
  int total_microbatches = 1;
};

struct Validation {
  std::optional<ValidatedRun> run;
  std::vector<Violation> violations;

  bool ok() const { return run.has_value(); }
  bool has(ErrorCode code) const;
};

Validation validate(const RunConfig& config);
Validation validate(const ParallelConfig& parallel, const NetworkSpec& net, const BatchConfig& batch,
                    int workers);

/// Throws the first violation as an Error when validation fails.
ValidatedRun validate_or_throw(const RunConfig& config);

/// Checkpoint interval for `total_layers` layers split over `g_inter` stages:
/// the divisor of the per-stage depth closest to sqrt(total_layers). Closeness
/// is measured on a log scale, which makes the choice the minimizer of
/// total_layers/ac + 1 + ac over the divisors; ties go to the smaller divisor.
int select_checkpoint_interval(int total_layers, int g_inter);

std::string_view to_string(Activation a);
std::string_view to_string(LossKind l);
std::string_view to_string(Precision p);
std::string_view to_string(DataKind k);

}  // namespace hybridpipe
