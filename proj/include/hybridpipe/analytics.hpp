#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hybridpipe/config.hpp"

namespace hybridpipe {

/// Exact non-negative fraction, kept in lowest terms.
class Rational {
 public:
  Rational(std::int64_t num = 0, std::int64_t den = 1);
  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double value() const { return static_cast<double>(num_) / static_cast<double>(den_); }
  Rational operator*(std::int64_t k) const;
  friend bool operator==(const Rational&, const Rational&) = default;
  friend bool operator<(const Rational& a, const Rational& b);

 private:
  std::int64_t num_;
  std::int64_t den_;
};

/// Peak activation memory of one worker, in layer-output units:
/// g_inter * (N / (g_inter * ac)) + 1 + ac, i.e. N/ac + 1 + ac. Counts the
/// stash of g_inter in-flight microbatches plus one working activation and a
/// recomputed segment. Throws BadCheckpointInterval unless ac divides N/g_inter.
double activation_units(int total_layers, int g_inter, int checkpoint_interval);

/// Same accounting for an arbitrary number of in-flight microbatches.
double activation_units(int total_layers, int g_inter, int checkpoint_interval, int pipeline_limit);

/// Device bytes for parameters, gradients and optimizer state of `phi`
/// parameters: 20*phi, or 4*phi + 16*bsize with host offload.
std::int64_t model_state_bytes(std::int64_t phi, bool optimized, std::int64_t bucket_size);

enum class Residence { Device, Host, Deleted };
std::string_view to_string(Residence r);

struct LedgerRow {
  std::string component;
  std::int64_t bytes;
  Residence residence;
  bool model_state;
};

/// Per-worker memory accounting.
struct MemoryLedger {
  std::int64_t phi = 0;
  bool optimized = false;
  std::int64_t bucket_size = 0;
  double activation_units = 0.0;
  std::int64_t activation_unit_bytes = 0;
  std::vector<LedgerRow> rows;

  std::int64_t device_model_state_bytes() const;
  std::int64_t device_activation_bytes() const;
  std::int64_t device_total_bytes() const;
  std::int64_t host_bytes() const;
};

MemoryLedger memory_ledger(std::int64_t phi, bool optimized, std::int64_t bucket_size, double activation_units,
                           std::int64_t activation_unit_bytes);
/// Ledger of the worker holding the most parameters. One activation unit is
/// one microbatch's layer output.
MemoryLedger memory_ledger(const ValidatedRun& run, bool optimized);

/// Parameter count of a GPT-style transformer: 12 l h^2 + 13 l h per block
/// stack plus token (V h) and position (s h) embeddings.
std::int64_t transformer_parameter_count(std::int64_t layers, std::int64_t hidden, std::int64_t vocab,
                                         std::int64_t sequence);

/// Inter-layer phase work of one batch.
struct CommCompCounters {
  /// Point-to-point bytes sent by each stage of a pipeline.
  std::vector<std::int64_t> p2p_bytes_per_stage;
  /// Forward + backward (+ recompute) flops of each stage.
  std::vector<std::int64_t> flops_per_stage;
  /// Busiest worker's sent bytes and flops.
  std::int64_t p2p_bytes_per_worker = 0;
  std::int64_t flops_per_worker = 0;
  /// Computation to communication ratio, flops per byte (0/1 with no traffic).
  Rational ratio;
};

/// Flops of one dense layer for one sample: forward 2*in*out, backward twice that.
inline std::int64_t forward_flops(const LayerDim& d) { return 2LL * d.in * d.out; }

CommCompCounters comm_comp_counters(const ValidatedRun& run);

/// Time to train on 3e11 tokens given batch time t, batch size b and
/// sequence length s.
double estimated_training_time(double batch_time, double batch_size, double sequence_length);

struct FlopRate {
  double flops_per_second;
  double peak_fraction;
};

/// Transformer flop/s lower bound 96 b s l h^2 / t (1 + s/(6h) + V/(16 l h)) and
/// its fraction of `devices * per_device_peak`.
FlopRate flops_and_peak_fraction(double batch_size, double sequence_length, double layers, double hidden,
                                 double vocab, double batch_time, double per_device_peak, double devices);

}  // namespace hybridpipe
