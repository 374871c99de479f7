#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hybridpipe/config.hpp"
#include "hybridpipe/half.hpp"

namespace hybridpipe {

/// Full-precision master parameters plus Adam moments.
struct OptimizerState {
  std::vector<double> master_params;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step_count = 0;

  static OptimizerState from_parameters(std::span<const double> params);
  std::int64_t size() const { return static_cast<std::int64_t>(master_params.size()); }
};

/// Per-step constants of bias-corrected Adam with decoupled weight decay.
struct AdamCoefficients {
  double learning_rate;
  double beta1;
  double beta2;
  double epsilon;
  double decay_factor;  // 1 - lr * weight_decay
  double bias_correction1;
  double bias_correction2;

  static AdamCoefficients for_step(const OptimizerConfig& cfg, std::int64_t step);
};

/// Elementwise Adam update on aligned slices.
void adam_update(std::span<double> params, std::span<double> first_moment, std::span<double> second_moment,
                 std::span<const double> grad, const AdamCoefficients& coef);

/// Promotes reduced-precision gradients to working precision and divides out
/// the loss scale.
std::vector<double> promote_and_descale(std::span<const Half> grad16, double loss_scale);
/// Same for gradients already held as (quantized) working-precision values.
std::vector<double> promote_and_descale(std::span<const double> grad16, double loss_scale);
void promote_and_descale_into(std::span<const double> grad16, double loss_scale, std::span<double> out);

/// Index of the first gradient that is non-finite after descaling, or -1.
std::int64_t first_nonfinite(std::span<const double> grad16, double loss_scale);

/// Receives refreshed master-parameter slices so the owner can update its
/// reduced-precision copy: (offset, values).
using ParamSink = std::function<void(std::int64_t, std::span<const double>)>;

/// Monolithic Adam step on already-descaled gradients. Throws
/// NonFiniteGradient, leaving the state untouched, when any gradient is NaN
/// or infinite.
void adam_step(OptimizerState& state, std::span<const double> grad, const OptimizerConfig& cfg,
               const ParamSink& refresh = {});

enum class ResidencyOp { Fetch, Descale, Update, WriteBack, Release };

struct ResidencyEvent {
  ResidencyOp op;
  int bucket;
  /// Device-resident optimizer bytes after the event.
  std::int64_t device_bytes;
};

/// Host-resident optimizer state split into buckets of `bucket_size`
/// parameters. A step streams one bucket at a time through device scratch
/// buffers: 4 bytes/param for master parameters, 8 for the two moments and 4
/// for descaled gradients, so at most 16 * bucket_size bytes are device
/// resident at any point.
class OffloadStore {
 public:
  static constexpr std::int64_t kParamBytes = 4;
  static constexpr std::int64_t kMomentBytes = 8;
  static constexpr std::int64_t kScratchBytes = 4;
  static constexpr std::int64_t kBytesPerParam = kParamBytes + kMomentBytes + kScratchBytes;

  OffloadStore(OptimizerState host_state, std::int64_t bucket_size);

  std::int64_t bucket_size() const { return bucket_size_; }
  int bucket_count() const { return bucket_count_; }
  /// [begin, end) parameter range of a bucket; the last one may be short.
  std::pair<std::int64_t, std::int64_t> bucket_range(int bucket) const;

  const OptimizerState& host_state() const { return host_; }
  std::int64_t device_bytes() const { return device_bytes_; }
  std::int64_t peak_device_bytes() const { return peak_device_bytes_; }
  bool is_device_resident(int bucket) const { return resident_bucket_ == bucket; }
  const std::vector<ResidencyEvent>& trace() const { return trace_; }
  void clear_trace() { trace_.clear(); }

  /// Starts a step: checks every gradient for overflow after descaling and
  /// advances the step counter. Throws NonFiniteGradient naming the first
  /// offending bucket, leaving the store untouched.
  void begin_step(std::span<const double> grad16, double loss_scale);
  /// Fetches one bucket, descales its gradient slice, updates it and writes it
  /// back. Buckets must be processed in ascending order within a step.
  void step_bucket(int bucket, std::span<const double> grad16, const OptimizerConfig& cfg,
                   const ParamSink& refresh = {});
  void end_step();

 private:
  void record(ResidencyOp op, int bucket);

  OptimizerState host_;
  std::int64_t bucket_size_;
  int bucket_count_;
  std::vector<double> device_params_;
  std::vector<double> device_m_;
  std::vector<double> device_v_;
  std::vector<double> device_grad_;
  int resident_bucket_ = -1;
  int next_bucket_ = 0;
  bool in_step_ = false;
  double loss_scale_ = 1.0;
  std::int64_t device_bytes_ = 0;
  std::int64_t peak_device_bytes_ = 0;
  std::vector<ResidencyEvent> trace_;
};

/// Full optimizer step over all buckets in ascending order.
void bucketed_step(OffloadStore& store, std::span<const double> grad16, const OptimizerConfig& cfg,
                   const ParamSink& refresh = {});

}  // namespace hybridpipe
