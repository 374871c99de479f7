#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "hybridpipe/config.hpp"
#include "hybridpipe/half.hpp"
#include "hybridpipe/matrix.hpp"

namespace hybridpipe {

/// Rows are samples.
struct DataBatch {
  Matrix inputs;
  Matrix targets;

  std::size_t samples() const { return inputs.rows(); }
  DataBatch slice(std::size_t begin, std::size_t count) const {
    return {inputs.slice_rows(begin, count), targets.slice_rows(begin, count)};
  }
};

/// Seeded initial parameters for the whole network, flattened layer by layer
/// as [weights (out x in, row-major), bias (out)].
std::vector<double> init_parameters(const NetworkSpec& spec, std::uint64_t seed);

/// Offset of layer `layer`'s first parameter in the flattened layout.
std::int64_t parameter_offset(const NetworkSpec& spec, int layer);

double activate(Activation a, double z);
/// Derivative of the activation expressed through its input z and output y.
double activate_grad(Activation a, double z, double y);

struct LossResult {
  double loss = 0.0;
  Matrix grad;
};

/// Loss of one microbatch, pre-divided by the batch's microbatch count and
/// multiplied by the loss scale, with its gradient w.r.t. `pred`. The gradient
/// is rounded to the working precision.
LossResult loss_and_grad(const Matrix& pred, const Matrix& targets, LossKind kind, int total_microbatches,
                         double loss_scale, Precision precision = Precision::Double);

/// Contiguous slice of layers owned by one pipeline stage. Holds the
/// reduced-precision parameter copy used for compute, per-microbatch
/// checkpoint stashes and gradient buffers. Master parameters live with the
/// optimizer.
class NetworkShard {
 public:
  NetworkShard(const NetworkSpec& spec, int first_layer, int layer_count, std::span<const double> master_params,
               Precision precision, int checkpoint_interval);

  int first_layer() const { return first_layer_; }
  int layer_count() const { return static_cast<int>(dims_.size()); }
  int checkpoint_interval() const { return ckpt_; }
  void set_checkpoint_interval(int ac);
  std::int64_t parameter_count() const { return static_cast<std::int64_t>(params16_.size()); }
  int input_width() const { return dims_.front().in; }
  int output_width() const { return dims_.back().out; }
  Precision precision() const { return precision_; }

  /// Refreshes the compute copy from full-precision master parameters.
  void load_parameters(std::span<const double> master_params);
  void load_parameters(std::int64_t offset, std::span<const double> master_slice);
  std::span<const double> parameters() const { return params16_; }

  /// Runs the shard's layers on `input`. Stashes the input of every layer
  /// whose shard-relative index is a multiple of the checkpoint interval.
  Matrix forward(const Matrix& input, int microbatch_id);

  /// Recomputes each checkpoint segment from its stash entry, computes the
  /// microbatch's parameter gradients and returns the gradient w.r.t. the
  /// shard input. Releases the microbatch's stash entries.
  Matrix backward(int microbatch_id, const Matrix& output_grad);

  /// Clears per-batch gradient state.
  void begin_batch();
  /// Sums pending per-microbatch gradients into the accumulator in ascending
  /// microbatch-id order, rounding the sum to the working precision.
  void drain();
  std::span<const double> grad_accumulator() const { return grad_acc_; }
  std::span<double> grad_accumulator() { return grad_acc_; }
  std::size_t pending_microbatches() const { return pending_grads_.size(); }

  /// Layer indices (shard-relative) stashed for a microbatch.
  std::vector<int> stashed_layers(int microbatch_id) const;
  std::size_t stash_entries() const { return stash_.size(); }
  /// Largest number of live activation units (stash entries plus working
  /// activations) seen since construction or the last reset.
  int peak_activation_units() const { return peak_units_; }
  void reset_peak_activation_units() { peak_units_ = static_cast<int>(stash_.size()); }

 private:
  void note_units(int working);
  std::int64_t layer_offset(int local) const { return offsets_[static_cast<std::size_t>(local)]; }
  /// Runs layer `local` on x; returns (pre-activation, output).
  std::pair<Matrix, Matrix> layer_forward(int local, const Matrix& x) const;

  std::vector<LayerDim> dims_;
  std::vector<std::int64_t> offsets_;
  std::vector<Activation> activations_;
  int first_layer_;
  int ckpt_;
  Precision precision_;
  std::vector<double> params16_;
  std::map<std::pair<int, int>, Matrix> stash_;
  std::map<int, std::vector<double>> pending_grads_;
  std::vector<double> grad_acc_;
  int peak_units_ = 0;
};

}  // namespace hybridpipe
