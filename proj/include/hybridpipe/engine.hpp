#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "hybridpipe/config.hpp"
#include "hybridpipe/data.hpp"
#include "hybridpipe/fabric.hpp"
#include "hybridpipe/nn.hpp"
#include "hybridpipe/optimizer.hpp"

namespace hybridpipe {

enum class ScheduleKind { Forward, Backward, Drain, AllReduceChunk, OptimizerBucket };

struct ScheduleEvent {
  ScheduleKind kind;
  WorkerId worker;
  /// Microbatch for Forward/Backward, chunk or bucket index otherwise.
  int index;
  /// Microbatches active in the worker's pipeline right after the event.
  int pipeline_in_flight;
};

std::string_view to_string(ScheduleKind k);

/// State owned by one grid worker.
struct WorkerState {
  WorkerId id;
  NetworkShard shard;
  OffloadStore store;
  /// Microbatches not yet injected; only stage 0 uses it.
  std::deque<int> microbatch_queue;
  std::int64_t forwards = 0;
  std::int64_t backwards = 0;
};

struct BatchResult {
  /// Batch-mean loss with the loss scale divided out.
  double loss = 0.0;
  bool grads_reduced = false;
  /// Set when the optimizer skipped the step for non-finite gradients.
  bool skipped = false;
  double loss_scale = 1.0;
  /// Range of this batch's events in HybridTrainer::schedule().
  std::size_t schedule_begin = 0;
  std::size_t schedule_end = 0;
};

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  bool skipped = false;
  double loss_scale = 1.0;
};

/// Hybrid inter-layer x data parallel trainer over a simulated fabric. A
/// single driver delivers messages in the fabric's seeded order; each worker
/// reacts to whatever arrives, so numerics never depend on that order.
class HybridTrainer {
 public:
  HybridTrainer(ValidatedRun run, std::span<const double> initial_params);

  const ValidatedRun& run() const { return run_; }
  Fabric& fabric() { return *fabric_; }
  const Fabric& fabric() const { return *fabric_; }
  const WorkerState& worker(WorkerId id) const { return *workers_.at(index(id)); }

  /// One training step: shard the batch over replicas, pipeline every shard,
  /// reduce gradients and run the optimizer.
  BatchResult train_step(const DataBatch& batch);
  std::vector<StepRecord> train(const SyntheticData& data, std::int64_t steps);

  /// Pipelines one replica's batch shard through its stages. Gradients are
  /// left drained in each shard's accumulator. Returns the replica's summed
  /// (pre-divided, scaled) loss.
  double inter_layer_parallel_step(int replica, const DataBatch& shard);
  /// All replicas' pipelines, interleaved on the shared fabric.
  double inter_layer_parallel_phase(const DataBatch& batch);
  /// Sums each stage's gradient accumulators across replicas.
  void data_parallel_step();
  /// Chunked all-reduce of k buckets at a time, each chunk immediately
  /// followed by the optimizer on its buckets. Returns false when the step was
  /// skipped for non-finite gradients.
  bool overlapped_reduce_and_optimize();
  /// Optimizer over already-reduced gradients. Returns false when skipped.
  bool optimize();

  /// Master parameters of one replica in network order.
  std::vector<double> parameters(int replica = 0) const;
  /// Current gradient accumulators of one replica in network order.
  std::vector<double> gradients(int replica = 0) const;

  const std::vector<ScheduleEvent>& schedule() const { return schedule_; }
  void clear_schedule() { schedule_.clear(); }
  /// Largest pipeline in-flight count observed so far.
  int max_in_flight() const { return max_in_flight_; }
  /// Largest live activation-unit count of any worker since construction.
  int peak_activation_units() const;
  std::int64_t peak_optimizer_device_bytes() const;

  /// Use the chunked, overlapped reduce + optimizer path (default) or a full
  /// all-reduce followed by the optimizer.
  void set_overlap(bool on) { overlap_ = on; }
  double loss_scale() const { return loss_scale_; }

 private:
  std::size_t index(WorkerId id) const {
    return static_cast<std::size_t>(id.replica) * static_cast<std::size_t>(run_.config.parallel.g_inter) +
           static_cast<std::size_t>(id.stage);
  }
  WorkerState& state(WorkerId id) { return *workers_[index(id)]; }
  void record(ScheduleKind kind, WorkerId w, int idx);
  void begin_pipeline(int replica, const DataBatch& shard);
  void inject(int replica);
  void handle(const Message& msg);
  void forward_and_dispatch(WorkerState& w, const Matrix& input, int microbatch);
  void backward_and_dispatch(WorkerState& w, const Matrix& grad, int microbatch);
  bool pipelines_busy() const;
  bool any_nonfinite_gradient() const;
  ParamSink refresh_for(WorkerState& w);

  ValidatedRun run_;
  std::unique_ptr<Fabric> fabric_;
  std::vector<std::unique_ptr<WorkerState>> workers_;
  // Per replica: microbatch inputs/targets of the current batch shard.
  std::vector<std::vector<DataBatch>> microbatches_;
  std::vector<int> in_flight_;
  std::vector<int> completed_;
  std::vector<int> injection_requests_;
  std::map<std::pair<int, int>, double> microbatch_loss_;
  std::vector<ScheduleEvent> schedule_;
  int max_in_flight_ = 0;
  bool overlap_ = true;
  double loss_scale_ = 1.0;
};

}  // namespace hybridpipe
