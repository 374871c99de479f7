#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "hybridpipe/analytics.hpp"
#include "hybridpipe/config.hpp"
#include "hybridpipe/cost_model.hpp"

namespace hybridpipe {

enum class TimelineKind { Forward, Backward, Send, AllReduce, Optimizer };
std::string_view to_string(TimelineKind k);

struct TimelineEvent {
  TimelineKind kind;
  int stage;
  /// Microbatch for compute/send events; chunk or bucket index otherwise.
  int index;
  double start;
  double end;
};

struct SimulationOptions {
  /// Chunked all-reduce overlapped with the optimizer (coarsening_k buckets
  /// per chunk). Off: one all-reduce call, then the optimizer.
  bool overlap = true;
  bool record_timeline = false;
};

/// Simulated timing of one batch for one pipeline; all replicas behave
/// identically, so a single replica is simulated and the collective phase is
/// costed for the full column.
struct PerfReport {
  /// Whole batch: inter-layer phase followed by all-reduce + optimizer.
  double batch_time = 0.0;
  /// Makespan of the message-driven pipeline phase.
  double inter_layer_time = 0.0;
  /// Combined all-reduce + optimizer phase of the slowest stage.
  double reduce_optimize_time = 0.0;
  /// All-reduce and optimizer stream busy time of the slowest stage.
  double allreduce_time = 0.0;
  double optimizer_time = 0.0;
  /// Per stage, over the inter-layer phase: busy + idle = inter_layer_time.
  std::vector<double> busy;
  std::vector<double> idle;
  /// Warmup idle: time before each stage's first compute.
  std::vector<double> warmup_idle;
  CommCompCounters counters;
  std::int64_t messages = 0;
  std::int64_t allreduce_calls = 0;
  /// Fixed per-call collective overhead included in reduce_optimize_time.
  double allreduce_overhead_time = 0.0;
  std::vector<TimelineEvent> timeline;
};

/// Discrete-event simulation of one batch: forward/backward compute per
/// (stage, microbatch) under message-driven dispatch, point-to-point messages
/// with latency and serialized link bandwidth, ring all-reduce with per-call
/// overhead, and bucketed offload optimizer steps on a second stream.
PerfReport simulate_batch(const ValidatedRun& run, const CostModel& cost, const SimulationOptions& options = {});

/// Just the all-reduce + optimizer phase for `params` parameters of one stage.
struct ReduceOptimizeTiming {
  double total = 0.0;
  double allreduce_busy = 0.0;
  double optimizer_busy = 0.0;
  double overhead = 0.0;
  std::int64_t calls = 0;
};
ReduceOptimizeTiming simulate_reduce_optimize(std::int64_t params, int g_data, std::int64_t bucket_size, int k,
                                              bool overlap, std::int64_t grad_element_bytes, const CostModel& cost,
                                              std::vector<TimelineEvent>* timeline = nullptr, int stage = 0);

}  // namespace hybridpipe
