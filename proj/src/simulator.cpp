#include "hybridpipe/simulator.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <queue>
#include <string>

#include "hybridpipe/errors.hpp"
#include "hybridpipe/half.hpp"
#include "hybridpipe/optimizer.hpp"

namespace hybridpipe {

std::string_view to_string(TimelineKind k) {
  switch (k) {
    case TimelineKind::Forward: return "forward";
    case TimelineKind::Backward: return "backward";
    case TimelineKind::Send: return "send";
    case TimelineKind::AllReduce: return "allreduce";
    case TimelineKind::Optimizer: return "optimizer";
  }
  return "forward";
}

ReduceOptimizeTiming simulate_reduce_optimize(std::int64_t params, int g_data, std::int64_t bucket_size, int k,
                                              bool overlap, std::int64_t grad_element_bytes, const CostModel& cost,
                                              std::vector<TimelineEvent>* timeline, int stage) {
  if (params <= 0 || g_data <= 0 || bucket_size <= 0 || k <= 0) {
    throw Error(ErrorCode::InvalidValue, "reduce/optimize inputs must be positive");
  }
  ReduceOptimizeTiming t;
  const auto p = static_cast<double>(g_data);
  auto allreduce_time = [&](std::int64_t elems) {
    if (g_data == 1) return 0.0;
    const double bytes = static_cast<double>(elems * grad_element_bytes);
    return cost.collective_call_overhead + 2.0 * (p - 1.0) * cost.collective_latency +
           2.0 * (p - 1.0) / p * bytes / cost.collective_bandwidth;
  };
  auto optimizer_time = [&](std::int64_t n) {
    const double moved = static_cast<double>(2 * n * (OffloadStore::kParamBytes + OffloadStore::kMomentBytes));
    return moved / cost.host_bandwidth + static_cast<double>(n) * cost.optimizer_flops_per_param / cost.device_flops;
  };
  const std::int64_t buckets = (params + bucket_size - 1) / bucket_size;
  const std::int64_t chunk = overlap ? static_cast<std::int64_t>(k) * bucket_size : params;

  double ar_end = 0.0;
  double opt_end = 0.0;
  std::int64_t bucket = 0;
  for (std::int64_t begin = 0, index = 0; begin < params; begin += chunk, ++index) {
    const std::int64_t end = std::min(begin + chunk, params);
    const double dt = allreduce_time(end - begin);
    if (g_data > 1) {
      ++t.calls;
      t.overhead += cost.collective_call_overhead;
      if (timeline) timeline->push_back({TimelineKind::AllReduce, stage, static_cast<int>(index), ar_end, ar_end + dt});
    }
    ar_end += dt;
    t.allreduce_busy += dt;
    if (!overlap) continue;
    for (; bucket < buckets && bucket * bucket_size < end; ++bucket) {
      const std::int64_t n = std::min(bucket_size, params - bucket * bucket_size);
      const double start = std::max(ar_end, opt_end);
      const double d = optimizer_time(n);
      if (timeline) timeline->push_back({TimelineKind::Optimizer, stage, static_cast<int>(bucket), start, start + d});
      opt_end = start + d;
      t.optimizer_busy += d;
    }
  }
  if (!overlap) {
    opt_end = ar_end;
    for (; bucket < buckets; ++bucket) {
      const std::int64_t n = std::min(bucket_size, params - bucket * bucket_size);
      const double d = optimizer_time(n);
      if (timeline) timeline->push_back({TimelineKind::Optimizer, stage, static_cast<int>(bucket), opt_end, opt_end + d});
      opt_end += d;
      t.optimizer_busy += d;
    }
  }
  t.total = std::max(ar_end, opt_end);
  return t;
}

namespace {

enum class EventType { Arrival, ComputeDone };
enum class Task { Forward, Backward, ForwardBackward };

struct Event {
  double time;
  std::uint64_t seq;
  EventType type;
  int stage;
  Task task;
  int microbatch;

  bool operator>(const Event& o) const { return time != o.time ? time > o.time : seq > o.seq; }
};

struct Inbound {
  Task task;
  int microbatch;
};

struct StageState {
  bool busy = false;
  std::deque<Inbound> inbox;
  double busy_time = 0.0;
  double first_start = -1.0;
  double finish = 0.0;
};

}  // namespace

PerfReport simulate_batch(const ValidatedRun& run, const CostModel& cost, const SimulationOptions& options) {
  const auto& cfg = run.config;
  const int g = cfg.parallel.g_inter;
  const int total = run.microbatches_per_shard;
  const std::int64_t samples = cfg.parallel.microbatch_size;
  const bool recompute = run.checkpoint_interval > 1;
  const std::int64_t message_bytes = samples * cfg.network.uniform_activation_bytes;

  std::vector<std::int64_t> fwd_flops(static_cast<std::size_t>(g), 0);
  for (int s = 0; s < g; ++s) {
    for (int l = s * run.layers_per_worker; l < (s + 1) * run.layers_per_worker; ++l) {
      fwd_flops[static_cast<std::size_t>(s)] += samples * forward_flops(cfg.network.layer_dims[static_cast<std::size_t>(l)]);
    }
  }
  auto fwd_time = [&](int s) { return static_cast<double>(fwd_flops[static_cast<std::size_t>(s)]) / cost.device_flops; };
  auto bwd_time = [&](int s) { return cost.backward_multiplier * fwd_time(s) + (recompute ? fwd_time(s) : 0.0); };

  PerfReport rep;
  rep.counters.p2p_bytes_per_stage.assign(static_cast<std::size_t>(g), 0);
  rep.counters.flops_per_stage.assign(static_cast<std::size_t>(g), 0);
  std::vector<StageState> stages(static_cast<std::size_t>(g));
  std::vector<double> link_free(2 * static_cast<std::size_t>(g), 0.0);  // [s*2 + 0] downstream, [s*2 + 1] upstream
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
  std::uint64_t seq = 0;
  int next_microbatch = 0;
  int warmup_left = std::min(run.pipeline_limit, total);
  int injections = 0;
  int completed = 0;

  auto send = [&](double now, int from, int to, Task task, int mb) {
    auto& free_at = link_free[static_cast<std::size_t>(from) * 2 + (to > from ? 0 : 1)];
    const double start = std::max(now, free_at);
    const double tx = static_cast<double>(message_bytes) / cost.link_bandwidth;
    free_at = start + tx;
    rep.counters.p2p_bytes_per_stage[static_cast<std::size_t>(from)] += message_bytes;
    ++rep.messages;
    if (options.record_timeline) rep.timeline.push_back({TimelineKind::Send, from, mb, start, start + tx + cost.link_latency});
    events.push({start + tx + cost.link_latency, seq++, EventType::Arrival, to, task, mb});
  };

  auto start_compute = [&](double now, int s, Task task, int mb) {
    auto& st = stages[static_cast<std::size_t>(s)];
    st.busy = true;
    if (st.first_start < 0) st.first_start = now;
    double duration = 0.0;
    auto& flops = rep.counters.flops_per_stage[static_cast<std::size_t>(s)];
    const auto f = fwd_flops[static_cast<std::size_t>(s)];
    if (task == Task::Forward || task == Task::ForwardBackward) {
      if (options.record_timeline) rep.timeline.push_back({TimelineKind::Forward, s, mb, now, now + fwd_time(s)});
      duration += fwd_time(s);
      flops += f;
    }
    if (task == Task::Backward || task == Task::ForwardBackward) {
      if (options.record_timeline) rep.timeline.push_back({TimelineKind::Backward, s, mb, now + duration, now + duration + bwd_time(s)});
      duration += bwd_time(s);
      flops += 2 * f + (recompute ? f : 0);
    }
    st.busy_time += duration;
    events.push({now + duration, seq++, EventType::ComputeDone, s, task, mb});
  };

  auto try_start = [&](double now, int s) {
    auto& st = stages[static_cast<std::size_t>(s)];
    if (st.busy) return;
    if (s == 0 && (warmup_left > 0 || injections > 0) && next_microbatch < total) {
      if (warmup_left > 0) {
        --warmup_left;
      } else {
        --injections;
      }
      start_compute(now, 0, g == 1 ? Task::ForwardBackward : Task::Forward, next_microbatch++);
      return;
    }
    if (st.inbox.empty()) return;
    const auto in = st.inbox.front();
    st.inbox.pop_front();
    start_compute(now, s, in.task, in.microbatch);
  };

  try_start(0.0, 0);
  while (!events.empty()) {
    const Event ev = events.top();
    events.pop();
    auto& st = stages[static_cast<std::size_t>(ev.stage)];
    if (ev.type == EventType::Arrival) {
      st.inbox.push_back({ev.task, ev.microbatch});
    } else {
      st.busy = false;
      st.finish = ev.time;
      if (ev.task == Task::Forward) {
        send(ev.time, ev.stage, ev.stage + 1, ev.stage + 1 == g - 1 ? Task::ForwardBackward : Task::Forward,
             ev.microbatch);
      } else if (ev.stage > 0) {
        send(ev.time, ev.stage, ev.stage - 1, Task::Backward, ev.microbatch);
      } else {
        ++completed;
        ++injections;
      }
    }
    try_start(ev.time, ev.stage);
  }
  if (completed != total) {
    throw Error(ErrorCode::Starvation, "simulated pipeline stalled after " + std::to_string(completed) + " of " +
                                           std::to_string(total) + " microbatches");
  }

  for (const auto& st : stages) rep.inter_layer_time = std::max(rep.inter_layer_time, st.finish);
  for (const auto& st : stages) {
    rep.busy.push_back(st.busy_time);
    rep.idle.push_back(rep.inter_layer_time - st.busy_time);
    rep.warmup_idle.push_back(std::max(st.first_start, 0.0));
  }
  auto& c = rep.counters;
  c.p2p_bytes_per_worker = *std::max_element(c.p2p_bytes_per_stage.begin(), c.p2p_bytes_per_stage.end());
  c.flops_per_worker = *std::max_element(c.flops_per_stage.begin(), c.flops_per_stage.end());
  c.ratio = c.p2p_bytes_per_worker > 0 ? Rational(c.flops_per_worker, c.p2p_bytes_per_worker) : Rational(0, 1);

  for (int s = 0; s < g; ++s) {
    const auto phi = cfg.network.parameter_count(s * run.layers_per_worker, run.layers_per_worker);
    const auto ro = simulate_reduce_optimize(phi, cfg.parallel.g_data, cfg.parallel.bucket_size, cfg.parallel.coarsening_k,
                                             options.overlap, element_bytes(cfg.precision), cost,
                                             options.record_timeline ? &rep.timeline : nullptr, s);
    const double end = stages[static_cast<std::size_t>(s)].finish + ro.total;
    if (options.record_timeline) {
      for (auto it = rep.timeline.end(); it != rep.timeline.begin();) {
        --it;
        if (it->stage != s || (it->kind != TimelineKind::AllReduce && it->kind != TimelineKind::Optimizer)) break;
        it->start += stages[static_cast<std::size_t>(s)].finish;
        it->end += stages[static_cast<std::size_t>(s)].finish;
      }
    }
    rep.batch_time = std::max(rep.batch_time, end);
    if (ro.total >= rep.reduce_optimize_time) {
      rep.reduce_optimize_time = ro.total;
      rep.allreduce_time = ro.allreduce_busy;
      rep.optimizer_time = ro.optimizer_busy;
      rep.allreduce_overhead_time = ro.overhead;
    }
    rep.allreduce_calls += ro.calls;
  }
  return rep;
}

}  // namespace hybridpipe
