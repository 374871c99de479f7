#include "hybridpipe/engine.hpp"

#include <algorithm>
#include <cmath>

namespace hybridpipe {

std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Forward: return "forward";
    case ScheduleKind::Backward: return "backward";
    case ScheduleKind::Drain: return "drain";
    case ScheduleKind::AllReduceChunk: return "allreduce_chunk";
    case ScheduleKind::OptimizerBucket: return "optimizer_bucket";
  }
  return "forward";
}

HybridTrainer::HybridTrainer(ValidatedRun run, std::span<const double> initial_params) : run_(std::move(run)) {
  const auto& cfg = run_.config;
  const auto& net = cfg.network;
  if (static_cast<std::int64_t>(initial_params.size()) != net.parameter_count_total()) {
    throw Error(ErrorCode::LengthMismatch, "initial parameters do not match the network");
  }
  const int g_inter = cfg.parallel.g_inter;
  const int g_data = cfg.parallel.g_data;
  fabric_ = std::make_unique<Fabric>(g_inter, g_data, cfg.precision, cfg.fabric_seed);
  const int depth = run_.layers_per_worker;
  for (int r = 0; r < g_data; ++r) {
    for (int s = 0; s < g_inter; ++s) {
      const auto offset = static_cast<std::size_t>(parameter_offset(net, s * depth));
      const auto count = static_cast<std::size_t>(net.parameter_count(s * depth, depth));
      const auto slice = initial_params.subspan(offset, count);
      workers_.push_back(std::make_unique<WorkerState>(WorkerState{
          WorkerId{s, r},
          NetworkShard(net, s * depth, depth, slice, cfg.precision, run_.checkpoint_interval),
          OffloadStore(OptimizerState::from_parameters(slice), cfg.parallel.bucket_size),
          {}}));
    }
  }
  microbatches_.resize(static_cast<std::size_t>(g_data));
  in_flight_.assign(static_cast<std::size_t>(g_data), 0);
  completed_.assign(static_cast<std::size_t>(g_data), 0);
  loss_scale_ = cfg.optimizer.loss_scale;
}

void HybridTrainer::record(ScheduleKind kind, WorkerId w, int idx) {
  schedule_.push_back({kind, w, idx, in_flight_[static_cast<std::size_t>(w.replica)]});
}

void HybridTrainer::begin_pipeline(int replica, const DataBatch& shard) {
  const auto r = static_cast<std::size_t>(replica);
  const auto mb = static_cast<std::size_t>(run_.config.parallel.microbatch_size);
  auto& slices = microbatches_[r];
  slices.clear();
  for (std::size_t begin = 0; begin < shard.samples(); begin += mb) slices.push_back(shard.slice(begin, mb));
  for (int s = 0; s < run_.config.parallel.g_inter; ++s) state({s, replica}).shard.begin_batch();
  auto& queue = state({0, replica}).microbatch_queue;
  queue.clear();
  for (int id = 0; id < static_cast<int>(slices.size()); ++id) queue.push_back(id);
  in_flight_[r] = 0;
  completed_[r] = 0;
}

void HybridTrainer::inject(int replica) {
  auto& w = state({0, replica});
  if (w.microbatch_queue.empty()) return;
  const int mb = w.microbatch_queue.front();
  w.microbatch_queue.pop_front();
  auto& active = in_flight_[static_cast<std::size_t>(replica)];
  ++active;
  max_in_flight_ = std::max(max_in_flight_, active);
  forward_and_dispatch(w, microbatches_[static_cast<std::size_t>(replica)][static_cast<std::size_t>(mb)].inputs, mb);
}

void HybridTrainer::forward_and_dispatch(WorkerState& w, const Matrix& input, int microbatch) {
  Matrix out = w.shard.forward(input, microbatch);
  ++w.forwards;
  record(ScheduleKind::Forward, w.id, microbatch);
  const auto& cfg = run_.config;
  if (w.id.stage == cfg.parallel.g_inter - 1) {
    const auto& targets =
        microbatches_[static_cast<std::size_t>(w.id.replica)][static_cast<std::size_t>(microbatch)].targets;
    auto loss = loss_and_grad(out, targets, cfg.network.loss, run_.total_microbatches, loss_scale_, cfg.precision);
    microbatch_loss_[{w.id.replica, microbatch}] = loss.loss;
    backward_and_dispatch(w, loss.grad, microbatch);
  } else {
    fabric_->send({w.id, WorkerId{w.id.stage + 1, w.id.replica}, microbatch, MessageKind::ActivationForward,
                   std::move(out), 0});
  }
}

void HybridTrainer::backward_and_dispatch(WorkerState& w, const Matrix& grad, int microbatch) {
  Matrix input_grad = w.shard.backward(microbatch, grad);
  ++w.backwards;
  if (w.id.stage == 0) {
    const auto r = static_cast<std::size_t>(w.id.replica);
    --in_flight_[r];
    ++completed_[r];
    record(ScheduleKind::Backward, w.id, microbatch);
    injection_requests_.push_back(w.id.replica);
  } else {
    record(ScheduleKind::Backward, w.id, microbatch);
    fabric_->send({w.id, WorkerId{w.id.stage - 1, w.id.replica}, microbatch, MessageKind::GradientBackward,
                   std::move(input_grad), 0});
  }
}

void HybridTrainer::handle(const Message& msg) {
  auto& w = state(msg.dest);
  if (msg.source.stage == msg.dest.stage - 1) {
    forward_and_dispatch(w, msg.payload, msg.microbatch_id);
  } else {
    backward_and_dispatch(w, msg.payload, msg.microbatch_id);
  }
}

bool HybridTrainer::pipelines_busy() const {
  for (std::size_t r = 0; r < completed_.size(); ++r) {
    if (completed_[r] < static_cast<int>(microbatches_[r].size())) return true;
  }
  return false;
}

double HybridTrainer::inter_layer_parallel_phase(const DataBatch& batch) {
  const int g_data = run_.config.parallel.g_data;
  const auto shard_size = static_cast<std::size_t>(run_.shard_size);
  if (batch.samples() != static_cast<std::size_t>(run_.config.batch.batch_size)) {
    throw Error(ErrorCode::ShapeMismatch, "batch has " + std::to_string(batch.samples()) + " samples, expected " +
                                              std::to_string(run_.config.batch.batch_size));
  }
  microbatch_loss_.clear();
  for (int r = 0; r < g_data; ++r) begin_pipeline(r, batch.slice(static_cast<std::size_t>(r) * shard_size, shard_size));

  // Warmup: stage 0 of every pipeline injects pipeline_limit microbatches.
  for (int r = 0; r < g_data; ++r) {
    for (int k = 0; k < run_.pipeline_limit; ++k) inject(r);
  }
  auto run_injections = [this] {
    while (!injection_requests_.empty()) {
      const int r = injection_requests_.back();
      injection_requests_.pop_back();
      inject(r);
    }
  };
  run_injections();
  while (pipelines_busy()) {
    if (fabric_->in_flight() == 0) {
      std::string state = "pipelines stalled:";
      for (int r = 0; r < g_data; ++r) {
        state += " replica " + std::to_string(r) + " completed " + std::to_string(completed_[static_cast<std::size_t>(r)]) +
                 "/" + std::to_string(microbatches_[static_cast<std::size_t>(r)].size()) + ", in flight " +
                 std::to_string(in_flight_[static_cast<std::size_t>(r)]) + ";";
      }
      throw Error(ErrorCode::Starvation, state + " " + fabric_->describe_in_flight());
    }
    handle(fabric_->deliver_next());
    run_injections();
  }

  for (auto& w : workers_) {
    w->shard.drain();
    record(ScheduleKind::Drain, w->id, 0);
  }
  double total = 0.0;
  for (const auto& [key, loss] : microbatch_loss_) total += loss;
  return total;
}

double HybridTrainer::inter_layer_parallel_step(int replica, const DataBatch& shard) {
  if (replica < 0 || replica >= run_.config.parallel.g_data) throw Error(ErrorCode::InvalidValue, "replica out of range");
  if (shard.samples() != static_cast<std::size_t>(run_.shard_size)) {
    throw Error(ErrorCode::ShapeMismatch, "batch shard has " + std::to_string(shard.samples()) +
                                              " samples, expected " + std::to_string(run_.shard_size));
  }
  microbatch_loss_.clear();
  for (auto& c : completed_) c = 0;
  for (auto& m : microbatches_) m.clear();
  begin_pipeline(replica, shard);
  for (int k = 0; k < run_.pipeline_limit; ++k) inject(replica);
  while (true) {
    while (!injection_requests_.empty()) {
      injection_requests_.pop_back();
      inject(replica);
    }
    if (!pipelines_busy()) break;
    if (fabric_->in_flight() == 0) throw Error(ErrorCode::Starvation, "pipeline stalled: " + fabric_->describe_in_flight());
    handle(fabric_->deliver_next());
  }
  double total = 0.0;
  for (int s = 0; s < run_.config.parallel.g_inter; ++s) {
    auto& w = state({s, replica});
    w.shard.drain();
    record(ScheduleKind::Drain, w.id, 0);
  }
  for (const auto& [key, loss] : microbatch_loss_) total += loss;
  return total;
}

void HybridTrainer::data_parallel_step() {
  const auto& p = run_.config.parallel;
  for (int s = 0; s < p.g_inter; ++s) {
    std::vector<WorkerId> group;
    std::vector<std::span<double>> buffers;
    for (int r = 0; r < p.g_data; ++r) {
      group.push_back({s, r});
      buffers.push_back(state({s, r}).shard.grad_accumulator());
    }
    fabric_->all_reduce(group, buffers);
    record(ScheduleKind::AllReduceChunk, group.front(), 0);
  }
}

bool HybridTrainer::any_nonfinite_gradient() const {
  return std::any_of(workers_.begin(), workers_.end(), [this](const auto& w) {
    return first_nonfinite(w->shard.grad_accumulator(), loss_scale_) >= 0;
  });
}

ParamSink HybridTrainer::refresh_for(WorkerState& w) {
  return [&w](std::int64_t offset, std::span<const double> values) { w.shard.load_parameters(offset, values); };
}

bool HybridTrainer::optimize() {
  if (any_nonfinite_gradient()) return false;
  OptimizerConfig cfg = run_.config.optimizer;
  cfg.loss_scale = loss_scale_;
  for (auto& w : workers_) {
    auto& store = w->store;
    const auto grad = w->shard.grad_accumulator();
    store.begin_step(grad, cfg.loss_scale);
    const auto sink = refresh_for(*w);
    for (int b = 0; b < store.bucket_count(); ++b) {
      store.step_bucket(b, grad, cfg, sink);
      record(ScheduleKind::OptimizerBucket, w->id, b);
    }
    store.end_step();
  }
  return true;
}

bool HybridTrainer::overlapped_reduce_and_optimize() {
  if (any_nonfinite_gradient()) return false;
  const auto& p = run_.config.parallel;
  OptimizerConfig cfg = run_.config.optimizer;
  cfg.loss_scale = loss_scale_;
  const std::int64_t chunk = static_cast<std::int64_t>(p.coarsening_k) * p.bucket_size;
  for (int s = 0; s < p.g_inter; ++s) {
    std::vector<WorkerId> group;
    std::vector<std::span<double>> buffers;
    for (int r = 0; r < p.g_data; ++r) {
      auto& w = state({s, r});
      group.push_back(w.id);
      buffers.push_back(w.shard.grad_accumulator());
      w.store.begin_step(w.shard.grad_accumulator(), cfg.loss_scale);
    }
    fabric_->all_reduce_chunked(group, buffers, chunk, [&](const ChunkCompletion& c) {
      record(ScheduleKind::AllReduceChunk, group.front(), c.index);
      const auto first = static_cast<int>(c.begin / p.bucket_size);
      const auto last = static_cast<int>((c.end + p.bucket_size - 1) / p.bucket_size);
      for (const auto& id : group) {
        auto& w = state(id);
        const auto sink = refresh_for(w);
        for (int b = first; b < last; ++b) {
          w.store.step_bucket(b, w.shard.grad_accumulator(), cfg, sink);
          record(ScheduleKind::OptimizerBucket, id, b);
        }
      }
    });
    for (const auto& id : group) state(id).store.end_step();
  }
  return true;
}

BatchResult HybridTrainer::train_step(const DataBatch& batch) {
  BatchResult result;
  result.schedule_begin = schedule_.size();
  result.loss_scale = loss_scale_;
  const double scaled_loss = inter_layer_parallel_phase(batch);
  bool applied;
  if (overlap_) {
    applied = overlapped_reduce_and_optimize();
    result.grads_reduced = applied;
  } else {
    data_parallel_step();
    result.grads_reduced = true;
    applied = optimize();
  }
  result.loss = scaled_loss / result.loss_scale;
  result.skipped = !applied;
  if (!applied && run_.config.optimizer.dynamic_loss_scale) loss_scale_ /= 2.0;
  result.schedule_end = schedule_.size();
  return result;
}

std::vector<StepRecord> HybridTrainer::train(const SyntheticData& data, std::int64_t steps) {
  std::vector<StepRecord> log;
  for (std::int64_t step = 0; step < steps; ++step) {
    const auto r = train_step(data.batch(step));
    log.push_back({step, r.loss, r.skipped, r.loss_scale});
  }
  return log;
}

std::vector<double> HybridTrainer::parameters(int replica) const {
  std::vector<double> out;
  for (int s = 0; s < run_.config.parallel.g_inter; ++s) {
    const auto& p = worker({s, replica}).store.host_state().master_params;
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<double> HybridTrainer::gradients(int replica) const {
  std::vector<double> out;
  for (int s = 0; s < run_.config.parallel.g_inter; ++s) {
    const auto g = worker({s, replica}).shard.grad_accumulator();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

int HybridTrainer::peak_activation_units() const {
  int peak = 0;
  for (const auto& w : workers_) peak = std::max(peak, w->shard.peak_activation_units());
  return peak;
}

std::int64_t HybridTrainer::peak_optimizer_device_bytes() const {
  std::int64_t peak = 0;
  for (const auto& w : workers_) peak = std::max(peak, w->store.peak_device_bytes());
  return peak;
}

}  // namespace hybridpipe
