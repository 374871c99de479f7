#include "hybridpipe/fabric.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "hybridpipe/errors.hpp"

namespace hybridpipe {

std::string to_string(WorkerId id) {
  return "(" + std::to_string(id.stage) + "," + std::to_string(id.replica) + ")";
}

std::string_view to_string(MessageKind k) {
  return k == MessageKind::ActivationForward ? "activation_forward" : "gradient_backward";
}

std::string_view to_string(TraceKind k) {
  switch (k) {
    case TraceKind::Send: return "send";
    case TraceKind::Deliver: return "deliver";
    case TraceKind::Collective: return "collective";
  }
  return "send";
}

Fabric::Fabric(int g_inter, int g_data, Precision precision, std::uint64_t seed)
    : g_inter_(g_inter),
      g_data_(g_data),
      precision_(precision),
      element_bytes_(hybridpipe::element_bytes(precision)),
      rng_(derive_seed(seed, 0xFAB)),
      pending_per_worker_(static_cast<std::size_t>(g_inter) * static_cast<std::size_t>(g_data), 0),
      stats_(pending_per_worker_.size()) {
  if (g_inter <= 0 || g_data <= 0) throw Error(ErrorCode::InvalidValue, "fabric grid must be non-empty");
}

void Fabric::push_trace(TraceRecord r) {
  if (!tracing_) return;
  r.sequence = sequence_++;
  trace_.push_back(r);
}

void Fabric::send(Message msg) {
  const auto in_grid = [this](WorkerId w) {
    return w.stage >= 0 && w.stage < g_inter_ && w.replica >= 0 && w.replica < g_data_;
  };
  if (!in_grid(msg.source) || !in_grid(msg.dest) || msg.source.replica != msg.dest.replica ||
      std::abs(msg.source.stage - msg.dest.stage) != 1) {
    throw Error(ErrorCode::InvalidRoute,
                "no link from " + to_string(msg.source) + " to " + to_string(msg.dest));
  }
  msg.byte_size = static_cast<std::int64_t>(msg.payload.size()) * element_bytes_;
  auto& src = stats_[index(msg.source)];
  src.p2p_bytes_sent += msg.byte_size;
  ++src.message_count;
  push_trace({0, TraceKind::Send, msg.source, msg.dest, msg.microbatch_id, msg.kind, msg.byte_size});
  ++pending_per_worker_[index(msg.dest)];
  ++in_flight_;
  links_[{msg.source, msg.dest}].push_back(std::move(msg));
}

std::optional<Message> Fabric::receive(WorkerId worker) {
  if (in_flight_ == 0) {
    throw Error(ErrorCode::Starvation, "worker " + to_string(worker) + " waits but nothing is in flight");
  }
  if (pending_per_worker_[index(worker)] == 0) return std::nullopt;
  std::deque<Message>* candidates[2];
  int count = 0;
  for (int neighbour : {worker.stage - 1, worker.stage + 1}) {
    if (neighbour < 0 || neighbour >= g_inter_) continue;
    auto it = links_.find({WorkerId{neighbour, worker.replica}, worker});
    if (it != links_.end() && !it->second.empty()) candidates[count++] = &it->second;
  }
  auto& queue = *candidates[count > 1 ? rng_.below(static_cast<std::uint64_t>(count)) : 0];
  Message msg = std::move(queue.front());
  queue.pop_front();
  --pending_per_worker_[index(worker)];
  --in_flight_;
  auto& dst = stats_[index(worker)];
  dst.p2p_bytes_received += msg.byte_size;
  push_trace({0, TraceKind::Deliver, msg.source, msg.dest, msg.microbatch_id, msg.kind, msg.byte_size});
  return msg;
}

Message Fabric::deliver_next() {
  if (in_flight_ == 0) throw Error(ErrorCode::Starvation, "no message in flight");
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < pending_per_worker_.size(); ++i) {
    if (pending_per_worker_[i] > 0) ready.push_back(i);
  }
  const std::size_t pick = ready.size() > 1 ? ready[rng_.below(ready.size())] : ready.front();
  const WorkerId w{static_cast<int>(pick % static_cast<std::size_t>(g_inter_)),
                   static_cast<int>(pick / static_cast<std::size_t>(g_inter_))};
  return *receive(w);
}

bool Fabric::has_pending(WorkerId worker) const { return pending_per_worker_[index(worker)] > 0; }

std::string Fabric::describe_in_flight() const {
  std::ostringstream os;
  os << in_flight_ << " message(s) in flight";
  for (const auto& [link, queue] : links_) {
    if (queue.empty()) continue;
    os << "; " << to_string(link.first) << "->" << to_string(link.second) << ": " << queue.size();
  }
  return os.str();
}

void Fabric::check_group(std::span<const WorkerId> group, std::span<const std::span<double>> buffers) const {
  if (group.size() != buffers.size() || group.empty()) {
    throw Error(ErrorCode::LengthMismatch, "all-reduce group and buffer counts differ");
  }
  for (const auto& b : buffers) {
    if (b.size() != buffers.front().size()) {
      throw Error(ErrorCode::LengthMismatch, "all-reduce buffers differ in length");
    }
  }
}

void Fabric::reduce_range(std::span<const WorkerId> group, std::span<const std::span<double>> buffers,
                          std::int64_t begin, std::int64_t end) {
  std::vector<std::size_t> order(group.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return group[a] < group[b]; });
  const auto p = static_cast<double>(group.size());
  for (auto k = static_cast<std::size_t>(begin); k < static_cast<std::size_t>(end); ++k) {
    double acc = buffers[order[0]][k];
    for (std::size_t r = 1; r < order.size(); ++r) acc += buffers[order[r]][k];
    acc = apply_precision(precision_, acc);
    for (const auto& b : buffers) b[k] = acc;
  }
  const double bytes = static_cast<double>((end - begin) * element_bytes_);
  for (const auto& w : group) stats_[index(w)].allreduce_bytes += 2.0 * (p - 1.0) / p * bytes;
  TraceRecord r{0, TraceKind::Collective, group.front(), group.back(), -1, MessageKind::GradientBackward,
                (end - begin) * element_bytes_};
  r.group_size = static_cast<int>(group.size());
  r.begin = begin;
  r.end = end;
  push_trace(r);
}

void Fabric::all_reduce(std::span<const WorkerId> group, std::span<const std::span<double>> buffers) {
  check_group(group, buffers);
  reduce_range(group, buffers, 0, static_cast<std::int64_t>(buffers.front().size()));
}

std::vector<ChunkCompletion> Fabric::all_reduce_chunked(std::span<const WorkerId> group,
                                                        std::span<const std::span<double>> buffers,
                                                        std::int64_t chunk_elems,
                                                        const std::function<void(const ChunkCompletion&)>& on_chunk) {
  if (chunk_elems < 1) throw Error(ErrorCode::InvalidValue, "chunk_elems must be >= 1");
  check_group(group, buffers);
  const auto n = static_cast<std::int64_t>(buffers.front().size());
  std::vector<ChunkCompletion> done;
  for (std::int64_t begin = 0; begin < n || (n == 0 && done.empty()); begin += chunk_elems) {
    const ChunkCompletion c{static_cast<int>(done.size()), begin, std::min(begin + chunk_elems, n)};
    reduce_range(group, buffers, c.begin, c.end);
    done.push_back(c);
    if (on_chunk) on_chunk(c);
    if (n == 0) break;
  }
  return done;
}

const CommStats& Fabric::stats(WorkerId worker) const { return stats_.at(index(worker)); }

CommStats Fabric::total_stats() const {
  CommStats t;
  for (const auto& s : stats_) {
    t.p2p_bytes_sent += s.p2p_bytes_sent;
    t.p2p_bytes_received += s.p2p_bytes_received;
    t.allreduce_bytes += s.allreduce_bytes;
    t.message_count += s.message_count;
  }
  return t;
}

void Fabric::write_trace(std::ostream& os) const {
  for (const auto& r : trace_) {
    nlohmann::ordered_json j;
    j["seq"] = r.sequence;
    j["event"] = to_string(r.kind);
    if (r.kind == TraceKind::Collective) {
      j["stage"] = r.source.stage;
      j["group_size"] = r.group_size;
      j["begin"] = r.begin;
      j["end"] = r.end;
    } else {
      j["source"] = {r.source.stage, r.source.replica};
      j["dest"] = {r.dest.stage, r.dest.replica};
      j["microbatch"] = r.microbatch_id;
      j["kind"] = to_string(r.message_kind);
    }
    j["bytes"] = r.bytes;
    os << j.dump() << '\n';
  }
}

}  // namespace hybridpipe
