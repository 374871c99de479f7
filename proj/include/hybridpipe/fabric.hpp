#pragma once

#include <compare>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hybridpipe/half.hpp"
#include "hybridpipe/matrix.hpp"
#include "hybridpipe/random.hpp"

namespace hybridpipe {

/// Position in the worker grid: `stage` indexes the pipeline (0 .. g_inter-1),
/// `replica` the data-parallel group (0 .. g_data-1).
struct WorkerId {
  int stage = 0;
  int replica = 0;

  friend auto operator<=>(const WorkerId&, const WorkerId&) = default;
};

std::string to_string(WorkerId id);

enum class MessageKind { ActivationForward, GradientBackward };

struct Message {
  WorkerId source;
  WorkerId dest;
  int microbatch_id = 0;
  MessageKind kind = MessageKind::ActivationForward;
  Matrix payload;
  std::int64_t byte_size = 0;
};

struct CommStats {
  std::int64_t p2p_bytes_sent = 0;
  std::int64_t p2p_bytes_received = 0;
  /// Ring-model traffic: 2 (p-1)/p times the reduced bytes, per call.
  double allreduce_bytes = 0.0;
  std::int64_t message_count = 0;
};

enum class TraceKind { Send, Deliver, Collective };

struct TraceRecord {
  std::uint64_t sequence;
  TraceKind kind;
  WorkerId source;
  WorkerId dest;
  int microbatch_id;
  MessageKind message_kind;
  std::int64_t bytes;
  /// Collective records: group size and element range.
  int group_size = 0;
  std::int64_t begin = 0;
  std::int64_t end = 0;
};

struct ChunkCompletion {
  int index;
  std::int64_t begin;
  std::int64_t end;
};

/// Simulated interconnect for a g_inter x g_data grid. Point-to-point links
/// are FIFO; which non-empty link delivers next is drawn from a seeded
/// generator. Collectives reduce in ascending replica order, so their results
/// never depend on the seed.
class Fabric {
 public:
  Fabric(int g_inter, int g_data, Precision precision, std::uint64_t seed);

  int g_inter() const { return g_inter_; }
  int g_data() const { return g_data_; }

  /// Enqueues without blocking. Throws InvalidRoute unless source and dest
  /// are pipeline neighbours in the same replica.
  void send(Message msg);

  /// Next deliverable message for `worker` under the seeded interleaving, or
  /// nullopt when none is pending for it. Throws Starvation when nothing is
  /// in flight anywhere in the fabric.
  std::optional<Message> receive(WorkerId worker);

  /// Seeded choice of a worker with a pending message, then receive().
  /// Throws Starvation when the fabric is empty.
  Message deliver_next();

  bool has_pending(WorkerId worker) const;
  std::size_t in_flight() const { return in_flight_; }
  std::string describe_in_flight() const;

  /// Replaces every member buffer with the elementwise sum (ascending replica
  /// order), rounded to the fabric's precision. `group` and `buffers` align.
  void all_reduce(std::span<const WorkerId> group, std::span<const std::span<double>> buffers);

  /// Same result as all_reduce, issued as ceil(n / chunk_elems) calls over
  /// consecutive chunks. `on_chunk` runs as each chunk completes, in
  /// ascending order.
  std::vector<ChunkCompletion> all_reduce_chunked(std::span<const WorkerId> group,
                                                  std::span<const std::span<double>> buffers,
                                                  std::int64_t chunk_elems,
                                                  const std::function<void(const ChunkCompletion&)>& on_chunk = {});

  const CommStats& stats(WorkerId worker) const;
  CommStats total_stats() const;
  std::int64_t element_bytes() const { return element_bytes_; }

  const std::vector<TraceRecord>& trace() const { return trace_; }
  void set_tracing(bool on) { tracing_ = on; }
  /// One JSON object per line.
  void write_trace(std::ostream& os) const;

 private:
  using Link = std::pair<WorkerId, WorkerId>;

  std::size_t index(WorkerId w) const {
    return static_cast<std::size_t>(w.replica) * static_cast<std::size_t>(g_inter_) +
           static_cast<std::size_t>(w.stage);
  }
  void reduce_range(std::span<const WorkerId> group, std::span<const std::span<double>> buffers,
                    std::int64_t begin, std::int64_t end);
  void check_group(std::span<const WorkerId> group, std::span<const std::span<double>> buffers) const;
  void push_trace(TraceRecord r);

  int g_inter_;
  int g_data_;
  Precision precision_;
  std::int64_t element_bytes_;
  Rng rng_;
  std::map<Link, std::deque<Message>> links_;
  std::vector<int> pending_per_worker_;
  std::size_t in_flight_ = 0;
  std::vector<CommStats> stats_;
  std::vector<TraceRecord> trace_;
  std::uint64_t sequence_ = 0;
  bool tracing_ = true;
};

std::string_view to_string(MessageKind k);
std::string_view to_string(TraceKind k);

}  // namespace hybridpipe
