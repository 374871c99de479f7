#include "hybridpipe/analytics.hpp"

#include <algorithm>
#include <numeric>

namespace hybridpipe {

Rational::Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
  if (den_ <= 0 || num_ < 0) throw Error(ErrorCode::InvalidValue, "rational must be non-negative with positive denominator");
  const auto g = std::gcd(num_, den_);
  if (g > 1) {
    num_ /= g;
    den_ /= g;
  }
  if (num_ == 0) den_ = 1;
}

Rational Rational::operator*(std::int64_t k) const {
  const auto g = std::gcd(k, den_);
  return Rational(num_ * (k / g), den_ / g);
}

bool operator<(const Rational& a, const Rational& b) {
  return static_cast<__int128>(a.num_) * b.den_ < static_cast<__int128>(b.num_) * a.den_;
}

double activation_units(int total_layers, int g_inter, int checkpoint_interval) {
  return activation_units(total_layers, g_inter, checkpoint_interval, g_inter);
}

double activation_units(int total_layers, int g_inter, int ac, int pipeline_limit) {
  if (g_inter <= 0 || total_layers <= 0 || total_layers % g_inter != 0) {
    throw Error(ErrorCode::NonDivisibleLayers, "g_inter must divide the layer count");
  }
  if (ac <= 0 || (total_layers / g_inter) % ac != 0) {
    throw Error(ErrorCode::BadCheckpointInterval, "checkpoint interval " + std::to_string(ac) +
                                                      " does not divide " + std::to_string(total_layers / g_inter));
  }
  const int stash_per_microbatch = total_layers / (g_inter * ac);
  return static_cast<double>(pipeline_limit) * stash_per_microbatch + 1.0 + ac;
}

std::int64_t model_state_bytes(std::int64_t phi, bool optimized, std::int64_t bucket_size) {
  if (phi <= 0) throw Error(ErrorCode::InvalidValue, "phi must be positive");
  if (!optimized) return 20 * phi;
  if (bucket_size <= 0) throw Error(ErrorCode::InvalidValue, "bucket_size must be positive");
  return 4 * phi + 16 * bucket_size;
}

std::string_view to_string(Residence r) {
  switch (r) {
    case Residence::Device: return "device";
    case Residence::Host: return "host";
    case Residence::Deleted: return "deleted";
  }
  return "device";
}

std::int64_t MemoryLedger::device_model_state_bytes() const {
  std::int64_t total = 0;
  for (const auto& r : rows) {
    if (r.model_state && r.residence == Residence::Device) total += r.bytes;
  }
  return total;
}

std::int64_t MemoryLedger::device_activation_bytes() const {
  std::int64_t total = 0;
  for (const auto& r : rows) {
    if (!r.model_state && r.residence == Residence::Device) total += r.bytes;
  }
  return total;
}

std::int64_t MemoryLedger::device_total_bytes() const { return device_model_state_bytes() + device_activation_bytes(); }

std::int64_t MemoryLedger::host_bytes() const {
  std::int64_t total = 0;
  for (const auto& r : rows) {
    if (r.residence == Residence::Host) total += r.bytes;
  }
  return total;
}

MemoryLedger memory_ledger(std::int64_t phi, bool optimized, std::int64_t bucket_size, double units,
                           std::int64_t unit_bytes) {
  MemoryLedger l;
  l.phi = phi;
  l.optimized = optimized;
  l.bucket_size = bucket_size;
  l.activation_units = units;
  l.activation_unit_bytes = unit_bytes;
  const auto offloaded = optimized ? Residence::Host : Residence::Device;
  l.rows = {
      {"theta16", 2 * phi, Residence::Device, true},
      {"grad_theta16", 2 * phi, Residence::Device, true},
      {"theta", 4 * phi, offloaded, true},
      {"grad_theta", optimized ? 0 : 4 * phi, optimized ? Residence::Deleted : Residence::Device, true},
      {"optimizer_state", 8 * phi, offloaded, true},
  };
  if (optimized) l.rows.push_back({"bucket_scratch", 16 * bucket_size, Residence::Device, true});
  l.rows.push_back({"activations", static_cast<std::int64_t>(units * static_cast<double>(unit_bytes)),
                    Residence::Device, false});
  return l;
}

MemoryLedger memory_ledger(const ValidatedRun& run, bool optimized) {
  const auto& cfg = run.config;
  std::int64_t phi = 0;
  for (int s = 0; s < cfg.parallel.g_inter; ++s) {
    phi = std::max(phi, cfg.network.parameter_count(s * run.layers_per_worker, run.layers_per_worker));
  }
  const double units = activation_units(cfg.network.num_layers(), cfg.parallel.g_inter, run.checkpoint_interval,
                                        run.pipeline_limit);
  const std::int64_t unit_bytes = cfg.network.uniform_activation_bytes * cfg.parallel.microbatch_size;
  return memory_ledger(phi, optimized, cfg.parallel.bucket_size, units, unit_bytes);
}

std::int64_t transformer_parameter_count(std::int64_t layers, std::int64_t hidden, std::int64_t vocab,
                                         std::int64_t sequence) {
  return 12 * layers * hidden * hidden + 13 * layers * hidden + vocab * hidden + sequence * hidden;
}

CommCompCounters comm_comp_counters(const ValidatedRun& run) {
  const auto& cfg = run.config;
  const int g = cfg.parallel.g_inter;
  const std::int64_t samples = run.shard_size;
  const std::int64_t act = cfg.network.uniform_activation_bytes;
  const bool recompute = run.checkpoint_interval > 1;
  CommCompCounters c;
  for (int s = 0; s < g; ++s) {
    const std::int64_t links = (s + 1 < g ? 1 : 0) + (s > 0 ? 1 : 0);
    c.p2p_bytes_per_stage.push_back(samples * act * links);
    std::int64_t per_sample = 0;
    for (int l = s * run.layers_per_worker; l < (s + 1) * run.layers_per_worker; ++l) {
      const auto f = forward_flops(cfg.network.layer_dims[static_cast<std::size_t>(l)]);
      per_sample += f * (recompute ? 4 : 3);
    }
    c.flops_per_stage.push_back(samples * per_sample);
  }
  c.p2p_bytes_per_worker = *std::max_element(c.p2p_bytes_per_stage.begin(), c.p2p_bytes_per_stage.end());
  c.flops_per_worker = *std::max_element(c.flops_per_stage.begin(), c.flops_per_stage.end());
  c.ratio = c.p2p_bytes_per_worker > 0 ? Rational(c.flops_per_worker, c.p2p_bytes_per_worker) : Rational(0, 1);
  return c;
}

double estimated_training_time(double batch_time, double batch_size, double sequence_length) {
  if (!(batch_time > 0 && batch_size > 0 && sequence_length > 0)) {
    throw Error(ErrorCode::InvalidValue, "training-time inputs must be positive");
  }
  return 3.0e11 * batch_time / (batch_size * sequence_length);
}

FlopRate flops_and_peak_fraction(double b, double s, double l, double h, double vocab, double t,
                                 double per_device_peak, double devices) {
  for (double x : {b, s, l, h, vocab, t, per_device_peak, devices}) {
    if (!(x > 0)) throw Error(ErrorCode::InvalidValue, "flop-rate inputs must be positive");
  }
  const double bracket = 1.0 + s / (6.0 * h) + vocab / (16.0 * l * h);
  const double rate = 96.0 * b * s * l * h * h / t * bracket;
  return {rate, rate / (devices * per_device_peak)};
}

}  // namespace hybridpipe
