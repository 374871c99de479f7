#include "hybridpipe/config.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hybridpipe {

std::int64_t NetworkSpec::parameter_count(int first, int count) const {
  std::int64_t total = 0;
  for (int i = first; i < first + count; ++i) {
    const auto& d = layer_dims.at(static_cast<std::size_t>(i));
    total += static_cast<std::int64_t>(d.in) * d.out + d.out;
  }
  return total;
}

std::int64_t NetworkSpec::parameter_count_total() const { return parameter_count(0, num_layers()); }

NetworkSpec NetworkSpec::uniform(int layers, int width, int input_width, int output_width) {
  NetworkSpec spec;
  for (int i = 0; i < layers; ++i) {
    spec.layer_dims.push_back({i == 0 ? input_width : width, i == layers - 1 ? output_width : width});
  }
  spec.uniform_activation_bytes = static_cast<std::int64_t>(width) * 2;
  return spec;
}

bool Validation::has(ErrorCode code) const {
  return std::any_of(violations.begin(), violations.end(),
                     [code](const Violation& v) { return v.code == code; });
}

namespace {

template <typename... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}

bool finite_all(std::initializer_list<double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

Validation validate(const RunConfig& config) {
  Validation result;
  auto& out = result.violations;
  const auto& p = config.parallel;
  const auto& net = config.network;
  const int batch = config.batch.batch_size;

  auto positive = [&](std::int64_t value, const char* name) {
    if (value <= 0) out.push_back({ErrorCode::InvalidValue, cat(name, " must be positive, got ", value)});
    return value > 0;
  };
  const bool grid_ok = positive(config.workers, "workers") & positive(p.g_inter, "parallel.g_inter") &
                       positive(p.g_data, "parallel.g_data");
  const bool micro_ok = positive(p.microbatch_size, "parallel.microbatch_size");
  positive(p.bucket_size, "parallel.bucket_size");
  positive(p.coarsening_k, "parallel.coarsening_k");
  if (p.pipeline_limit) positive(*p.pipeline_limit, "parallel.pipeline_limit");
  if (p.checkpoint_interval) positive(*p.checkpoint_interval, "parallel.checkpoint_interval");
  const bool batch_ok = positive(batch, "batch.batch_size");
  positive(net.uniform_activation_bytes, "network.uniform_activation_bytes");

  const int n = net.num_layers();
  if (n == 0) out.push_back({ErrorCode::InvalidValue, "network has no layers"});
  for (int i = 0; i < n; ++i) {
    const auto& d = net.layer_dims[static_cast<std::size_t>(i)];
    if (d.in <= 0 || d.out <= 0) {
      out.push_back({ErrorCode::InvalidValue, cat("layer ", i, " has non-positive width")});
    }
    if (i + 1 < n && d.out != net.layer_dims[static_cast<std::size_t>(i) + 1].in) {
      out.push_back({ErrorCode::ShapeMismatch, cat("layer ", i, " output width ", d.out,
                                                   " does not match layer ", i + 1, " input width ",
                                                   net.layer_dims[static_cast<std::size_t>(i) + 1].in)});
    }
  }
  if (net.loss == LossKind::CrossEntropy && net.output_activation != Activation::Identity) {
    out.push_back({ErrorCode::InvalidValue, "cross-entropy loss expects identity output activation (logits)"});
  }

  if (grid_ok && p.g_inter * p.g_data != config.workers) {
    out.push_back({ErrorCode::GridMismatch, cat("g_inter * g_data = ", p.g_inter, " * ", p.g_data, " = ",
                                                p.g_inter * p.g_data, " but workers = ", config.workers)});
  }
  const bool layers_ok = grid_ok && n > 0 && n % p.g_inter == 0;
  if (grid_ok && n > 0 && !layers_ok) {
    out.push_back({ErrorCode::NonDivisibleLayers,
                   cat("g_inter = ", p.g_inter, " does not divide num_layers = ", n)});
  }
  const bool shard_ok = grid_ok && batch_ok && batch % p.g_data == 0;
  if (grid_ok && batch_ok && !shard_ok) {
    out.push_back({ErrorCode::NonDivisibleBatch,
                   cat("g_data = ", p.g_data, " does not divide batch_size = ", batch)});
  }
  if (shard_ok && micro_ok && (batch / p.g_data) % p.microbatch_size != 0) {
    out.push_back({ErrorCode::NonDivisibleShard, cat("microbatch_size = ", p.microbatch_size,
                                                     " does not divide shard size = ", batch / p.g_data)});
  }
  int ac = 1;
  if (layers_ok) {
    const int per_worker = n / p.g_inter;
    if (p.checkpoint_interval) {
      ac = *p.checkpoint_interval;
      if (ac > 0 && per_worker % ac != 0) {
        out.push_back({ErrorCode::BadCheckpointInterval,
                       cat("checkpoint_interval = ", ac, " does not divide layers per worker = ", per_worker)});
      }
    } else {
      ac = select_checkpoint_interval(n, p.g_inter);
    }
  }

  const auto& o = config.optimizer;
  if (!finite_all({o.learning_rate, o.beta1, o.beta2, o.epsilon, o.weight_decay, o.loss_scale})) {
    out.push_back({ErrorCode::InvalidValue, "optimizer fields must be finite"});
  } else {
    if (!(o.beta1 > 0 && o.beta1 < 1)) out.push_back({ErrorCode::InvalidValue, "optimizer.beta1 must lie in (0,1)"});
    if (!(o.beta2 > 0 && o.beta2 < 1)) out.push_back({ErrorCode::InvalidValue, "optimizer.beta2 must lie in (0,1)"});
    if (!(o.epsilon > 0)) out.push_back({ErrorCode::InvalidValue, "optimizer.epsilon must be positive"});
    if (o.weight_decay < 0) out.push_back({ErrorCode::InvalidValue, "optimizer.weight_decay must be nonnegative"});
    if (!(o.loss_scale > 0)) out.push_back({ErrorCode::InvalidValue, "optimizer.loss_scale must be positive"});
  }
  if (config.data.num_batches <= 0) out.push_back({ErrorCode::InvalidValue, "data.num_batches must be positive"});

  const auto& c = config.cost;
  for (auto [value, name] : {std::pair{c.device_flops, "cost.device_flops"},
                             std::pair{c.link_bandwidth, "cost.link_bandwidth"},
                             std::pair{c.collective_bandwidth, "cost.collective_bandwidth"},
                             std::pair{c.host_bandwidth, "cost.host_bandwidth"}}) {
    if (!(value > 0) || !std::isfinite(value)) out.push_back({ErrorCode::InvalidValue, cat(name, " must be positive")});
  }
  for (auto [value, name] : {std::pair{c.link_latency, "cost.link_latency"},
                             std::pair{c.collective_latency, "cost.collective_latency"},
                             std::pair{c.collective_call_overhead, "cost.collective_call_overhead"},
                             std::pair{c.optimizer_flops_per_param, "cost.optimizer_flops_per_param"}}) {
    if (!(value >= 0) || !std::isfinite(value)) out.push_back({ErrorCode::InvalidValue, cat(name, " must be nonnegative")});
  }
  if (!(c.backward_multiplier >= 1)) out.push_back({ErrorCode::InvalidValue, "cost.backward_multiplier must be >= 1"});

  if (!out.empty()) return result;

  ValidatedRun run;
  run.config = config;
  run.pipeline_limit = p.pipeline_limit.value_or(p.g_inter);
  run.config.parallel.pipeline_limit = run.pipeline_limit;
  run.checkpoint_interval = ac;
  run.config.parallel.checkpoint_interval = ac;
  run.layers_per_worker = n / p.g_inter;
  run.shard_size = batch / p.g_data;
  run.microbatches_per_shard = run.shard_size / p.microbatch_size;
  run.total_microbatches = batch / p.microbatch_size;
  result.run = std::move(run);
  return result;
}

Validation validate(const ParallelConfig& parallel, const NetworkSpec& net, const BatchConfig& batch,
                    int workers) {
  RunConfig config;
  config.workers = workers;
  config.parallel = parallel;
  config.network = net;
  config.batch = batch;
  return validate(config);
}

ValidatedRun validate_or_throw(const RunConfig& config) {
  auto v = validate(config);
  if (!v.ok()) throw Error(v.violations.front().code, v.violations.front().message);
  return std::move(*v.run);
}

int select_checkpoint_interval(int total_layers, int g_inter) {
  if (total_layers <= 0 || g_inter <= 0 || total_layers % g_inter != 0) {
    throw Error(ErrorCode::NonDivisibleLayers, "g_inter must divide the layer count");
  }
  using Wide = unsigned __int128;
  const auto n = static_cast<Wide>(total_layers);
  const int per_worker = total_layers / g_inter;
  // Distance of f from sqrt(n) on a log scale, as the ratio num/den >= 1.
  auto distance = [n](int f) {
    const Wide sq = static_cast<Wide>(f) * static_cast<Wide>(f);
    return std::pair{std::max(sq, n), std::min(sq, n)};
  };
  int best = 1;
  for (int f = 2; f <= per_worker; ++f) {
    if (per_worker % f != 0) continue;
    const auto [fn, fd] = distance(f);
    const auto [bn, bd] = distance(best);
    if (fn * bd < bn * fd) best = f;
  }
  return best;
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
  }
  return "identity";
}

std::string_view to_string(LossKind l) {
  return l == LossKind::SquaredError ? "squared_error" : "cross_entropy";
}

std::string_view to_string(Precision p) { return p == Precision::Mixed ? "mixed" : "double"; }

std::string_view to_string(DataKind k) {
  return k == DataKind::Regression ? "regression" : "classification";
}

}  // namespace hybridpipe
