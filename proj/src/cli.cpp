#include "hybridpipe/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "hybridpipe/analytics.hpp"
#include "hybridpipe/config_file.hpp"
#include "hybridpipe/data.hpp"
#include "hybridpipe/engine.hpp"
#include "hybridpipe/nn.hpp"
#include "hybridpipe/reference.hpp"
#include "hybridpipe/simulator.hpp"

namespace hybridpipe {
namespace {

using nlohmann::ordered_json;

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string num(std::int64_t v) { return std::to_string(v); }

class IoFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes an artifact either to stdout or to options.out/name.
void emit(const CliOptions& o, const std::string& name, const std::string& text, std::ostream& out) {
  if (o.out.empty()) {
    out << text;
    return;
  }
  std::error_code ec;
  std::filesystem::create_directories(o.out, ec);
  const auto path = std::filesystem::path(o.out) / name;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoFailure("write to '" + path.string() + "' failed");
}

RunConfig load(const CliOptions& o) {
  if (o.config_path.empty()) throw Error(ErrorCode::ConfigParse, "--config is required");
  auto cfg = load_config(o.config_path, o.overrides);
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

std::string violations_text(const Validation& v) {
  std::ostringstream s;
  for (const auto& x : v.violations) s << "  " << to_string(x.code) << ": " << x.message << "\n";
  return s.str();
}

ordered_json header(const std::string& command, const RunConfig& cfg) {
  return {{"type", "header"}, {"command", command}, {"seed", cfg.seed}, {"config", config_to_json(cfg)}};
}

int cmd_validate(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load(o);
  const auto v = validate(cfg);
  std::ostringstream s;
  if (!v.ok()) {
    s << "invalid\n" << violations_text(v);
    emit(o, "validate.txt", s.str(), out);
    err << "configuration invalid\n";
    return kExitInvalid;
  }
  const auto& r = *v.run;
  s << "# " << header("validate", r.config).dump() << "\n"
    << "valid\n"
    << "workers              " << cfg.workers << "\n"
    << "grid                 " << cfg.parallel.g_inter << " x " << cfg.parallel.g_data << "\n"
    << "layers per worker    " << r.layers_per_worker << "\n"
    << "shard size           " << r.shard_size << "\n"
    << "microbatches/shard   " << r.microbatches_per_shard << "\n"
    << "pipeline limit       " << r.pipeline_limit << "\n"
    << "checkpoint interval  " << r.checkpoint_interval << "\n"
    << "seed                 " << cfg.seed << "\n";
  emit(o, "validate.txt", s.str(), out);
  return kExitOk;
}

double relative_diff(double a, double b) {
  const double d = std::abs(a - b);
  const double m = std::max(std::abs(a), std::abs(b));
  return m == 0.0 ? d : d / m;
}

int cmd_train(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load(o);
  const auto run = validate_or_throw(cfg);
  if (o.steps < 0) throw Error(ErrorCode::InvalidValue, "--steps must be non-negative");
  const auto params = init_parameters(cfg.network, cfg.seed);
  const SyntheticData data(cfg.network, cfg.data, cfg.batch.batch_size, cfg.seed);
  HybridTrainer trainer(run, params);
  const auto records = trainer.train(data, o.steps);

  std::vector<double> oracle;
  if (o.oracle) {
    SerialReference ref(run, params);
    for (std::int64_t i = 0; i < o.steps; ++i) oracle.push_back(ref.step(data.batch(i)));
  }

  std::ostringstream s;
  auto h = header("train", run.config);
  h["steps"] = o.steps;
  h["oracle"] = o.oracle;
  s << h.dump() << "\n";
  double max_diff = 0.0;
  bool identical = true;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    ordered_json j = {{"type", "step"}, {"step", r.step}, {"loss", r.loss}, {"skipped", r.skipped},
                      {"loss_scale", r.loss_scale}};
    if (o.oracle) {
      const double d = relative_diff(r.loss, oracle[i]);
      max_diff = std::max(max_diff, d);
      identical = identical && r.loss == oracle[i];
      j["oracle_loss"] = oracle[i];
      j["relative_diff"] = d;
    }
    s << j.dump() << "\n";
  }
  ordered_json summary = {{"type", "summary"}, {"steps", o.steps}};
  summary["final_loss"] = records.empty() ? ordered_json(nullptr) : ordered_json(records.back().loss);
  const bool within = !o.oracle || max_diff <= o.tolerance;
  if (o.oracle) {
    summary["max_relative_diff"] = max_diff;
    summary["bit_identical"] = identical;
    summary["tolerance"] = o.tolerance;
    summary["within_tolerance"] = within;
  }
  s << summary.dump() << "\n";
  emit(o, "train.jsonl", s.str(), out);
  if (!within) {
    err << "oracle loss difference " << num(max_diff) << " exceeds tolerance " << num(o.tolerance) << "\n";
    return kExitTolerance;
  }
  return kExitOk;
}

/// One simulated configuration point, keyed by sweep column.
std::map<std::string, std::string> simulate_point(const ValidatedRun& run) {
  const auto& cfg = run.config;
  const auto rep = simulate_batch(run, cfg.cost);
  const auto ledger = memory_ledger(run, true);
  const auto& p = cfg.parallel;
  return {{"workers", num(std::int64_t{cfg.workers})},
          {"g_inter", num(std::int64_t{p.g_inter})},
          {"g_data", num(std::int64_t{p.g_data})},
          {"microbatch_size", num(std::int64_t{p.microbatch_size})},
          {"pipeline_limit", num(std::int64_t{run.pipeline_limit})},
          {"checkpoint_interval", num(std::int64_t{run.checkpoint_interval})},
          {"bucket_size", num(p.bucket_size)},
          {"coarsening_k", num(std::int64_t{p.coarsening_k})},
          {"batch_time", num(rep.batch_time)},
          {"inter_layer_time", num(rep.inter_layer_time)},
          {"reduce_optimize_time", num(rep.reduce_optimize_time)},
          {"allreduce_time", num(rep.allreduce_time)},
          {"optimizer_time", num(rep.optimizer_time)},
          {"allreduce_calls", num(rep.allreduce_calls)},
          {"messages", num(rep.messages)},
          {"p2p_bytes_per_worker", num(rep.counters.p2p_bytes_per_worker)},
          {"flops_per_worker", num(rep.counters.flops_per_worker)},
          {"ratio_num", num(rep.counters.ratio.num())},
          {"ratio_den", num(rep.counters.ratio.den())},
          {"activation_units", num(ledger.activation_units)},
          {"device_model_state_bytes", num(ledger.device_model_state_bytes())},
          {"device_activation_bytes", num(ledger.device_activation_bytes())},
          {"device_total_bytes", num(ledger.device_total_bytes())},
          {"host_bytes", num(ledger.host_bytes())}};
}

int cmd_simulate(const CliOptions& o, std::ostream& out, std::ostream&) {
  const auto cfg = load(o);
  const auto run = validate_or_throw(cfg);
  const auto point = simulate_point(run);
  auto j = header("simulate", run.config);
  j["type"] = "report";
  ordered_json results;
  for (const auto& c : sweep_columns()) {
    if (point.contains(c)) results[c] = point.at(c);
  }
  j["results"] = results;
  std::ostringstream s;
  s << j.dump(2) << "\n";
  emit(o, "simulate.json", s.str(), out);
  return kExitOk;
}

std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string q = "\"";
  for (char c : v) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

int cmd_sweep(const CliOptions& o, std::ostream& out, std::ostream& err) {
  static const std::map<std::string, std::string> kAxisKeys = {{"g_inter", "parallel.g_inter"},
                                                               {"k", "parallel.coarsening_k"},
                                                               {"bsize", "parallel.bucket_size"},
                                                               {"ac", "parallel.checkpoint_interval"}};
  const auto axis = kAxisKeys.find(o.axis);
  if (axis == kAxisKeys.end()) throw Error(ErrorCode::ConfigParse, "--axis must be one of g_inter, k, bsize, ac");
  if (o.values.empty()) throw Error(ErrorCode::ConfigParse, "--values is required");
  const auto base = load(o);

  std::ostringstream s;
  auto h = header("sweep", base);
  h["axis"] = o.axis;
  h["values"] = o.values;
  s << "# " << h.dump() << "\n";
  const auto& cols = sweep_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) s << (i ? "," : "") << cols[i];
  s << "\n";
  bool any_error = false;
  for (const auto& value : o.values) {
    std::map<std::string, std::string> row = {{"axis", o.axis}, {"value", value}};
    try {
      auto cfg = with_override(base, axis->second + "=" + value);
      if (o.axis == "g_inter" && cfg.parallel.g_inter > 0 && cfg.workers % cfg.parallel.g_inter == 0) {
        cfg.parallel.g_data = cfg.workers / cfg.parallel.g_inter;
      }
      const auto v = validate(cfg);
      if (!v.ok()) {
        std::string msg;
        for (const auto& x : v.violations) msg += (msg.empty() ? "" : "; ") + std::string(to_string(x.code)) + ": " + x.message;
        throw Error(v.violations.front().code, msg);
      }
      auto point = simulate_point(*v.run);
      row.insert(point.begin(), point.end());
      row["status"] = "ok";
    } catch (const Error& e) {
      any_error = true;
      row["status"] = std::string(to_string(e.code()));
      row["error"] = e.what();
      err << "sweep point " << o.axis << "=" << value << ": " << e.what() << "\n";
    }
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const auto it = row.find(cols[i]);
      s << (i ? "," : "") << (it == row.end() ? "" : csv_field(it->second));
    }
    s << "\n";
  }
  emit(o, "sweep.csv", s.str(), out);
  return any_error ? kExitInvalid : kExitOk;
}

std::string bytes_text(std::int64_t b) {
  std::ostringstream s;
  s << std::setw(16) << b << " B  " << std::fixed << std::setprecision(3) << std::setw(10)
    << static_cast<double>(b) / 1e9 << " GB";
  return s.str();
}

void ledger_table(std::ostringstream& s, const MemoryLedger& l) {
  s << (l.optimized ? "optimized" : "unoptimized") << "\n";
  for (const auto& r : l.rows) {
    s << "  " << std::left << std::setw(18) << r.component << std::setw(9) << to_string(r.residence)
      << std::right << bytes_text(r.bytes) << "\n";
  }
  s << "  " << std::left << std::setw(27) << "device model state" << std::right
    << bytes_text(l.device_model_state_bytes()) << "\n"
    << "  " << std::left << std::setw(27) << "device activations" << std::right
    << bytes_text(l.device_activation_bytes()) << "\n"
    << "  " << std::left << std::setw(27) << "device total" << std::right << bytes_text(l.device_total_bytes())
    << "\n"
    << "  " << std::left << std::setw(27) << "host" << std::right << bytes_text(l.host_bytes()) << "\n";
}

int cmd_memory(const CliOptions& o, std::ostream& out, std::ostream&) {
  const auto cfg = load(o);
  const auto run = validate_or_throw(cfg);
  const auto plain = memory_ledger(run, false);
  const auto opt = memory_ledger(run, true);
  std::ostringstream s;
  s << "# " << header("memory", run.config).dump() << "\n";
  s << "parameters per worker   " << plain.phi << "\n"
    << "bucket size             " << cfg.parallel.bucket_size << "\n"
    << "checkpoint interval     " << run.checkpoint_interval << "\n"
    << "activation units        " << num(plain.activation_units) << "\n"
    << "bytes per unit          " << plain.activation_unit_bytes << "\n\n";
  ledger_table(s, plain);
  s << "\n";
  ledger_table(s, opt);
  const double ratio = static_cast<double>(plain.device_model_state_bytes()) /
                       static_cast<double>(opt.device_model_state_bytes());
  s << "\nmodel state saving      " << std::fixed << std::setprecision(4) << ratio << "x\n";
  emit(o, "memory.txt", s.str(), out);
  return kExitOk;
}

}  // namespace

const std::vector<std::string>& sweep_columns() {
  static const std::vector<std::string> cols = {
      "axis", "value", "status", "error", "workers", "g_inter", "g_data", "microbatch_size", "pipeline_limit",
      "checkpoint_interval", "bucket_size", "coarsening_k", "batch_time", "inter_layer_time",
      "reduce_optimize_time", "allreduce_time", "optimizer_time", "allreduce_calls", "messages",
      "p2p_bytes_per_worker", "flops_per_worker", "ratio_num", "ratio_den", "activation_units",
      "device_model_state_bytes", "device_activation_bytes", "device_total_bytes", "host_bytes"};
  return cols;
}

int run_command(const CliOptions& o, std::ostream& out, std::ostream& err) {
  try {
    if (o.command == "validate") return cmd_validate(o, out, err);
    if (o.command == "train") return cmd_train(o, out, err);
    if (o.command == "simulate") return cmd_simulate(o, out, err);
    if (o.command == "sweep") return cmd_sweep(o, out, err);
    if (o.command == "memory") return cmd_memory(o, out, err);
    err << "unknown command '" << o.command << "'\n";
    return kExitInvalid;
  } catch (const IoFailure& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return e.code() == ErrorCode::Io ? kExitIo : kExitInvalid;
  }
}

}  // namespace hybridpipe
