#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hybridpipe/analytics.hpp"
#include "hybridpipe/cli.hpp"
#include "hybridpipe/config_file.hpp"
#include "hybridpipe/data.hpp"
#include "hybridpipe/engine.hpp"
#include "hybridpipe/reference.hpp"
#include "hybridpipe/simulator.hpp"

namespace py = pybind11;
using namespace hybridpipe;

namespace {

RunConfig config_from(const std::string& text, const std::vector<std::string>& overrides) {
  return parse_config(text, "<python>", overrides);
}

py::dict validate_text(const std::string& text, const std::vector<std::string>& overrides) {
  const auto v = validate(config_from(text, overrides));
  py::dict d;
  d["ok"] = v.ok();
  py::list violations;
  for (const auto& x : v.violations) violations.append(py::make_tuple(std::string(to_string(x.code)), x.message));
  d["violations"] = violations;
  if (v.ok()) {
    d["pipeline_limit"] = v.run->pipeline_limit;
    d["checkpoint_interval"] = v.run->checkpoint_interval;
    d["layers_per_worker"] = v.run->layers_per_worker;
    d["shard_size"] = v.run->shard_size;
    d["microbatches_per_shard"] = v.run->microbatches_per_shard;
  }
  return d;
}

py::dict train(const std::string& text, std::int64_t steps, bool oracle, const std::vector<std::string>& overrides) {
  const auto cfg = config_from(text, overrides);
  const auto run = validate_or_throw(cfg);
  const auto params = init_parameters(cfg.network, cfg.seed);
  const SyntheticData data(cfg.network, cfg.data, cfg.batch.batch_size, cfg.seed);
  std::vector<double> losses;
  std::vector<double> final_params;
  {
    py::gil_scoped_release release;
    HybridTrainer trainer(run, params);
    for (const auto& r : trainer.train(data, steps)) losses.push_back(r.loss);
    final_params = trainer.parameters(0);
  }
  py::dict d;
  d["losses"] = losses;
  d["parameters"] = final_params;
  if (oracle) {
    std::vector<double> ref_losses;
    SerialReference ref(run, params);
    for (std::int64_t i = 0; i < steps; ++i) ref_losses.push_back(ref.step(data.batch(i)));
    d["oracle_losses"] = ref_losses;
    d["oracle_parameters"] = ref.parameters();
  }
  return d;
}

py::dict simulate(const std::string& text, bool overlap, const std::vector<std::string>& overrides) {
  const auto cfg = config_from(text, overrides);
  const auto rep = simulate_batch(validate_or_throw(cfg), cfg.cost, {overlap, false});
  py::dict d;
  d["batch_time"] = rep.batch_time;
  d["inter_layer_time"] = rep.inter_layer_time;
  d["reduce_optimize_time"] = rep.reduce_optimize_time;
  d["allreduce_time"] = rep.allreduce_time;
  d["optimizer_time"] = rep.optimizer_time;
  d["allreduce_calls"] = rep.allreduce_calls;
  d["messages"] = rep.messages;
  d["busy"] = rep.busy;
  d["idle"] = rep.idle;
  d["p2p_bytes_per_worker"] = rep.counters.p2p_bytes_per_worker;
  d["flops_per_worker"] = rep.counters.flops_per_worker;
  d["ratio"] = py::make_tuple(rep.counters.ratio.num(), rep.counters.ratio.den());
  return d;
}

py::tuple run_cli(const std::string& command, const std::string& config_path, const std::vector<std::string>& args) {
  CliOptions o;
  o.command = command;
  o.config_path = config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    auto next = [&]() -> const std::string& {
      if (i + 1 >= args.size()) throw py::value_error("missing value for " + a);
      return args[++i];
    };
    if (a == "--oracle") o.oracle = true;
    else if (a == "--steps") o.steps = std::stoll(next());
    else if (a == "--seed") o.seed = std::stoull(next());
    else if (a == "--tolerance") o.tolerance = std::stod(next());
    else if (a == "--axis") o.axis = next();
    else if (a == "--values") {
      std::stringstream ss(next());
      for (std::string v; std::getline(ss, v, ',');) o.values.push_back(v);
    } else if (a == "--set") o.overrides.push_back(next());
    else if (a == "--out") o.out = next();
    else throw py::value_error("unknown option " + a);
  }
  std::ostringstream out, err;
  const int code = run_command(o, out, err);
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_hybridpipe, m) {
  m.doc() = "Hybrid inter-layer / data parallel training engine and performance simulator";
  py::register_exception<Error>(m, "HybridpipeError", PyExc_ValueError);

  m.def("validate", &validate_text, py::arg("config"), py::arg("overrides") = std::vector<std::string>{});
  m.def("train", &train, py::arg("config"), py::arg("steps"), py::arg("oracle") = false,
        py::arg("overrides") = std::vector<std::string>{});
  m.def("simulate", &simulate, py::arg("config"), py::arg("overlap") = true,
        py::arg("overrides") = std::vector<std::string>{});
  m.def("run_cli", &run_cli, py::arg("command"), py::arg("config_path"), py::arg("args") = std::vector<std::string>{},
        "Runs a subcommand; returns (exit_code, stdout, stderr).");
  m.def("sweep_columns", &sweep_columns);
  m.def("resolved_config", [](const std::string& text, const std::vector<std::string>& overrides) {
    return config_to_json(config_from(text, overrides)).dump();
  }, py::arg("config"), py::arg("overrides") = std::vector<std::string>{});

  m.def("round_to_half", &round_to_half);
  m.def("select_checkpoint_interval", &select_checkpoint_interval, py::arg("total_layers"), py::arg("g_inter"));
  m.def("activation_units", py::overload_cast<int, int, int>(&activation_units), py::arg("total_layers"),
        py::arg("g_inter"), py::arg("checkpoint_interval"));
  m.def("model_state_bytes", &model_state_bytes, py::arg("phi"), py::arg("optimized"), py::arg("bucket_size"));
  m.def("estimated_training_time", &estimated_training_time, py::arg("batch_time"), py::arg("batch_size"),
        py::arg("sequence_length"));
  m.def("flops_and_peak_fraction", [](double b, double s, double l, double h, double v, double t, double peak, double devices) {
    const auto r = flops_and_peak_fraction(b, s, l, h, v, t, peak, devices);
    return py::make_tuple(r.flops_per_second, r.peak_fraction);
  }, py::arg("batch_size"), py::arg("sequence_length"), py::arg("layers"), py::arg("hidden"), py::arg("vocab"),
        py::arg("batch_time"), py::arg("per_device_peak"), py::arg("devices"));
}
