#include "hybridpipe/config_file.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace hybridpipe {
namespace {

std::string where(const std::string& source, const YAML::Node& node) {
  const auto mark = node.Mark();
  if (mark.line < 0) return source;
  return source + ":" + std::to_string(mark.line + 1);
}

[[noreturn]] void fail(const std::string& source, const YAML::Node& node, const std::string& what) {
  throw Error(ErrorCode::ConfigParse, where(source, node) + ": " + what);
}

struct Reader {
  const std::string& source;

  void expect_map(const YAML::Node& node, const std::string& path, const std::set<std::string>& keys) const {
    if (!node.IsMap()) fail(source, node, "'" + path + "' must be a mapping");
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!keys.contains(key)) fail(source, kv.first, "unknown key '" + (path.empty() ? key : path + "." + key) + "'");
    }
  }

  template <typename T>
  T scalar(const YAML::Node& node, const std::string& key) const {
    if (!node.IsScalar()) fail(source, node, "'" + key + "' must be a scalar");
    try {
      return node.as<T>();
    } catch (const YAML::Exception&) {
      fail(source, node, "bad value '" + node.Scalar() + "' for '" + key + "'");
    }
  }

  std::int64_t integer(const YAML::Node& node, const std::string& key) const {
    if (!node.IsScalar()) fail(source, node, "'" + key + "' must be a scalar");
    std::int64_t i = 0;
    if (YAML::convert<std::int64_t>::decode(node, i)) return i;
    double d = 0.0;
    if (YAML::convert<double>::decode(node, d) && std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9.0e18) {
      return static_cast<std::int64_t>(d);
    }
    fail(source, node, "'" + key + "' must be an integer, got '" + node.Scalar() + "'");
  }

  int int32(const YAML::Node& node, const std::string& key) const {
    const auto v = integer(node, key);
    if (v < INT32_MIN || v > INT32_MAX) fail(source, node, "'" + key + "' out of range");
    return static_cast<int>(v);
  }

  template <typename E>
  E choice(const YAML::Node& node, const std::string& key, const std::map<std::string, E>& options) const {
    const auto s = scalar<std::string>(node, key);
    const auto it = options.find(s);
    if (it == options.end()) {
      std::string names;
      for (const auto& [name, _] : options) names += (names.empty() ? "" : ", ") + name;
      fail(source, node, "'" + key + "' must be one of " + names + ", got '" + s + "'");
    }
    return it->second;
  }
};

const std::map<std::string, Activation> kActivations = {
    {"identity", Activation::Identity}, {"tanh", Activation::Tanh}, {"relu", Activation::Relu}};
const std::map<std::string, LossKind> kLosses = {{"squared_error", LossKind::SquaredError},
                                                 {"cross_entropy", LossKind::CrossEntropy}};
const std::map<std::string, Precision> kPrecisions = {{"double", Precision::Double}, {"mixed", Precision::Mixed}};
const std::map<std::string, DataKind> kDataKinds = {{"regression", DataKind::Regression},
                                                    {"classification", DataKind::Classification}};

NetworkSpec read_network(const Reader& r, const YAML::Node& n) {
  r.expect_map(n, "network", {"layers", "width", "input_width", "output_width", "layer_dims", "hidden_activation",
                              "output_activation", "loss", "activation_bytes"});
  NetworkSpec net;
  const bool shorthand = n["layers"] || n["width"] || n["input_width"] || n["output_width"];
  if (n["layer_dims"] && shorthand) fail(r.source, n, "network: give either layer_dims or layers/width, not both");
  if (n["layer_dims"]) {
    const auto dims = n["layer_dims"];
    if (!dims.IsSequence()) fail(r.source, dims, "'network.layer_dims' must be a list of [in, out] pairs");
    for (const auto& d : dims) {
      if (!d.IsSequence() || d.size() != 2) fail(r.source, d, "layer dims must be [in, out]");
      net.layer_dims.push_back({r.int32(d[0], "in"), r.int32(d[1], "out")});
    }
  } else if (shorthand) {
    if (!n["layers"] || !n["width"]) fail(r.source, n, "network: layers and width are both required");
    const int layers = r.int32(n["layers"], "network.layers");
    const int width = r.int32(n["width"], "network.width");
    if (layers <= 0 || width <= 0) fail(r.source, n, "network: layers and width must be positive");
    const int in = n["input_width"] ? r.int32(n["input_width"], "network.input_width") : width;
    const int out = n["output_width"] ? r.int32(n["output_width"], "network.output_width") : width;
    net = NetworkSpec::uniform(layers, width, in, out);
  } else {
    fail(r.source, n, "network: layer_dims or layers/width required");
  }
  if (net.uniform_activation_bytes == 0 && !net.layer_dims.empty()) {
    net.uniform_activation_bytes = static_cast<std::int64_t>(net.layer_dims.front().out) * 2;
  }
  if (n["hidden_activation"]) net.hidden_activation = r.choice(n["hidden_activation"], "network.hidden_activation", kActivations);
  if (n["output_activation"]) net.output_activation = r.choice(n["output_activation"], "network.output_activation", kActivations);
  if (n["loss"]) net.loss = r.choice(n["loss"], "network.loss", kLosses);
  if (n["activation_bytes"]) net.uniform_activation_bytes = r.integer(n["activation_bytes"], "network.activation_bytes");
  return net;
}

RunConfig read_config(const YAML::Node& root, const std::string& source) {
  const Reader r{source};
  RunConfig c;
  if (!root || root.IsNull()) fail(source, root, "empty configuration");
  r.expect_map(root, "", {"workers", "seed", "fabric_seed", "precision", "parallel", "network", "batch", "optimizer",
                          "data", "cost"});
  if (root["workers"]) c.workers = r.int32(root["workers"], "workers");
  if (root["seed"]) c.seed = r.scalar<std::uint64_t>(root["seed"], "seed");
  if (root["fabric_seed"]) c.fabric_seed = r.scalar<std::uint64_t>(root["fabric_seed"], "fabric_seed");
  if (root["precision"]) c.precision = r.choice(root["precision"], "precision", kPrecisions);

  if (const auto p = root["parallel"]) {
    r.expect_map(p, "parallel", {"g_inter", "g_data", "microbatch_size", "pipeline_limit", "bucket_size",
                                 "coarsening_k", "checkpoint_interval"});
    auto& q = c.parallel;
    if (p["g_inter"]) q.g_inter = r.int32(p["g_inter"], "parallel.g_inter");
    if (p["g_data"]) q.g_data = r.int32(p["g_data"], "parallel.g_data");
    if (p["microbatch_size"]) q.microbatch_size = r.int32(p["microbatch_size"], "parallel.microbatch_size");
    if (p["pipeline_limit"] && !p["pipeline_limit"].IsNull()) q.pipeline_limit = r.int32(p["pipeline_limit"], "parallel.pipeline_limit");
    if (p["bucket_size"]) q.bucket_size = r.integer(p["bucket_size"], "parallel.bucket_size");
    if (p["coarsening_k"]) q.coarsening_k = r.int32(p["coarsening_k"], "parallel.coarsening_k");
    if (p["checkpoint_interval"] && !p["checkpoint_interval"].IsNull()) {
      q.checkpoint_interval = r.int32(p["checkpoint_interval"], "parallel.checkpoint_interval");
    }
  }
  if (!root["network"]) fail(source, root, "missing 'network' section");
  c.network = read_network(r, root["network"]);
  if (const auto b = root["batch"]) {
    r.expect_map(b, "batch", {"batch_size"});
    if (b["batch_size"]) c.batch.batch_size = r.int32(b["batch_size"], "batch.batch_size");
  }
  if (const auto o = root["optimizer"]) {
    r.expect_map(o, "optimizer", {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay", "loss_scale",
                                  "dynamic_loss_scale"});
    auto& q = c.optimizer;
    if (o["learning_rate"]) q.learning_rate = r.scalar<double>(o["learning_rate"], "optimizer.learning_rate");
    if (o["beta1"]) q.beta1 = r.scalar<double>(o["beta1"], "optimizer.beta1");
    if (o["beta2"]) q.beta2 = r.scalar<double>(o["beta2"], "optimizer.beta2");
    if (o["epsilon"]) q.epsilon = r.scalar<double>(o["epsilon"], "optimizer.epsilon");
    if (o["weight_decay"]) q.weight_decay = r.scalar<double>(o["weight_decay"], "optimizer.weight_decay");
    if (o["loss_scale"]) q.loss_scale = r.scalar<double>(o["loss_scale"], "optimizer.loss_scale");
    if (o["dynamic_loss_scale"]) q.dynamic_loss_scale = r.scalar<bool>(o["dynamic_loss_scale"], "optimizer.dynamic_loss_scale");
  }
  if (const auto d = root["data"]) {
    r.expect_map(d, "data", {"kind", "num_batches", "noise"});
    if (d["kind"]) c.data.kind = r.choice(d["kind"], "data.kind", kDataKinds);
    if (d["num_batches"]) c.data.num_batches = r.int32(d["num_batches"], "data.num_batches");
    if (d["noise"]) c.data.noise = r.scalar<double>(d["noise"], "data.noise");
  }
  if (const auto k = root["cost"]) {
    const std::vector<std::pair<std::string, double CostModel::*>> fields = {
        {"device_flops", &CostModel::device_flops},
        {"backward_multiplier", &CostModel::backward_multiplier},
        {"link_latency", &CostModel::link_latency},
        {"link_bandwidth", &CostModel::link_bandwidth},
        {"collective_latency", &CostModel::collective_latency},
        {"collective_bandwidth", &CostModel::collective_bandwidth},
        {"collective_call_overhead", &CostModel::collective_call_overhead},
        {"host_bandwidth", &CostModel::host_bandwidth},
        {"optimizer_flops_per_param", &CostModel::optimizer_flops_per_param}};
    std::set<std::string> keys;
    for (const auto& [name, _] : fields) keys.insert(name);
    r.expect_map(k, "cost", keys);
    for (const auto& [name, member] : fields) {
      if (k[name]) c.cost.*member = r.scalar<double>(k[name], "cost." + name);
    }
  }
  return c;
}

void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCode::ConfigParse, "override '" + assignment + "' must look like key.path=value");
  }
  const auto path = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ConfigParse, "override '" + assignment + "': " + e.msg);
  }
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw Error(ErrorCode::ConfigParse, "override '" + assignment + "' has an empty key");
    parts.push_back(part);
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  std::function<void(YAML::Node, std::size_t)> set = [&](YAML::Node node, std::size_t i) {
    if (!node.IsMap()) throw Error(ErrorCode::ConfigParse, "override '" + assignment + "': '" + parts[i - 1] + "' is not a section");
    if (i + 1 == parts.size()) {
      node[parts[i]] = value;
      return;
    }
    if (!node[parts[i]]) node[parts[i]] = YAML::Node(YAML::NodeType::Map);
    set(node[parts[i]], i + 1);
  };
  set(root, 0);
  // The shorthand and explicit layer forms are exclusive; overriding one drops the other.
  if (parts.size() == 2 && parts[0] == "network" && root["network"].IsMap()) {
    if (parts[1] == "layer_dims") {
      for (const char* k : {"layers", "width", "input_width", "output_width"}) root["network"].remove(k);
    } else if (parts[1] == "layers" || parts[1] == "width" || parts[1] == "input_width" || parts[1] == "output_width") {
      root["network"].remove("layer_dims");
    }
  }
}

YAML::Node load_yaml(const std::string& text, const std::string& source) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw Error(ErrorCode::ConfigParse, source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source, const std::vector<std::string>& overrides) {
  auto root = load_yaml(text, source);
  for (const auto& o : overrides) apply_override(root, o);
  return read_config(root, source);
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path, overrides);
}

nlohmann::ordered_json config_to_json(const RunConfig& c) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["workers"] = c.workers;
  j["seed"] = c.seed;
  j["fabric_seed"] = c.fabric_seed;
  j["precision"] = std::string(to_string(c.precision));
  const auto& p = c.parallel;
  j["parallel"] = {{"g_inter", p.g_inter},
                   {"g_data", p.g_data},
                   {"microbatch_size", p.microbatch_size},
                   {"pipeline_limit", p.pipeline_limit ? ordered_json(*p.pipeline_limit) : ordered_json(nullptr)},
                   {"bucket_size", p.bucket_size},
                   {"coarsening_k", p.coarsening_k},
                   {"checkpoint_interval",
                    p.checkpoint_interval ? ordered_json(*p.checkpoint_interval) : ordered_json(nullptr)}};
  ordered_json dims = ordered_json::array();
  for (const auto& d : c.network.layer_dims) dims.push_back({d.in, d.out});
  j["network"] = {{"layer_dims", dims},
                  {"hidden_activation", std::string(to_string(c.network.hidden_activation))},
                  {"output_activation", std::string(to_string(c.network.output_activation))},
                  {"loss", std::string(to_string(c.network.loss))},
                  {"activation_bytes", c.network.uniform_activation_bytes}};
  j["batch"] = {{"batch_size", c.batch.batch_size}};
  const auto& o = c.optimizer;
  j["optimizer"] = {{"learning_rate", o.learning_rate}, {"beta1", o.beta1},
                    {"beta2", o.beta2},                 {"epsilon", o.epsilon},
                    {"weight_decay", o.weight_decay},   {"loss_scale", o.loss_scale},
                    {"dynamic_loss_scale", o.dynamic_loss_scale}};
  j["data"] = {{"kind", std::string(to_string(c.data.kind))},
               {"num_batches", c.data.num_batches},
               {"noise", c.data.noise}};
  const auto& k = c.cost;
  j["cost"] = {{"device_flops", k.device_flops},
               {"backward_multiplier", k.backward_multiplier},
               {"link_latency", k.link_latency},
               {"link_bandwidth", k.link_bandwidth},
               {"collective_latency", k.collective_latency},
               {"collective_bandwidth", k.collective_bandwidth},
               {"collective_call_overhead", k.collective_call_overhead},
               {"host_bandwidth", k.host_bandwidth},
               {"optimizer_flops_per_param", k.optimizer_flops_per_param}};
  return j;
}

RunConfig with_override(const RunConfig& config, const std::string& assignment) {
  return parse_config(config_to_json(config).dump(), "<resolved>", {assignment});
}

}  // namespace hybridpipe
