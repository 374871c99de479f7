#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "hybridpipe/cli.hpp"

using namespace hybridpipe;

namespace {

std::string write_config(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / ("hybridpipe_" + name + ".yaml");
  std::ofstream(path) << text;
  return path.string();
}

const char* kToy = R"(workers: 4
seed: 5
parallel:
  g_inter: 2
  g_data: 2
  microbatch_size: 2
network:
  layers: 4
  width: 8
batch:
  batch_size: 8
)";

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(CliOptions o) {
  std::ostringstream out, err;
  const int code = run_command(o, out, err);
  return {code, out.str(), err.str()};
}

CliOptions opts(const std::string& cmd, const std::string& path) {
  CliOptions o;
  o.command = cmd;
  o.config_path = path;
  return o;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> v;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

}  // namespace

TEST_CASE("validate exit codes") {
  const auto toy = write_config("toy", kToy);
  CHECK(run(opts("validate", toy)).code == kExitOk);
  auto bad = opts("validate", toy);
  bad.overrides = {"parallel.g_inter=5"};
  const auto r = run(bad);
  CHECK(r.code == kExitInvalid);
  CHECK(r.out.find("GridMismatch") != std::string::npos);
  CHECK(run(opts("validate", "/nonexistent.yaml")).code == kExitIo);
  const auto typo = write_config("typo", std::string(kToy) + "batchh: 1\n");
  CHECK(run(opts("validate", typo)).code == kExitInvalid);
}

TEST_CASE("train log and oracle") {
  const auto toy = write_config("toy", kToy);
  auto o = opts("train", toy);
  o.steps = 0;
  auto r = run(o);
  CHECK(r.code == kExitOk);
  const auto empty = lines(r.out);
  REQUIRE(empty.size() == 2);
  CHECK(empty[0].find("\"type\":\"header\"") != std::string::npos);
  CHECK(empty[1].find("\"type\":\"summary\"") != std::string::npos);

  o.steps = 5;
  o.oracle = true;
  r = run(o);
  CHECK(r.code == kExitOk);
  CHECK(lines(r.out).size() == 7);
  CHECK(run(o).out == r.out);

  o.tolerance = -1.0;
  CHECK(run(o).code == kExitTolerance);

  o.tolerance = 1e-8;
  o.seed = 99;
  const auto other = run(o);
  CHECK(other.out != r.out);
  CHECK(other.out.find("\"seed\":99") != std::string::npos);
}

TEST_CASE("sweep rows and per-point errors") {
  const auto toy = write_config("toy", kToy);
  auto o = opts("sweep", toy);
  o.axis = "k";
  o.values = {"1", "2"};
  auto r = run(o);
  CHECK(r.code == kExitOk);
  auto rows = lines(r.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].rfind("# ", 0) == 0);
  CHECK(rows[1].rfind("axis,value,status,error,", 0) == 0);

  o.axis = "ac";
  o.values = {"1", "3", "2"};
  r = run(o);
  CHECK(r.code == kExitInvalid);
  rows = lines(r.out);
  REQUIRE(rows.size() == 5);
  CHECK(rows[3].find("BadCheckpointInterval") != std::string::npos);
  CHECK(rows[4].find(",ok,") != std::string::npos);

  o.axis = "depth";
  CHECK(run(o).code == kExitInvalid);
}

TEST_CASE("single-point sweep equals simulate") {
  const auto toy = write_config("toy", kToy);
  auto s = opts("sweep", toy);
  s.axis = "bsize";
  s.values = {"1048576"};
  const auto rows = lines(run(s).out);
  REQUIRE(rows.size() == 3);
  const auto sim = run(opts("simulate", toy)).out;
  std::istringstream header(rows[1]), values(rows[2]);
  std::string col, val;
  int compared = 0;
  while (std::getline(header, col, ',') && std::getline(values, val, ',')) {
    if (col == "axis" || col == "value" || col == "status" || col == "error") continue;
    CHECK(sim.find("\"" + col + "\": \"" + val + "\"") != std::string::npos);
    ++compared;
  }
  CHECK(compared == static_cast<int>(sweep_columns().size()) - 4);
}

TEST_CASE("memory report") {
  const auto big = write_config("big", R"(workers: 1
parallel:
  bucket_size: 16000000
network:
  layer_dims: [[1999999999, 1]]
)");
  const auto r = run(opts("memory", big));
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("40000000000 B") != std::string::npos);
  CHECK(r.out.find("bucket_scratch") != std::string::npos);
  CHECK(r.out.find("256000000 B") != std::string::npos);
  CHECK(r.out.find("8256000000 B") != std::string::npos);
}

TEST_CASE("artifacts written to an output directory") {
  const auto toy = write_config("toy", kToy);
  const auto dir = std::filesystem::temp_directory_path() / "hybridpipe_out";
  std::filesystem::remove_all(dir);
  auto o = opts("memory", toy);
  o.out = dir.string();
  CHECK(run(o).code == kExitOk);
  CHECK(std::filesystem::exists(dir / "memory.txt"));
  o.out = "/proc/definitely/not/writable";
  CHECK(run(o).code == kExitIo);
}
