#include <iostream>

#include "CLI11.hpp"

#include "hybridpipe/cli.hpp"

int main(int argc, char** argv) {
  hybridpipe::CliOptions o;
  CLI::App app{"hybrid inter-layer / data parallel training engine and simulator"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "run configuration (YAML)")->required();
    sub->add_option("--seed", o.seed, "override the configured seed");
    sub->add_option("--out", o.out, "output directory (default: stdout)");
    sub->add_option("--set", o.overrides, "override a config key, e.g. parallel.g_inter=4");
  };
  auto* validate = app.add_subcommand("validate", "check a configuration");
  auto* train = app.add_subcommand("train", "run numeric training, log per-step loss");
  auto* simulate = app.add_subcommand("simulate", "simulate one batch");
  auto* sweep = app.add_subcommand("sweep", "simulate a sweep over one axis, CSV out");
  auto* memory = app.add_subcommand("memory", "per-worker memory ledger");
  for (auto* sub : {validate, train, simulate, sweep, memory}) add_common(sub);
  train->add_option("--steps", o.steps, "training steps")->check(CLI::NonNegativeNumber);
  train->add_flag("--oracle", o.oracle, "compare against the serial reference");
  train->add_option("--tolerance", o.tolerance, "max relative loss difference with --oracle");
  sweep->add_option("--axis", o.axis, "g_inter | k | bsize | ac")->required();
  sweep->add_option("--values", o.values, "values, comma separated or repeated")->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : hybridpipe::kExitInvalid;
  }
  o.command = app.get_subcommands().front()->get_name();
  return hybridpipe::run_command(o, std::cout, std::cerr);
}
