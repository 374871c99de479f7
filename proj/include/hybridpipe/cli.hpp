#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hybridpipe {

enum ExitCode : int { kExitOk = 0, kExitInvalid = 1, kExitTolerance = 2, kExitIo = 3 };

struct CliOptions {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::int64_t steps = 10;
  bool oracle = false;
  double tolerance = 1.0e-8;
  std::string axis;
  std::vector<std::string> values;
  /// Output directory; empty writes the artifact to stdout.
  std::string out;
  std::vector<std::string> overrides;
};

/// Runs one subcommand. The artifact goes to `out` (or a file under
/// options.out), diagnostics to `err`.
int run_command(const CliOptions& options, std::ostream& out, std::ostream& err);

/// Stable column order of sweep CSV rows.
const std::vector<std::string>& sweep_columns();

}  // namespace hybridpipe
