#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "hybridpipe/config.hpp"

namespace hybridpipe {

/// Reads a run configuration from YAML text. Every key must be known; errors
/// carry the source name and line. `overrides` are "dotted.key=value" strings
/// applied before conversion.
RunConfig parse_config(const std::string& text, const std::string& source = "<string>",
                       const std::vector<std::string>& overrides = {});
/// Same for a file. Throws Error(Io) when it cannot be read.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Full configuration as JSON. Also a valid config file.
nlohmann::ordered_json config_to_json(const RunConfig& config);

/// Applies one "dotted.key=value" override to a configuration.
RunConfig with_override(const RunConfig& config, const std::string& assignment);

}  // namespace hybridpipe
