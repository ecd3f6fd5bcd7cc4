#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "settings.hpp"

namespace llts::cli {

/// Declared settings and defaults for a subcommand.
Settings make_settings(const std::string& command);

const std::vector<std::string>& command_names();

struct RunContext {
  std::filesystem::path out;  // may be empty for gradcheck
  bool force = false;
};

/// Runs a subcommand after settings are final. Returns the process exit code
/// for outcomes that are not exceptions (gradcheck over tolerance).
int run_command(Settings& s, const RunContext& ctx);

}  // namespace llts::cli
