#pragma once

#include "hdcaps/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hdcaps {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitDivergence = 3,
};

// A training config file: TrainConfig keys plus the optional path keys
// `data` and `out`, which command-line flags override.
struct RunConfig {
  TrainConfig train;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> out;
};

// `required` lists path keys that must be present; a missing one is a
// ParseError at line 0.
RunConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& required = {});
RunConfig parse_config_string(const std::string& text, const std::vector<std::string>& required = {});

// Runs one subcommand. Diagnostics go to `err` as a single line.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hdcaps
