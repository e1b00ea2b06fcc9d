#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cli_config.hpp"

namespace tfm::cli {

/// Runs one resolved command, writing artifacts under cfg "out" and progress
/// to `log`. Returns the process exit status; failures throw.
int dispatch(const RunConfig& cfg, std::ostream& log);

/// Full command-line entry point: parses `args` (args[0] is the program name),
/// runs the command and maps failures to exit codes (2 usage, 1 other).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tfm::cli
