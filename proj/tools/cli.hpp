#pragma once

#include <json.hpp>

#include <string>
#include <vector>

namespace curveclust::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kOther = 1, kDataFailure = 2, kNumericalFailure = 3, kConvergenceFailure = 4 };

// Every setting with its default; a config file is merged over this and
// command-line flags over the result.
nlohmann::json default_config();

// Parses arguments, runs one subcommand and maps failures to exit codes.
// Messages go to stderr.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace curveclust::cli
