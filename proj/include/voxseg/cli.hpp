#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace voxseg {

inline constexpr const char* kToolVersion = "0.1.0";

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // pipeline error
inline constexpr int kExitUsage = 2;    // bad flags or missing inputs

/// Runs one invocation. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace voxseg
