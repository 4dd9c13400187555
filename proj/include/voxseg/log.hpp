#pragma once

#include <string>
#include <vector>

namespace voxseg {

struct Warning {
  std::string code;
  std::string message;
};

// Structured warnings go to stderr as one JSON object per line and are also
// kept in a process-wide buffer so callers (tests, run manifests) can
// collect them.
void emit_warning(const std::string& code, const std::string& message);
std::vector<Warning> take_warnings();
void set_warnings_to_stderr(bool on);

}  // namespace voxseg
