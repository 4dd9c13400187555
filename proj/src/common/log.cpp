#include "voxseg/log.hpp"

#include <iostream>
#include <mutex>

#include "json.hpp"

namespace voxseg {

namespace {

std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

std::vector<Warning>& buffer() {
  static std::vector<Warning> b;
  return b;
}

bool& to_stderr() {
  static bool on = true;
  return on;
}

}  // namespace

void emit_warning(const std::string& code, const std::string& message) {
  std::lock_guard lock(log_mutex());
  buffer().push_back({code, message});
  if (to_stderr()) {
    std::cerr << nlohmann::json{{"level", "warning"}, {"code", code}, {"message", message}}.dump() << '\n';
  }
}

std::vector<Warning> take_warnings() {
  std::lock_guard lock(log_mutex());
  return std::exchange(buffer(), {});
}

void set_warnings_to_stderr(bool on) {
  std::lock_guard lock(log_mutex());
  to_stderr() = on;
}

}  // namespace voxseg
