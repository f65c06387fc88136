#include "ilt/types.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace ilt {

namespace {
std::atomic<bool> g_warnings{true};
std::mutex g_mutex;
}  // namespace

void set_warnings_enabled(bool enabled) { g_warnings = enabled; }

void log_warning(const std::string& message) {
  if (!g_warnings) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "warning: " << message << '\n';
}

}  // namespace ilt
