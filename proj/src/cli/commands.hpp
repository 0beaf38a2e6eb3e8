#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace flowvid {

// Usage problems (bad flags, unknown config keys) exit 1; runtime failures
// (missing files, numeric aborts) exit 2.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

int run_cli(int argc, const char* const* argv);

}  // namespace flowvid
