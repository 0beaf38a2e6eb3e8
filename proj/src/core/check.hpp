#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowvid {

#define FV_CHECK(cond, msg_expr)                      \
  do {                                                \
    if (!(cond)) {                                    \
      std::ostringstream fv_oss_;                     \
      fv_oss_ << msg_expr;                            \
      throw std::runtime_error(fv_oss_.str());        \
    }                                                 \
  } while (0)

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

}  // namespace flowvid
