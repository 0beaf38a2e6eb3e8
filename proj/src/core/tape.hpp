#pragma once

#include <functional>
#include <vector>

#include "core/tensor.hpp"

namespace flowvid {

// Reverse-mode tape. Ops append a backward closure as they run; backward()
// replays them newest-first. One tape per process, single-threaded per
// training step, reset explicitly between steps.
class Tape {
 public:
  static Tape& instance();

  bool recording() const { return recording_ && depth_ == 0; }
  void push(std::function<void()> backward);
  void backward(Tensor loss);  // loss must be scalar-shaped
  void clear();
  size_t size() const { return nodes_.size(); }

 private:
  friend struct NoGradGuard;
  std::vector<std::function<void()>> nodes_;
  bool recording_ = true;
  int depth_ = 0;  // NoGradGuard nesting
};

struct NoGradGuard {
  NoGradGuard() { ++Tape::instance().depth_; }
  ~NoGradGuard() { --Tape::instance().depth_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool tape_wants(const Tensor& a) {
  return Tape::instance().recording() && a.requires_grad();
}
inline bool tape_wants(const Tensor& a, const Tensor& b) {
  return Tape::instance().recording() && (a.requires_grad() || b.requires_grad());
}
inline bool tape_wants(const Tensor& a, const Tensor& b, const Tensor& c) {
  return Tape::instance().recording() &&
         (a.requires_grad() || b.requires_grad() || c.requires_grad());
}

}  // namespace flowvid
