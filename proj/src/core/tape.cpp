#include "core/tape.hpp"

#include "core/check.hpp"

namespace flowvid {

Tape& Tape::instance() {
  static Tape tape;
  return tape;
}

void Tape::push(std::function<void()> backward) {
  nodes_.push_back(std::move(backward));
}

void Tape::backward(Tensor loss) {
  FV_CHECK(loss.numel() == 1,
           "backward expects a scalar loss, got shape " << shape_str(loss.shape()));
  loss.grad_data()[0] += 1.0f;
  for (size_t i = nodes_.size(); i > 0; --i) nodes_[i - 1]();
}

void Tape::clear() { nodes_.clear(); }

}  // namespace flowvid
