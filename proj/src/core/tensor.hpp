#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "core/rng.hpp"

namespace flowvid {

using Shape = std::vector<int>;

size_t shape_numel(const Shape& s);

// Dense row-major float32 tensor. Copies are shallow (shared storage);
// clone() deep-copies. The gradient buffer lives on the storage so reshaped
// views of a tensor accumulate into the same gradient.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);

  static Tensor from(Shape shape, std::vector<float> values);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float v) { return Tensor(std::move(shape), v); }
  static Tensor randn(Shape shape, Rng& rng, float stdev = 1.0f);
  static Tensor scalar(float v) { return Tensor(Shape{1}, v); }

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int dim(int i) const;
  int rank() const { return (int)shape_.size(); }
  size_t numel() const;

  float* data();
  const float* data() const;
  float item() const;  // numel()==1 only

  float at(std::initializer_list<int> idx) const;
  void set(std::initializer_list<int> idx, float v);

  bool requires_grad() const;
  void set_requires_grad(bool b);

  bool has_grad() const;
  float* grad_data();                       // allocates zeros on first use
  const float* grad_data_const() const;     // null when absent
  Tensor grad_tensor() const;               // copy, zeros when absent
  void zero_grad();
  void accumulate_grad(const float* g, size_t n);

  Tensor reshaped(Shape s) const;  // shares storage, numel must match
  Tensor clone() const;            // deep copy of values, no grad, no history

  const void* storage_id() const { return (const void*)st_.get(); }

 private:
  struct Storage {
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> st_;
  Shape shape_;
};

// Runtime toggle: when on, elementwise/attention ops scan outputs for
// NaN/Inf and throw. Off by default, enabled in tests.
void set_finite_checks(bool on);
bool finite_checks_enabled();
void check_finite(const Tensor& t, const char* where);

// ".ten" tensor file: magic "TEN1", u32 rank, rank u32 dims, f32 payload,
// all little-endian.
void write_ten(const std::string& path, const Tensor& t);
Tensor read_ten(const std::string& path);

}  // namespace flowvid
