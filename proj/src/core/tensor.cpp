#include "core/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "core/check.hpp"
#include "kernels/kernels.hpp"

namespace flowvid {

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    FV_CHECK(d > 0, "non-positive dim in shape " << shape_str(s));
    n *= (size_t)d;
  }
  return n;
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  st_ = std::make_shared<Storage>();
  st_->data.assign(shape_numel(shape_), fill);
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
  FV_CHECK(shape_numel(shape) == values.size(),
           "from(): shape " << shape_str(shape) << " wants " << shape_numel(shape)
                            << " values, got " << values.size());
  Tensor t;
  t.shape_ = std::move(shape);
  t.st_ = std::make_shared<Storage>();
  t.st_->data = std::move(values);
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stdev) {
  Tensor t(std::move(shape));
  rng.fill_normal(t.data(), t.numel(), stdev);
  return t;
}

int Tensor::dim(int i) const {
  if (i < 0) i += rank();
  FV_CHECK(i >= 0 && i < rank(), "dim index " << i << " out of rank " << rank());
  return shape_[i];
}

size_t Tensor::numel() const { return st_ ? st_->data.size() : 0; }

float* Tensor::data() {
  FV_CHECK(st_, "use of undefined tensor");
  return st_->data.data();
}

const float* Tensor::data() const {
  FV_CHECK(st_, "use of undefined tensor");
  return st_->data.data();
}

float Tensor::item() const {
  FV_CHECK(numel() == 1, "item() on tensor of " << numel() << " elements");
  return data()[0];
}

namespace {
size_t flat_index(const Shape& shape, std::initializer_list<int> idx) {
  FV_CHECK(idx.size() == shape.size(),
           "index rank " << idx.size() << " vs tensor rank " << shape.size());
  size_t flat = 0;
  int i = 0;
  for (int v : idx) {
    FV_CHECK(v >= 0 && v < shape[i], "index " << v << " out of dim " << shape[i]);
    flat = flat * (size_t)shape[i] + (size_t)v;
    ++i;
  }
  return flat;
}
}  // namespace

float Tensor::at(std::initializer_list<int> idx) const {
  return data()[flat_index(shape_, idx)];
}

void Tensor::set(std::initializer_list<int> idx, float v) {
  data()[flat_index(shape_, idx)] = v;
}

bool Tensor::requires_grad() const { return st_ && st_->requires_grad; }

void Tensor::set_requires_grad(bool b) {
  FV_CHECK(st_, "set_requires_grad on undefined tensor");
  st_->requires_grad = b;
}

bool Tensor::has_grad() const { return st_ && !st_->grad.empty(); }

float* Tensor::grad_data() {
  FV_CHECK(st_, "grad of undefined tensor");
  if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0f);
  return st_->grad.data();
}

const float* Tensor::grad_data_const() const {
  if (!st_ || st_->grad.empty()) return nullptr;
  return st_->grad.data();
}

Tensor Tensor::grad_tensor() const {
  Tensor g(shape_);
  if (has_grad()) std::memcpy(g.data(), st_->grad.data(), numel() * sizeof(float));
  return g;
}

void Tensor::zero_grad() {
  if (st_ && !st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), 0.0f);
}

void Tensor::accumulate_grad(const float* g, size_t n) {
  FV_CHECK(n == numel(), "grad size " << n << " vs tensor " << numel());
  kernels::active().vadd(grad_data(), g, grad_data(), n);
}

Tensor Tensor::reshaped(Shape s) const {
  FV_CHECK(shape_numel(s) == numel(),
           "reshape " << shape_str(shape_) << " -> " << shape_str(s) << ": element count differs");
  Tensor t;
  t.st_ = st_;
  t.shape_ = std::move(s);
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.st_ = std::make_shared<Storage>();
  t.st_->data = st_->data;
  return t;
}

namespace {
bool g_finite_checks = false;
}

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks_enabled() { return g_finite_checks; }

void check_finite(const Tensor& t, const char* where) {
  if (!g_finite_checks) return;
  const float* p = t.data();
  for (size_t i = 0; i < t.numel(); ++i)
    FV_CHECK(std::isfinite(p[i]), where << ": non-finite value at flat index " << i);
}

namespace {
struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;
}  // namespace

void write_ten(const std::string& path, const Tensor& t) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  FV_CHECK(f, "cannot open for write: " << path);
  const char magic[4] = {'T', 'E', 'N', '1'};
  FV_CHECK(std::fwrite(magic, 1, 4, f.get()) == 4, "write failed: " << path);
  uint32_t rank = (uint32_t)t.rank();
  std::fwrite(&rank, 4, 1, f.get());
  for (int d : t.shape()) {
    uint32_t v = (uint32_t)d;
    std::fwrite(&v, 4, 1, f.get());
  }
  size_t n = t.numel();
  FV_CHECK(std::fwrite(t.data(), 4, n, f.get()) == n, "short write: " << path);
}

Tensor read_ten(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  FV_CHECK(f, "cannot open: " << path);
  char magic[4];
  FV_CHECK(std::fread(magic, 1, 4, f.get()) == 4 && std::memcmp(magic, "TEN1", 4) == 0,
           "bad magic in " << path << " (expected TEN1)");
  uint32_t rank = 0;
  FV_CHECK(std::fread(&rank, 4, 1, f.get()) == 1 && rank >= 1 && rank <= 8,
           "bad rank in " << path);
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = 0;
    FV_CHECK(std::fread(&d, 4, 1, f.get()) == 1 && d > 0, "bad dim in " << path);
    shape[i] = (int)d;
  }
  Tensor t(shape);
  size_t n = t.numel();
  FV_CHECK(std::fread(t.data(), 4, n, f.get()) == n, "short read: " << path);
  return t;
}

}  // namespace flowvid
