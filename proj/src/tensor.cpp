#include "tensor.hpp"

#include <cmath>
#include <sstream>

namespace ckfr {

int64_t shape_product(const std::vector<int64_t>& shape) {
  int64_t p = 1;
  for (int64_t e : shape) p *= e;
  return p;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  for (int64_t e : shape_) {
    if (e <= 0) fail("tensor extent must be positive, got shape " + shape_str(shape_));
  }
  data_.assign(static_cast<size_t>(shape_product(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (int64_t e : shape_) {
    if (e <= 0) fail("tensor extent must be positive, got shape " + shape_str(shape_));
  }
  if (shape_product(shape_) != static_cast<int64_t>(data_.size())) {
    fail("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
         shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data_[0] = v;
  return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

int64_t Tensor::extent(int axis) const {
  if (axis < 0 || axis >= rank()) fail("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  return shape_[static_cast<size_t>(axis)];
}

double Tensor::item() const {
  if (size() != 1) fail("item() requires a single-element tensor, got " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace ckfr
