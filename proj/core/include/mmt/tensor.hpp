#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmt/rng.hpp"

namespace mmt {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

class shape_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor with shared storage. Copies are cheap handles;
// storage is never mutated after the tensor participates in a taped op.
template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_ = std::make_shared<std::vector<Real>>(numel(shape_), Real(0));
  }

  Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)) {
    validate_shape();
    if (static_cast<std::int64_t>(values.size()) != numel(shape_))
      throw shape_error("tensor data length " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(shape_));
    data_ = std::make_shared<std::vector<Real>>(std::move(values));
  }

  static Tensor scalar(Real v) { return Tensor({1}, {v}); }

  static Tensor full(Shape shape, Real v) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
  }

  static Tensor randn(Shape shape, RngStream& rng, Real stddev = Real(1)) {
    Tensor t(std::move(shape));
    for (auto& x : *t.data_) x = static_cast<Real>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const {
    return data_ ? static_cast<std::int64_t>(data_->size()) : 0;
  }
  std::int64_t dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank())
      throw shape_error("axis " + std::to_string(axis) + " out of range for " +
                        shape_str(shape_));
    return shape_[axis];
  }

  Real* data() { return data_->data(); }
  const Real* data() const { return data_->data(); }
  Real& operator[](std::int64_t i) { return (*data_)[i]; }
  Real operator[](std::int64_t i) const { return (*data_)[i]; }

  Real item() const {
    if (size() != 1)
      throw shape_error("item() on non-scalar tensor " + shape_str(shape_));
    return (*data_)[0];
  }

  // Fresh storage with identical contents.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<Real>>(*data_);
    t.requires_grad = requires_grad;
    return t;
  }

  // Same storage under a new shape; tape state is not carried over.
  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size())
      throw shape_error("cannot reshape " + shape_str(shape_) + " to " +
                        shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_->size());
    for (std::size_t i = 0; i < data_->size(); ++i)
      out[i] = static_cast<Other>((*data_)[i]);
    return Tensor<Other>(shape_, std::move(out));
  }

  bool requires_grad = false;
  // Tape node id, -1 while untracked. Assigned by Tape::watch or by ops.
  int node = -1;

 private:
  void validate_shape() const {
    for (auto d : shape_)
      if (d <= 0)
        throw shape_error("shape extents must be positive: " +
                          shape_str(shape_));
  }

  Shape shape_;
  std::shared_ptr<std::vector<Real>> data_;
};

}  // namespace mmt
