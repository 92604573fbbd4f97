#pragma once

#include "colorbridge/abi.hpp"

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace colorbridge::inline COLORBRIDGE_ABI {

// The library is built in single precision. The gradient-check build
// defines COLORBRIDGE_DOUBLE so finite differences measure the gradient
// code and not float32 rounding.
#ifdef COLORBRIDGE_DOUBLE
using Scalar = double;
#else
using Scalar = float;
#endif

using Shape = std::vector<std::size_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor. Every dimension is at least 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar{0});
  Tensor(Shape shape, std::vector<Scalar> data);

  static Tensor scalar(Scalar value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessor for [N,C,H,W] tensors.
  Scalar& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Value of a single-element tensor.
  Scalar item() const;

  Tensor reshaped(Shape shape) const;
  void fill(Scalar value);
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<Scalar> data_;
};

enum class ElementwiseOp { kAdd, kSub, kMul, kDiv, kMax };

// Untracked elementwise math. Throws ShapeError on mismatch and
// NumericError when a result is not finite.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseOp op, const Tensor& a, Scalar b);

Scalar sum(const Tensor& t);
Scalar dot(const Tensor& a, const Tensor& b);

}  // namespace colorbridge
