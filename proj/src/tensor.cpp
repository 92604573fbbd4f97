#include "colorbridge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace colorbridge::inline COLORBRIDGE_ABI {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor shape " + to_string(shape) + " has a zero dimension");
  }
}

Scalar apply(ElementwiseOp op, Scalar a, Scalar b) {
  switch (op) {
    case ElementwiseOp::kAdd: return a + b;
    case ElementwiseOp::kSub: return a - b;
    case ElementwiseOp::kMul: return a * b;
    case ElementwiseOp::kDiv: return a / b;
    case ElementwiseOp::kMax: return std::max(a, b);
  }
  return a;
}

}  // namespace

Tensor::Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape_));
  }
}

Scalar Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(Scalar value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise shape mismatch: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out[i] = apply(op, a[i], b[i]);
    if (!std::isfinite(out[i])) throw NumericError("non-finite result");
  }
  return out;
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, Scalar b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out[i] = apply(op, a[i], b);
    if (!std::isfinite(out[i])) throw NumericError("non-finite result");
  }
  return out;
}

Scalar sum(const Tensor& t) {
  double acc = 0.0;
  for (auto v : t.data()) acc += v;
  return static_cast<Scalar>(acc);
}

Scalar dot(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("dot shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += double(a[i]) * double(b[i]);
  return static_cast<Scalar>(acc);
}

}  // namespace colorbridge
