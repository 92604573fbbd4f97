#pragma once

#include "colorbridge/abi.hpp"

#include "colorbridge/autograd.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI::ops {

// Elementwise arithmetic. `b` is a tensor of the same shape or a scalar;
// there is no other broadcasting.
Variable elementwise(ElementwiseOp op, const Variable& a, const Variable& b);
Variable elementwise(ElementwiseOp op, const Variable& a, Scalar b);

inline Variable add(const Variable& a, const Variable& b) { return elementwise(ElementwiseOp::kAdd, a, b); }
inline Variable sub(const Variable& a, const Variable& b) { return elementwise(ElementwiseOp::kSub, a, b); }
inline Variable mul(const Variable& a, const Variable& b) { return elementwise(ElementwiseOp::kMul, a, b); }
inline Variable div(const Variable& a, const Variable& b) { return elementwise(ElementwiseOp::kDiv, a, b); }
inline Variable maximum(const Variable& a, const Variable& b) { return elementwise(ElementwiseOp::kMax, a, b); }

Variable sum(const Variable& x);
Variable mean(const Variable& x);
Variable reshape(const Variable& x, Shape shape);

struct ConvGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation. x [N,C,H,W], weight [O,C,k,k], bias [O] or undefined.
Variable conv2d(const Variable& x, const Variable& weight, const Variable& bias, ConvGeometry g);

/// Adjoint of conv2d. x [N,C,H,W], weight [C,O,k,k], bias [O] or undefined.
/// Output spatial size is (H-1)*stride - 2*padding + kernel.
Variable conv_transpose2d(const Variable& x, const Variable& weight, const Variable& bias,
                          ConvGeometry g);

Variable max_pool2d(const Variable& x, std::size_t kernel, std::size_t stride);

/// [N,C,H,W] -> [N,C]
Variable global_avg_pool(const Variable& x);

/// x [N,in], weight [out,in], bias [out].
Variable linear(const Variable& x, const Variable& weight, const Variable& bias);

struct BatchNormBuffers {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);
};

/// Per-channel batch normalization of [N,C,H,W]. In training mode the batch
/// statistics are used and the running buffers updated; otherwise only the
/// running buffers are read.
Variable batch_norm2d(const Variable& x, const Variable& gamma, const Variable& beta,
                      BatchNormBuffers buffers, bool training);

Variable leaky_relu(const Variable& x, Scalar slope);
inline Variable relu(const Variable& x) { return leaky_relu(x, Scalar{0}); }

/// out[n,c,h*r+i,w*r+j] = in[n, c*r*r + i*r + j, h, w]
Variable pixel_shuffle(const Variable& x, std::size_t r);
Variable pixel_unshuffle(const Variable& x, std::size_t r);

/// [N,1,H,W] -> [N,copies,H,W] with identical channels.
Variable replicate_channels(const Variable& x, std::size_t copies);

/// Mean over entries with mask != 0 of the binary cross-entropy between
/// sigmoid(logits) and targets. An all-zero mask yields 0 with zero gradient.
Variable bce_with_logits(const Variable& logits, const Tensor& targets, const Tensor& mask);

}  // namespace colorbridge::ops
