#include "colorbridge/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace colorbridge::inline COLORBRIDGE_ABI::ops {

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Eigen's vectorized reductions start at the first aligned address, so their
// rounding depends on where the buffer lives. Sum in a fixed order instead.
Scalar ordered_sum(const Scalar* p, std::size_t n, std::size_t stride) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += double(p[i * stride]);
  return Scalar(acc);
}

void require_rank(const Variable& x, std::size_t rank, const char* op) {
  if (x.value().rank() != rank) {
    throw ShapeError(std::string(op) + " expects a rank-" + std::to_string(rank) +
                     " input, got " + to_string(x.shape()));
  }
}

struct ImageDims {
  std::size_t n, c, h, w;
};

ImageDims dims_of(const Tensor& t) { return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)}; }

// Unfolds [N,C,H,W] patches into a [C*k*k, N*Ho*Wo] matrix.
void im2col(const Scalar* x, const ImageDims& d, ConvGeometry g, std::size_t ho, std::size_t wo,
            Scalar* cols) {
  const std::size_t k = g.kernel;
  const std::size_t plane = ho * wo;
  const std::size_t row_len = d.n * plane;
  for (std::size_t c = 0; c < d.c; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        Scalar* dst = cols + ((c * k + ki) * k + kj) * row_len;
        for (std::size_t n = 0; n < d.n; ++n) {
          const Scalar* src = x + (n * d.c + c) * d.h * d.w;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = long(oh * g.stride + ki) - long(g.padding);
            Scalar* row = dst + n * plane + oh * wo;
            if (ih < 0 || ih >= long(d.h)) {
              std::fill(row, row + wo, Scalar{0});
              continue;
            }
            const Scalar* src_row = src + std::size_t(ih) * d.w;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = long(ow * g.stride + kj) - long(g.padding);
              row[ow] = (iw < 0 || iw >= long(d.w)) ? Scalar{0} : src_row[iw];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters (accumulates) columns back into [N,C,H,W].
void col2im(const Scalar* cols, const ImageDims& d, ConvGeometry g, std::size_t ho,
            std::size_t wo, Scalar* x) {
  const std::size_t k = g.kernel;
  const std::size_t plane = ho * wo;
  const std::size_t row_len = d.n * plane;
  for (std::size_t c = 0; c < d.c; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const Scalar* src = cols + ((c * k + ki) * k + kj) * row_len;
        for (std::size_t n = 0; n < d.n; ++n) {
          Scalar* dst = x + (n * d.c + c) * d.h * d.w;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = long(oh * g.stride + ki) - long(g.padding);
            if (ih < 0 || ih >= long(d.h)) continue;
            const Scalar* row = src + n * plane + oh * wo;
            Scalar* dst_row = dst + std::size_t(ih) * d.w;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = long(ow * g.stride + kj) - long(g.padding);
              if (iw >= 0 && iw < long(d.w)) dst_row[iw] += row[ow];
            }
          }
        }
      }
    }
  }
}

// [N,C,P] <-> [C,N*P]
void nchw_to_cn(const Scalar* src, std::size_t n, std::size_t c, std::size_t p, Scalar* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      std::copy_n(src + (i * c + j) * p, p, dst + (j * n + i) * p);
}

void cn_to_nchw(const Scalar* src, std::size_t n, std::size_t c, std::size_t p, Scalar* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      std::copy_n(src + (j * n + i) * p, p, dst + (i * c + j) * p);
}

std::size_t conv_out_size(std::size_t in, ConvGeometry g) {
  return (in + 2 * g.padding - g.kernel) / g.stride + 1;
}

}  // namespace

Variable elementwise(ElementwiseOp op, const Variable& a, const Variable& b) {
  Tensor out = colorbridge::elementwise(op, a.value(), b.value());
  if (BranchTrace* trace = active_branch_trace(); trace && op == ElementwiseOp::kMax) {
    for (std::size_t i = 0; i < out.numel(); ++i) trace->mix(a.value()[i] >= b.value()[i]);
  }
  return record_op(std::move(out), {a, b}, [op, a, b](const Tensor& g) mutable {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor da(av.shape()), db(bv.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      switch (op) {
        case ElementwiseOp::kAdd: da[i] = g[i]; db[i] = g[i]; break;
        case ElementwiseOp::kSub: da[i] = g[i]; db[i] = -g[i]; break;
        case ElementwiseOp::kMul: da[i] = g[i] * bv[i]; db[i] = g[i] * av[i]; break;
        case ElementwiseOp::kDiv:
          da[i] = g[i] / bv[i];
          db[i] = -g[i] * av[i] / (bv[i] * bv[i]);
          break;
        case ElementwiseOp::kMax:
          if (av[i] >= bv[i]) da[i] = g[i]; else db[i] = g[i];
          break;
      }
    }
    accumulate_grad(a, da);
    accumulate_grad(b, db);
  });
}

Variable elementwise(ElementwiseOp op, const Variable& a, Scalar b) {
  Tensor out = colorbridge::elementwise(op, a.value(), b);
  if (BranchTrace* trace = active_branch_trace(); trace && op == ElementwiseOp::kMax) {
    for (std::size_t i = 0; i < out.numel(); ++i) trace->mix(a.value()[i] >= b);
  }
  return record_op(std::move(out), {a}, [op, a, b](const Tensor& g) mutable {
    const Tensor& av = a.value();
    Tensor da(av.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      switch (op) {
        case ElementwiseOp::kAdd:
        case ElementwiseOp::kSub: da[i] = g[i]; break;
        case ElementwiseOp::kMul: da[i] = g[i] * b; break;
        case ElementwiseOp::kDiv: da[i] = g[i] / b; break;
        case ElementwiseOp::kMax: da[i] = av[i] >= b ? g[i] : Scalar{0}; break;
      }
    }
    accumulate_grad(a, da);
  });
}

Variable sum(const Variable& x) {
  return record_op(Tensor::scalar(colorbridge::sum(x.value())), {x},
                   [x](const Tensor& g) mutable {
                     accumulate_grad(x, Tensor(x.shape(), g[0]));
                   });
}

Variable mean(const Variable& x) {
  const Scalar n = Scalar(x.value().numel());
  return record_op(Tensor::scalar(colorbridge::sum(x.value()) / n), {x},
                   [x, n](const Tensor& g) mutable {
                     accumulate_grad(x, Tensor(x.shape(), g[0] / n));
                   });
}

Variable reshape(const Variable& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return record_op(std::move(out), {x}, [x](const Tensor& g) mutable {
    accumulate_grad(x, g.reshaped(x.shape()));
  });
}

Variable conv2d(const Variable& x, const Variable& weight, const Variable& bias, ConvGeometry g) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const ImageDims d = dims_of(x.value());
  const std::size_t out_c = weight.shape()[0];
  if (weight.shape()[1] != d.c) {
    throw ShapeError("conv2d channel mismatch: expected " + std::to_string(weight.shape()[1]) +
                     " input channels, got " + std::to_string(d.c));
  }
  if (weight.shape()[2] != g.kernel || weight.shape()[3] != g.kernel) {
    throw ShapeError("conv2d weight " + to_string(weight.shape()) + " does not match kernel " +
                     std::to_string(g.kernel));
  }
  if (g.stride == 0) throw ShapeError("conv2d stride must be positive");
  if (d.h + 2 * g.padding < g.kernel || d.w + 2 * g.padding < g.kernel) {
    throw ShapeError("conv2d kernel " + std::to_string(g.kernel) + " larger than padded input " +
                     to_string(x.shape()));
  }
  const std::size_t ho = conv_out_size(d.h, g), wo = conv_out_size(d.w, g);
  const std::size_t kk = d.c * g.kernel * g.kernel;
  const std::size_t cols_n = d.n * ho * wo;

  std::vector<Scalar> cols(kk * cols_n);
  im2col(x.value().ptr(), d, g, ho, wo, cols.data());
  std::vector<Scalar> out_cn(out_c * cols_n);
  {
    ConstMatMap w(weight.value().ptr(), out_c, kk);
    ConstMatMap c(cols.data(), kk, cols_n);
    MatMap o(out_cn.data(), out_c, cols_n);
    o.noalias() = w * c;
  }
  Tensor out({d.n, out_c, ho, wo});
  cn_to_nchw(out_cn.data(), d.n, out_c, ho * wo, out.ptr());
  if (bias.defined()) {
    const Tensor& b = bias.value();
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t o = 0; o < out_c; ++o) {
        Scalar* p = out.ptr() + (n * out_c + o) * ho * wo;
        for (std::size_t i = 0; i < ho * wo; ++i) p[i] += b[o];
      }
  }

  return record_op(std::move(out), {x, weight, bias},
                   [x, weight, bias, g, d, ho, wo, out_c, kk, cols_n](const Tensor& grad) mutable {
    std::vector<Scalar> gcn(out_c * cols_n);
    nchw_to_cn(grad.ptr(), d.n, out_c, ho * wo, gcn.data());
    ConstMatMap gm(gcn.data(), out_c, cols_n);
    if (bias.requires_grad()) {
      Tensor db(bias.shape());
      for (std::size_t o = 0; o < out_c; ++o) db[o] = ordered_sum(gcn.data() + o * cols_n, cols_n, 1);
      accumulate_grad(bias, db);
    }
    const bool need_w = weight.requires_grad();
    const bool need_x = x.requires_grad();
    if (!need_w && !need_x) return;
    if (need_w) {
      std::vector<Scalar> cols(kk * cols_n);
      im2col(x.value().ptr(), d, g, ho, wo, cols.data());
      ConstMatMap c(cols.data(), kk, cols_n);
      Tensor dw(weight.shape());
      MatMap dwm(dw.ptr(), out_c, kk);
      dwm.noalias() = gm * c.transpose();
      accumulate_grad(weight, dw);
    }
    if (need_x) {
      std::vector<Scalar> dcols(kk * cols_n);
      ConstMatMap w(weight.value().ptr(), out_c, kk);
      MatMap dc(dcols.data(), kk, cols_n);
      dc.noalias() = w.transpose() * gm;
      Tensor dx(x.shape());
      col2im(dcols.data(), d, g, ho, wo, dx.ptr());
      accumulate_grad(x, dx);
    }
  });
}

Variable conv_transpose2d(const Variable& x, const Variable& weight, const Variable& bias,
                          ConvGeometry g) {
  require_rank(x, 4, "conv_transpose2d");
  require_rank(weight, 4, "conv_transpose2d weight");
  const ImageDims d = dims_of(x.value());
  if (weight.shape()[0] != d.c) {
    throw ShapeError("conv_transpose2d channel mismatch: expected " +
                     std::to_string(weight.shape()[0]) + " input channels, got " +
                     std::to_string(d.c));
  }
  if (weight.shape()[2] != g.kernel || weight.shape()[3] != g.kernel) {
    throw ShapeError("conv_transpose2d weight " + to_string(weight.shape()) +
                     " does not match kernel " + std::to_string(g.kernel));
  }
  if (g.stride == 0) throw ShapeError("conv_transpose2d stride must be positive");
  const long ho_l = long((d.h - 1) * g.stride + g.kernel) - long(2 * g.padding);
  const long wo_l = long((d.w - 1) * g.stride + g.kernel) - long(2 * g.padding);
  if (ho_l <= 0 || wo_l <= 0) {
    throw ShapeError("conv_transpose2d produces an empty output for input " + to_string(x.shape()));
  }
  const std::size_t out_c = weight.shape()[1];
  const std::size_t ho = std::size_t(ho_l), wo = std::size_t(wo_l);
  const std::size_t kk = out_c * g.kernel * g.kernel;
  const std::size_t cols_n = d.n * d.h * d.w;
  // Geometry of the forward convolution this operator is the adjoint of.
  const ImageDims od{d.n, out_c, ho, wo};

  std::vector<Scalar> xcn(d.c * cols_n);
  nchw_to_cn(x.value().ptr(), d.n, d.c, d.h * d.w, xcn.data());
  std::vector<Scalar> cols(kk * cols_n);
  {
    ConstMatMap w(weight.value().ptr(), d.c, kk);
    ConstMatMap xm(xcn.data(), d.c, cols_n);
    MatMap c(cols.data(), kk, cols_n);
    c.noalias() = w.transpose() * xm;
  }
  Tensor out({d.n, out_c, ho, wo});
  col2im(cols.data(), od, g, d.h, d.w, out.ptr());
  if (bias.defined()) {
    const Tensor& b = bias.value();
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t o = 0; o < out_c; ++o) {
        Scalar* p = out.ptr() + (n * out_c + o) * ho * wo;
        for (std::size_t i = 0; i < ho * wo; ++i) p[i] += b[o];
      }
  }

  return record_op(std::move(out), {x, weight, bias},
                   [x, weight, bias, g, d, od, out_c, kk, cols_n](const Tensor& grad) mutable {
    if (bias.requires_grad()) {
      Tensor db(bias.shape());
      const std::size_t plane = od.h * od.w;
      for (std::size_t n = 0; n < od.n; ++n)
        for (std::size_t o = 0; o < out_c; ++o) {
          const Scalar* p = grad.ptr() + (n * out_c + o) * plane;
          Scalar acc = 0;
          for (std::size_t i = 0; i < plane; ++i) acc += p[i];
          db[o] += acc;
        }
      accumulate_grad(bias, db);
    }
    const bool need_w = weight.requires_grad();
    const bool need_x = x.requires_grad();
    if (!need_w && !need_x) return;
    std::vector<Scalar> gcols(kk * cols_n);
    im2col(grad.ptr(), od, g, d.h, d.w, gcols.data());
    ConstMatMap gc(gcols.data(), kk, cols_n);
    if (need_w) {
      std::vector<Scalar> xcn(d.c * cols_n);
      nchw_to_cn(x.value().ptr(), d.n, d.c, d.h * d.w, xcn.data());
      ConstMatMap xm(xcn.data(), d.c, cols_n);
      Tensor dw(weight.shape());
      MatMap dwm(dw.ptr(), d.c, kk);
      dwm.noalias() = xm * gc.transpose();
      accumulate_grad(weight, dw);
    }
    if (need_x) {
      ConstMatMap w(weight.value().ptr(), d.c, kk);
      std::vector<Scalar> dxcn(d.c * cols_n);
      MatMap dxm(dxcn.data(), d.c, cols_n);
      dxm.noalias() = w * gc;
      Tensor dx(x.shape());
      cn_to_nchw(dxcn.data(), d.n, d.c, d.h * d.w, dx.ptr());
      accumulate_grad(x, dx);
    }
  });
}

Variable max_pool2d(const Variable& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 4, "max_pool2d");
  const ImageDims d = dims_of(x.value());
  if (kernel == 0 || stride == 0) throw ShapeError("max_pool2d kernel and stride must be positive");
  if (kernel > d.h || kernel > d.w) {
    throw ShapeError("max_pool2d window " + std::to_string(kernel) + " larger than input " +
                     to_string(x.shape()));
  }
  const std::size_t ho = (d.h - kernel) / stride + 1, wo = (d.w - kernel) / stride + 1;
  Tensor out({d.n, d.c, ho, wo});
  std::vector<std::size_t> argmax(out.numel());
  const Tensor& xv = x.value();
  std::size_t idx = 0;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = (n * d.c + c) * d.h * d.w;
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow, ++idx) {
          std::size_t best = base + oh * stride * d.w + ow * stride;
          for (std::size_t i = 0; i < kernel; ++i)
            for (std::size_t j = 0; j < kernel; ++j) {
              const std::size_t p = base + (oh * stride + i) * d.w + ow * stride + j;
              if (xv[p] > xv[best]) best = p;
            }
          argmax[idx] = best;
          out[idx] = xv[best];
        }
    }
  if (BranchTrace* trace = active_branch_trace()) {
    for (auto a : argmax) trace->mix(a);
  }
  return record_op(std::move(out), {x}, [x, argmax = std::move(argmax)](const Tensor& g) mutable {
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) dx[argmax[i]] += g[i];
    accumulate_grad(x, dx);
  });
}

Variable global_avg_pool(const Variable& x) {
  require_rank(x, 4, "global_avg_pool");
  const ImageDims d = dims_of(x.value());
  const std::size_t plane = d.h * d.w;
  Tensor out({d.n, d.c});
  for (std::size_t i = 0; i < d.n * d.c; ++i) {
    const Scalar* p = x.value().ptr() + i * plane;
    Scalar acc = 0;
    for (std::size_t j = 0; j < plane; ++j) acc += p[j];
    out[i] = acc / Scalar(plane);
  }
  return record_op(std::move(out), {x}, [x, d, plane](const Tensor& g) mutable {
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < d.n * d.c; ++i) {
      const Scalar v = g[i] / Scalar(plane);
      std::fill_n(dx.ptr() + i * plane, plane, v);
    }
    accumulate_grad(x, dx);
  });
}

Variable linear(const Variable& x, const Variable& weight, const Variable& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear weight");
  const std::size_t n = x.shape()[0], in = x.shape()[1], out_f = weight.shape()[0];
  if (weight.shape()[1] != in) {
    throw ShapeError("linear feature mismatch: expected " + std::to_string(weight.shape()[1]) +
                     " inputs, got " + std::to_string(in));
  }
  Tensor out({n, out_f});
  {
    ConstMatMap xm(x.value().ptr(), n, in);
    ConstMatMap wm(weight.value().ptr(), out_f, in);
    MatMap om(out.ptr(), n, out_f);
    om.noalias() = xm * wm.transpose();
    if (bias.defined()) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out_f; ++j) om(i, j) += bias.value()[j];
    }
  }
  return record_op(std::move(out), {x, weight, bias},
                   [x, weight, bias, n, in, out_f](const Tensor& g) mutable {
    ConstMatMap gm(g.ptr(), n, out_f);
    if (bias.requires_grad()) {
      Tensor db(bias.shape());
      for (std::size_t j = 0; j < out_f; ++j) db[j] = ordered_sum(g.ptr() + j, n, out_f);
      accumulate_grad(bias, db);
    }
    if (weight.requires_grad()) {
      Tensor dw(weight.shape());
      MatMap dwm(dw.ptr(), out_f, in);
      dwm.noalias() = gm.transpose() * ConstMatMap(x.value().ptr(), n, in);
      accumulate_grad(weight, dw);
    }
    if (x.requires_grad()) {
      Tensor dx(x.shape());
      MatMap dxm(dx.ptr(), n, in);
      dxm.noalias() = gm * ConstMatMap(weight.value().ptr(), out_f, in);
      accumulate_grad(x, dx);
    }
  });
}

Variable batch_norm2d(const Variable& x, const Variable& gamma, const Variable& beta,
                      BatchNormBuffers buffers, bool training) {
  require_rank(x, 4, "batch_norm2d");
  const ImageDims d = dims_of(x.value());
  if (gamma.value().numel() != d.c || beta.value().numel() != d.c) {
    throw ShapeError("batch_norm2d expects " + std::to_string(gamma.value().numel()) +
                     " channels, got " + std::to_string(d.c));
  }
  const std::size_t plane = d.h * d.w;
  const std::size_t m = d.n * plane;
  if (training && m < 2) throw ShapeError("batch_norm2d: degenerate batch (one element per channel)");

  const Tensor& xv = x.value();
  std::vector<Scalar> mu(d.c), inv_std(d.c);
  for (std::size_t c = 0; c < d.c; ++c) {
    if (training) {
      double s = 0.0, ss = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const Scalar* p = xv.ptr() + (n * d.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mean = s / double(m);
      for (std::size_t n = 0; n < d.n; ++n) {
        const Scalar* p = xv.ptr() + (n * d.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mean) * (p[i] - mean);
      }
      const double var = ss / double(m);
      mu[c] = Scalar(mean);
      inv_std[c] = Scalar(1.0 / std::sqrt(var + double(buffers.eps)));
      if (buffers.running_mean && buffers.running_var) {
        Tensor& rm = *buffers.running_mean;
        Tensor& rv = *buffers.running_var;
        const Scalar mom = buffers.momentum;
        rm[c] = (Scalar(1) - mom) * rm[c] + mom * Scalar(mean);
        rv[c] = (Scalar(1) - mom) * rv[c] + mom * Scalar(var * double(m) / double(m - 1));
      }
    } else {
      mu[c] = (*buffers.running_mean)[c];
      inv_std[c] = Scalar(1.0 / std::sqrt(double((*buffers.running_var)[c]) + double(buffers.eps)));
    }
  }

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t off = (n * d.c + c) * plane;
      const Scalar gc = gamma.value()[c], bc = beta.value()[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const Scalar h = (xv[off + i] - mu[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = gc * h + bc;
      }
    }

  return record_op(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, d, plane, m, training, inv_std = std::move(inv_std),
                    xhat = std::move(xhat)](const Tensor& g) mutable {
    std::vector<Scalar> sum_g(d.c, 0), sum_gx(d.c, 0);
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t off = (n * d.c + c) * plane;
        Scalar a = 0, b = 0;
        for (std::size_t i = 0; i < plane; ++i) {
          a += g[off + i];
          b += g[off + i] * xhat[off + i];
        }
        sum_g[c] += a;
        sum_gx[c] += b;
      }
    if (gamma.requires_grad()) {
      accumulate_grad(gamma, Tensor(gamma.shape(), sum_gx));
    }
    if (beta.requires_grad()) {
      accumulate_grad(beta, Tensor(beta.shape(), sum_g));
    }
    if (!x.requires_grad()) return;
    Tensor dx(x.shape());
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t off = (n * d.c + c) * plane;
        const Scalar scale = gamma.value()[c] * inv_std[c];
        if (training) {
          const Scalar mg = sum_g[c] / Scalar(m), mgx = sum_gx[c] / Scalar(m);
          for (std::size_t i = 0; i < plane; ++i)
            dx[off + i] = scale * (g[off + i] - mg - xhat[off + i] * mgx);
        } else {
          for (std::size_t i = 0; i < plane; ++i) dx[off + i] = scale * g[off + i];
        }
      }
    accumulate_grad(x, dx);
  });
}

Variable leaky_relu(const Variable& x, Scalar slope) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] >= 0 ? xv[i] : slope * xv[i];
  if (BranchTrace* trace = active_branch_trace()) {
    for (std::size_t i = 0; i < out.numel(); ++i) trace->mix(xv[i] >= 0);
  }
  return record_op(std::move(out), {x}, [x, slope](const Tensor& g) mutable {
    const Tensor& xv = x.value();
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = xv[i] >= 0 ? g[i] : slope * g[i];
    accumulate_grad(x, dx);
  });
}

namespace {

// Index of the input element that feeds each output element of pixel_shuffle.
std::vector<std::size_t> shuffle_map(const ImageDims& in, std::size_t r) {
  const std::size_t oc = in.c / (r * r), oh = in.h * r, ow = in.w * r;
  std::vector<std::size_t> map(in.n * in.c * in.h * in.w);
  std::size_t idx = 0;
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < oc; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x, ++idx) {
          const std::size_t h = y / r, i = y % r, w = x / r, j = x % r;
          const std::size_t ic = c * r * r + i * r + j;
          map[idx] = ((n * in.c + ic) * in.h + h) * in.w + w;
        }
  return map;
}

}  // namespace

Variable pixel_shuffle(const Variable& x, std::size_t r) {
  require_rank(x, 4, "pixel_shuffle");
  const ImageDims d = dims_of(x.value());
  if (r == 0 || d.c % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(d.c) + " channels not divisible by r^2=" +
                     std::to_string(r * r));
  }
  auto map = shuffle_map(d, r);
  Tensor out({d.n, d.c / (r * r), d.h * r, d.w * r});
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = x.value()[map[i]];
  return record_op(std::move(out), {x}, [x, map = std::move(map)](const Tensor& g) mutable {
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < map.size(); ++i) dx[map[i]] = g[i];
    accumulate_grad(x, dx);
  });
}

Variable pixel_unshuffle(const Variable& x, std::size_t r) {
  require_rank(x, 4, "pixel_unshuffle");
  const ImageDims d = dims_of(x.value());
  if (r == 0 || d.h % r != 0 || d.w % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial size " + to_string(x.shape()) +
                     " not divisible by " + std::to_string(r));
  }
  const ImageDims packed{d.n, d.c * r * r, d.h / r, d.w / r};
  auto map = shuffle_map(packed, r);  // map[shuffled index] = packed index
  Tensor out({packed.n, packed.c, packed.h, packed.w});
  for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] = x.value()[i];
  return record_op(std::move(out), {x}, [x, map = std::move(map)](const Tensor& g) mutable {
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < map.size(); ++i) dx[i] = g[map[i]];
    accumulate_grad(x, dx);
  });
}

Variable replicate_channels(const Variable& x, std::size_t copies) {
  require_rank(x, 4, "replicate_channels");
  const ImageDims d = dims_of(x.value());
  if (d.c != 1) {
    throw ShapeError("replicate_channels expects a single-channel input, got " +
                     to_string(x.shape()));
  }
  const std::size_t plane = d.h * d.w;
  Tensor out({d.n, copies, d.h, d.w});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < copies; ++c)
      std::copy_n(x.value().ptr() + n * plane, plane, out.ptr() + (n * copies + c) * plane);
  return record_op(std::move(out), {x}, [x, d, copies, plane](const Tensor& g) mutable {
    Tensor dx(x.shape());
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t c = 0; c < copies; ++c)
        for (std::size_t i = 0; i < plane; ++i)
          dx[n * plane + i] += g[(n * copies + c) * plane + i];
    accumulate_grad(x, dx);
  });
}

Variable bce_with_logits(const Variable& logits, const Tensor& targets, const Tensor& mask) {
  if (logits.shape() != targets.shape() || logits.shape() != mask.shape()) {
    throw ShapeError("bce shapes disagree: logits " + to_string(logits.shape()) + ", targets " +
                     to_string(targets.shape()) + ", mask " + to_string(mask.shape()));
  }
  const Tensor& z = logits.value();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < z.numel(); ++i) {
    if (mask[i] == 0) continue;
    const double zi = z[i], ti = targets[i];
    total += std::max(zi, 0.0) - zi * ti + std::log1p(std::exp(-std::abs(zi)));
    ++count;
  }
  const Scalar value = count ? Scalar(total / double(count)) : Scalar{0};
  return record_op(Tensor::scalar(value), {logits},
                   [logits, targets, mask, count](const Tensor& g) mutable {
    Tensor dz(logits.shape());
    if (count) {
      const Tensor& z = logits.value();
      for (std::size_t i = 0; i < z.numel(); ++i) {
        if (mask[i] == 0) continue;
        const double s = 1.0 / (1.0 + std::exp(-double(z[i])));
        dz[i] = Scalar(double(g[0]) * (s - double(targets[i])) / double(count));
      }
    }
    accumulate_grad(logits, dz);
  });
}

}  // namespace colorbridge::ops
