#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "embvos/parallel.hpp"
#include "embvos/tensor.hpp"

/// Plain forward/backward kernels on tensors. The tape wrappers in ops.hpp
/// call these; tests compare them against nested-loop oracles.
namespace embvos::kernels {

inline Index conv_out_extent(Index in, Index stride) { return (in + stride - 1) / stride; }

template <typename T>
void check_depthwise(const Tensor<T>& x, const Tensor<T>& k, Index stride) {
  require_rank(x.shape(), 3, "depthwise_conv2d input");
  require_rank(k.shape(), 3, "depthwise_conv2d kernel");
  if (k.dim(2) != x.dim(2))
    throw ShapeError("depthwise_conv2d: kernel has " + std::to_string(k.dim(2)) +
                     " channels, input has " + std::to_string(x.dim(2)));
  if (k.dim(0) % 2 == 0 || k.dim(1) % 2 == 0)
    throw ShapeError("depthwise_conv2d: kernel extents must be odd, got " + shape_string(k.shape()));
  if (stride < 1) throw ContractError("depthwise_conv2d: stride must be >= 1");
}

/// Per-channel 2-D convolution with zero "same" padding; output cell (y, x)
/// is centered on input (y*stride, x*stride).
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& k, Index stride = 1) {
  check_depthwise(x, k, stride);
  const Index H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const Index kh = k.dim(0), kw = k.dim(1), ph = kh / 2, pw = kw / 2;
  const Index Ho = conv_out_extent(H, stride), Wo = conv_out_extent(W, stride);
  Tensor<T> out({Ho, Wo, C});
  const T* xd = x.data();
  const T* kd = k.data();
  T* od = out.data();
  parallel_for(0, Ho, [&](Index y0, Index y1) {
    for (Index y = y0; y < y1; ++y)
      for (Index xo = 0; xo < Wo; ++xo) {
        T* o = od + (y * Wo + xo) * C;
        for (Index i = 0; i < kh; ++i) {
          const Index Y = y * stride + i - ph;
          if (Y < 0 || Y >= H) continue;
          for (Index j = 0; j < kw; ++j) {
            const Index X = xo * stride + j - pw;
            if (X < 0 || X >= W) continue;
            const T* xp = xd + (Y * W + X) * C;
            const T* kp = kd + (i * kw + j) * C;
            for (Index c = 0; c < C; ++c) o[c] += xp[c] * kp[c];
          }
        }
      }
  });
  return out;
}

/// Accumulates input and kernel gradients of depthwise_conv2d.
template <typename T>
void depthwise_conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, Index stride,
                               const Tensor<T>& g, Tensor<T>* dx, Tensor<T>* dk) {
  const Index H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const Index kh = k.dim(0), kw = k.dim(1), ph = kh / 2, pw = kw / 2;
  const Index Ho = g.dim(0), Wo = g.dim(1);
  const T* xd = x.data();
  const T* kd = k.data();
  const T* gd = g.data();
  for (Index y = 0; y < Ho; ++y)
    for (Index xo = 0; xo < Wo; ++xo) {
      const T* gp = gd + (y * Wo + xo) * C;
      for (Index i = 0; i < kh; ++i) {
        const Index Y = y * stride + i - ph;
        if (Y < 0 || Y >= H) continue;
        for (Index j = 0; j < kw; ++j) {
          const Index X = xo * stride + j - pw;
          if (X < 0 || X >= W) continue;
          const Index xoff = (Y * W + X) * C, koff = (i * kw + j) * C;
          if (dx) {
            T* dxp = dx->data() + xoff;
            const T* kp = kd + koff;
            for (Index c = 0; c < C; ++c) dxp[c] += gp[c] * kp[c];
          }
          if (dk) {
            T* dkp = dk->data() + koff;
            const T* xp = xd + xoff;
            for (Index c = 0; c < C; ++c) dkp[c] += gp[c] * xp[c];
          }
        }
      }
    }
}

template <typename T>
void check_pointwise(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b) {
  require_rank(x.shape(), 3, "pointwise_conv2d input");
  require_rank(k.shape(), 2, "pointwise_conv2d kernel");
  require_rank(b.shape(), 1, "pointwise_conv2d bias");
  if (k.dim(0) != x.dim(2) || b.dim(0) != k.dim(1))
    throw ShapeError("pointwise_conv2d: input " + shape_string(x.shape()) + ", kernel " +
                     shape_string(k.shape()) + ", bias " + shape_string(b.shape()));
}

/// 1x1 convolution: out[y,x,:] = x[y,x,:] * k + b.
template <typename T>
Tensor<T> pointwise_conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b) {
  check_pointwise(x, k, b);
  const Index H = x.dim(0), W = x.dim(1), Cin = k.dim(0), Cout = k.dim(1);
  Tensor<T> out({H, W, Cout});
  auto om = out.matrix(H * W, Cout);
  om.noalias() = x.matrix(H * W, Cin) * k.matrix(Cin, Cout);
  om.rowwise() += b.vec().transpose();
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<T> out({a.dim(0), b.dim(1)});
  out.matrix(a.dim(0), b.dim(1)).noalias() =
      a.matrix(a.dim(0), a.dim(1)) * b.matrix(b.dim(0), b.dim(1));
  return out;
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("softmax_lastdim: rank-0 input");
  Tensor<T> out(x.shape());
  const Index n = x.dim(-1);
  if (n == 0) return out;
  const Index rows = x.size() / n;
  for (Index r = 0; r < rows; ++r) {
    const T* xp = x.data() + r * n;
    T* op = out.data() + r * n;
    T m = xp[0];
    for (Index i = 1; i < n; ++i) m = std::max(m, xp[i]);
    T sum = 0;
    for (Index i = 0; i < n; ++i) {
      op[i] = std::exp(xp[i] - m);
      sum += op[i];
    }
    for (Index i = 0; i < n; ++i) op[i] /= sum;
  }
  return out;
}

/// Minimum over the last axis. Ties resolve to the smallest index.
template <typename T>
Tensor<T> min_lastdim(const Tensor<T>& x, std::vector<Index>* argmin) {
  if (x.rank() == 0 || x.dim(-1) == 0)
    throw ShapeError("min_lastdim: empty reduction axis in shape " + shape_string(x.shape()));
  const Index n = x.dim(-1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  Tensor<T> out(out_shape);
  const Index rows = out.size();
  if (argmin) argmin->assign(static_cast<std::size_t>(rows), 0);
  for (Index r = 0; r < rows; ++r) {
    const T* xp = x.data() + r * n;
    Index best = 0;
    for (Index i = 1; i < n; ++i)
      if (xp[i] < xp[best]) best = i;
    out[r] = xp[best];
    if (argmin) (*argmin)[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

/// The embedding distance 1 - 2/(1 + exp(s)) of a squared norm s >= 0.
/// Saturates to exactly 1 once exp(s) overflows.
template <typename T>
T embedding_distance_from_sq(T s) {
  return T(1) - T(2) / (T(1) + std::exp(s));
}

/// d'(s) written in terms of d: (1 - d^2) / 2.
template <typename T>
T embedding_distance_slope(T d) {
  return (T(1) - d * d) / T(2);
}

}  // namespace embvos::kernels
