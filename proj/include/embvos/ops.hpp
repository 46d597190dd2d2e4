#pragma once

#include <vector>

#include "embvos/kernels.hpp"
#include "embvos/tape.hpp"

/// Differentiable operator set. Each function evaluates a kernel, records
/// the result on the operands' tape and attaches the matching backward rule.
namespace embvos {

namespace detail {
template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape || a.tape == nullptr) throw ContractError("operands live on different tapes");
  return *a.tape;
}
}  // namespace detail

template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> k, Index stride = 1) {
  Tape<T>& tape = detail::same_tape(x, k);
  return tape.record(kernels::depthwise_conv2d(x.value(), k.value(), stride), {x, k},
                     [x, k, stride](Tape<T>& t, Index self) {
                       kernels::depthwise_conv2d_backward(
                           t.value(x.id), t.value(k.id), stride, t.grad(self),
                           x.requires_grad() ? &t.grad(x.id) : nullptr,
                           k.requires_grad() ? &t.grad(k.id) : nullptr);
                     });
}

template <typename T>
Var<T> pointwise_conv2d(Var<T> x, Var<T> k, Var<T> b) {
  Tape<T>& tape = detail::same_tape(x, k);
  detail::same_tape(x, b);
  return tape.record(kernels::pointwise_conv2d(x.value(), k.value(), b.value()), {x, k, b},
                     [x, k, b](Tape<T>& t, Index self) {
                       const Tensor<T>& xv = t.value(x.id);
                       const Index P = xv.dim(0) * xv.dim(1), Cin = xv.dim(2);
                       const Index Cout = t.value(k.id).dim(1);
                       const auto g = t.grad(self).matrix(P, Cout);
                       if (x.requires_grad())
                         t.grad(x.id).matrix(P, Cin).noalias() +=
                             g * t.value(k.id).matrix(Cin, Cout).transpose();
                       if (k.requires_grad())
                         t.grad(k.id).matrix(Cin, Cout).noalias() += xv.matrix(P, Cin).transpose() * g;
                       if (b.requires_grad()) t.grad(b.id).vec() += g.colwise().sum().transpose();
                     });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  return tape.record(kernels::matmul(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, Index self) {
    const Tensor<T>& av = t.value(a.id);
    const Tensor<T>& bv = t.value(b.id);
    const Index N = av.dim(0), K = av.dim(1), M = bv.dim(1);
    const auto g = t.grad(self).matrix(N, M);
    if (a.requires_grad()) t.grad(a.id).matrix(N, K).noalias() += g * bv.matrix(K, M).transpose();
    if (b.requires_grad()) t.grad(b.id).matrix(K, M).noalias() += av.matrix(N, K).transpose() * g;
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  out.vec() = out.vec().cwiseMax(T(0));
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, Index self) {
    const Tensor<T>& xv = t.value(x.id);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& dx = t.grad(x.id);
    for (Index i = 0; i < xv.size(); ++i)
      if (xv.data()[i] > T(0)) dx.data()[i] += g.data()[i];
  });
}

template <typename T>
Var<T> softmax_lastdim(Var<T> x) {
  return x.tape->record(kernels::softmax_lastdim(x.value()), {x}, [x](Tape<T>& t, Index self) {
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& dx = t.grad(x.id);
    const Index n = y.dim(-1);
    if (n == 0) return;
    for (Index r = 0; r < y.size() / n; ++r) {
      const T* yp = y.data() + r * n;
      const T* gp = g.data() + r * n;
      T dot = 0;
      for (Index i = 0; i < n; ++i) dot += gp[i] * yp[i];
      for (Index i = 0; i < n; ++i) dx.data()[r * n + i] += yp[i] * (gp[i] - dot);
    }
  });
}

template <typename T>
struct MinResult {
  Var<T> values;
  std::vector<Index> argmin;
};

/// Minimum over the last axis; the backward rule routes each incoming
/// gradient entirely to the argmin slot.
template <typename T>
MinResult<T> min_lastdim_with_argmin(Var<T> x) {
  std::vector<Index> argmin;
  Tensor<T> values = kernels::min_lastdim(x.value(), &argmin);
  const Index n = x.value().dim(-1);
  Var<T> out = x.tape->record(std::move(values), {x}, [x, argmin, n](Tape<T>& t, Index self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& dx = t.grad(x.id);
    for (Index r = 0; r < g.size(); ++r) dx.data()[r * n + argmin[static_cast<std::size_t>(r)]] += g.data()[r];
  });
  return {out, std::move(argmin)};
}

/// Concatenates along the last axis; all leading extents must agree.
template <typename T>
Var<T> concat_lastdim(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim: no operands");
  Tape<T>& tape = *parts.front().tape;
  Shape lead(parts.front().shape().begin(), parts.front().shape().end() - 1);
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    if (p.tape != &tape) throw ContractError("operands live on different tapes");
    Shape l(p.shape().begin(), p.shape().end() - 1);
    if (p.value().rank() == 0 || l != lead)
      throw ShapeError("concat_lastdim: incompatible shape " + shape_string(p.shape()));
    widths.push_back(p.shape().back());
    total += widths.back();
  }
  const Index rows = shape_size(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out(out_shape);
  Index col = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.matrix(rows, total).middleCols(col, widths[i]) = parts[i].value().matrix(rows, widths[i]);
    col += widths[i];
  }
  return tape.record(std::move(out), parts, [parts, widths, rows, total](Tape<T>& t, Index self) {
    const auto g = t.grad(self).matrix(rows, total);
    Index c = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (parts[i].requires_grad()) t.grad(parts[i].id).matrix(rows, widths[i]) += g.middleCols(c, widths[i]);
      c += widths[i];
    }
  });
}

/// x[i] along the leading axis.
template <typename T>
Var<T> select_first(Var<T> x, Index i) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0 || i < 0 || i >= xv.dim(0))
    throw ContractError("select_first: index " + std::to_string(i) + " for shape " + shape_string(xv.shape()));
  Shape out_shape(xv.shape().begin() + 1, xv.shape().end());
  const Index n = shape_size(out_shape);
  Tensor<T> out(out_shape);
  out.vec() = xv.vec().segment(i * n, n);
  return x.tape->record(std::move(out), {x}, [x, i, n](Tape<T>& t, Index self) {
    t.grad(x.id).vec().segment(i * n, n) += t.grad(self).vec();
  });
}

/// Columns [c0, c0 + width) of the last axis.
template <typename T>
Var<T> slice_lastdim(Var<T> x, Index c0, Index width) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0 || c0 < 0 || width < 0 || c0 + width > xv.dim(-1))
    throw ContractError("slice_lastdim: columns [" + std::to_string(c0) + ", " + std::to_string(c0 + width) +
                        ") of shape " + shape_string(xv.shape()));
  const Index n = xv.dim(-1), rows = xv.size() / std::max<Index>(1, n);
  Shape out_shape = xv.shape();
  out_shape.back() = width;
  Tensor<T> out(out_shape);
  out.matrix(rows, width) = xv.matrix(rows, n).middleCols(c0, width);
  return x.tape->record(std::move(out), {x}, [x, c0, width, rows, n](Tape<T>& t, Index self) {
    t.grad(x.id).matrix(rows, n).middleCols(c0, width) += t.grad(self).matrix(rows, width);
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  return x.tape->record(x.value().reshaped(std::move(shape)), {x}, [x](Tape<T>& t, Index self) {
    t.grad(x.id).vec() += t.grad(self).vec();
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  require_shape(b.shape(), a.shape(), "add");
  Tensor<T> out = a.value();
  out.vec() += b.value().vec();
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, Index self) {
    if (a.requires_grad()) t.grad(a.id).vec() += t.grad(self).vec();
    if (b.requires_grad()) t.grad(b.id).vec() += t.grad(self).vec();
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  require_shape(b.shape(), a.shape(), "sub");
  Tensor<T> out = a.value();
  out.vec() -= b.value().vec();
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, Index self) {
    if (a.requires_grad()) t.grad(a.id).vec() += t.grad(self).vec();
    if (b.requires_grad()) t.grad(b.id).vec() -= t.grad(self).vec();
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  require_shape(b.shape(), a.shape(), "mul");
  Tensor<T> out = a.value();
  out.vec().array() *= b.value().vec().array();
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, Index self) {
    const auto g = t.grad(self).vec().array();
    if (a.requires_grad()) t.grad(a.id).vec().array() += g * t.value(b.id).vec().array();
    if (b.requires_grad()) t.grad(b.id).vec().array() += g * t.value(a.id).vec().array();
  });
}

template <typename T>
Var<T> square(Var<T> x) {
  Tensor<T> out = x.value();
  out.vec() = out.vec().cwiseAbs2();
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, Index self) {
    t.grad(x.id).vec().array() += T(2) * t.value(x.id).vec().array() * t.grad(self).vec().array();
  });
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
  Tensor<T> out = x.value();
  out.vec() *= c;
  return x.tape->record(std::move(out), {x}, [x, c](Tape<T>& t, Index self) {
    t.grad(x.id).vec() += c * t.grad(self).vec();
  });
}

/// Sum of all elements, accumulated serially in flat order.
template <typename T>
Var<T> sum(Var<T> x) {
  T acc = 0;
  for (const T v : x.value()) acc += v;
  return x.tape->record(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& t, Index self) {
    t.grad(x.id).vec().array() += t.grad(self)[0];
  });
}

/// Elementwise embedding distance 1 - 2/(1 + exp(s)) of squared norms s.
template <typename T>
Var<T> embedding_distance(Var<T> s) {
  Tensor<T> out = s.value();
  for (T& v : out) v = kernels::embedding_distance_from_sq(v);
  return s.tape->record(std::move(out), {s}, [s](Tape<T>& t, Index self) {
    const Tensor<T>& d = t.value(self);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ds = t.grad(s.id);
    for (Index i = 0; i < d.size(); ++i) ds.data()[i] += g.data()[i] * kernels::embedding_distance_slope(d.data()[i]);
  });
}

}  // namespace embvos
