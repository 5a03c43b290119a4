#pragma once

// Differentiable tensor operations. Every op computes its forward value
// eagerly, records a backward rule on the input's tape, and reports FLOPs
// to the active flops::FlopScope.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <vector>

#include "genau/core/autograd.hpp"
#include "genau/core/error.hpp"
#include "genau/core/flops.hpp"
#include "genau/core/tensor.hpp"

namespace genau::ops {

namespace detail {

inline std::size_t normalize_axis(long axis, std::size_t rank) {
  long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(axis);
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
    out[i] = std::max(da, db);
  }
  return out;
}

// Element strides of `s` when viewed with broadcast shape `out` (0 on broadcast dims).
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < s.size(); ++k) {
    std::size_t i = s.size() - 1 - k;
    std::size_t o = out.size() - 1 - k;
    st[o] = s[i] == 1 ? 0 : stride;
    stride *= s[i];
  }
  return st;
}

// Calls fn(out_index, a_index, b_index) over every element of the broadcast result.
template <class Fn>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, Fn&& fn) {
  const std::size_t total = numel(out);
  if (sa == out && sb == out) {
    for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
    return;
  }
  const std::size_t nb = numel(sb), na = numel(sa);
  if (sa == out && sb.size() <= out.size() && std::equal(sb.begin(), sb.end(), out.end() - sb.size())) {
    for (std::size_t i = 0; i < total; ++i) fn(i, i, i % nb);
    return;
  }
  if (sb == out && sa.size() <= out.size() && std::equal(sa.begin(), sa.end(), out.end() - sa.size())) {
    for (std::size_t i = 0; i < total; ++i) fn(i, i % na, i);
    return;
  }
  const auto st_a = broadcast_strides(sa, out);
  const auto st_b = broadcast_strides(sb, out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < total; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += st_a[d];
      ib += st_b[d];
      if (idx[d] < out[d]) break;
      ia -= st_a[d] * out[d];
      ib -= st_b[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Sums a broadcast-shaped gradient back down to `target` shape.
template <class T>
Tensor<T> reduce_to(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor<T> out(target);
  T* o = out.ptr();
  const T* src = g.ptr();
  for_each_broadcast(g.shape(), g.shape(), target, [&](std::size_t i, std::size_t, std::size_t j) { o[j] += src[i]; });
  return out;
}

// C[m,n] (+)= A[m,k] * B[k,n], row-major, i-k-j order so the inner loop vectorizes.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T, class Fwd, class Deriv>
Var<T> unary(const Var<T>& x, Fwd fwd, Deriv deriv, std::uint64_t flops_per_elem = 1) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  flops::add(flops_per_elem * xv.size());
  Tape<T>& tape = x.tape();
  return tape.record(std::move(out), {x}, [x, deriv](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = x.value();
    Tensor<T> dx(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] = g[i] * deriv(xv[i]);
    t.accumulate(x, dx);
  });
}

}  // namespace detail

// ---- elementwise binary (numpy broadcasting) ------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Shape out_shape = detail::broadcast_shape(av.shape(), bv.shape());
  Tensor<T> out(out_shape);
  detail::for_each_broadcast(out_shape, av.shape(), bv.shape(),
                             [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] + bv[ib]; });
  flops::add(out.size());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (a.requires_grad()) t.accumulate(a, detail::reduce_to(g, a.shape()));
    if (b.requires_grad()) t.accumulate(b, detail::reduce_to(g, b.shape()));
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Shape out_shape = detail::broadcast_shape(av.shape(), bv.shape());
  Tensor<T> out(out_shape);
  detail::for_each_broadcast(out_shape, av.shape(), bv.shape(),
                             [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] - bv[ib]; });
  flops::add(out.size());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (a.requires_grad()) t.accumulate(a, detail::reduce_to(g, a.shape()));
    if (b.requires_grad()) {
      Tensor<T> gb = detail::reduce_to(g, b.shape());
      for (auto& v : gb.vec()) v = -v;
      t.accumulate(b, gb);
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Shape out_shape = detail::broadcast_shape(av.shape(), bv.shape());
  Tensor<T> out(out_shape);
  detail::for_each_broadcast(out_shape, av.shape(), bv.shape(),
                             [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] * bv[ib]; });
  flops::add(out.size());
  return a.tape().record(std::move(out), {a, b}, [a, b, out_shape](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (a.requires_grad()) {
      Tensor<T> ga(a.shape());
      detail::for_each_broadcast(out_shape, av.shape(), bv.shape(),
                                 [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * bv[ib]; });
      t.accumulate(a, ga);
    }
    if (b.requires_grad()) {
      Tensor<T> gb(b.shape());
      detail::for_each_broadcast(out_shape, av.shape(), bv.shape(),
                                 [&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * av[ia]; });
      t.accumulate(b, gb);
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T c) {
  return detail::unary<T>(x, [c](T v) { return c * v; }, [c](T) { return c; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return detail::unary<T>(x, [c](T v) { return v + c; }, [](T) { return T(1); });
}

// ---- elementwise unary ------------------------------------------------------

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <class T>
T gelu_value(T x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  return T(0.5) * x * (T(1) + std::tanh(k * (x + c * x * x * x)));
}

template <class T>
T gelu_derivative(T x) {
  constexpr T k = T(0.7978845608028654);
  constexpr T c = T(0.044715);
  const T u = k * (x + c * x * x * x);
  const T th = std::tanh(u);
  const T du = k * (T(1) + T(3) * c * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <class T>
Var<T> gelu(const Var<T>& x) {
  return detail::unary<T>(x, gelu_value<T>, gelu_derivative<T>, 8);
}

template <class T>
Var<T> silu(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      },
      4);
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return std::tanh(v); },
      [](T v) {
        const T th = std::tanh(v);
        return T(1) - th * th;
      },
      4);
}

template <class T>
Var<T> exp(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); }, 4);
}

template <class T>
Var<T> log(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return std::log(v); }, [](T v) { return T(1) / v; }, 4);
}

template <class T>
Var<T> abs(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return std::abs(v); }, [](T v) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <class T>
Var<T> square(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}

// Gradient passes only where lo < x < hi.
template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return detail::unary<T>(
      x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v) { return (v > lo && v < hi) ? T(1) : T(0); });
}

// ---- reductions ---------------------------------------------------------------

template <class T>
Var<T> sum(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  T s = 0;
  for (T v : xv.vec()) s += v;
  flops::add(xv.size());
  return x.tape().record(Tensor<T>::scalar(s), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, Tensor<T>(x.shape(), g[0]));
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

// ---- shape ops -----------------------------------------------------------------

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(shape);
  return x.tape().record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, g.reshaped(x.shape()));
  });
}

template <class T>
Var<T> transpose(const Var<T>& x) {
  Tensor<T> out = transpose_last(x.value());
  return x.tape().record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, transpose_last(g));
  });
}

namespace detail {
template <class T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[axes[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * s[i + 1];
  std::vector<std::size_t> st(r);
  for (std::size_t i = 0; i < r; ++i) st[i] = in_strides[axes[i]];
  Tensor<T> out(out_shape);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  const T* xp = x.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xp[src];
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      src += st[d];
      if (idx[d] < out_shape[d]) break;
      src -= st[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}
}  // namespace detail

template <class T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> axes) {
  if (axes.size() != x.rank()) throw DimensionError("permute axes do not match rank of " + shape_str(x.shape()));
  std::vector<std::size_t> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= axes.size()) throw DimensionError("permute axis out of range");
    inverse[axes[i]] = i;
  }
  Tensor<T> out = detail::permute_tensor(x.value(), axes);
  return x.tape().record(std::move(out), {x}, [x, inverse](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, detail::permute_tensor(g, inverse));
  });
}

// Half-open slice [begin, end) along `axis`.
template <class T>
Var<T> slice(const Var<T>& x, long axis_in, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  const std::size_t axis = detail::normalize_axis(axis_in, s.size());
  if (begin >= end || end > s[axis])
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for axis " +
                         std::to_string(axis) + " of " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[axis] = end - begin;
  Tensor<T> out(os);
  const std::size_t len = (end - begin) * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.value().ptr() + (o * s[axis] + begin) * inner, len, out.ptr() + o * len);
  return x.tape().record(std::move(out), {x}, [x, axis, begin, end, outer, inner](Tape<T>& t, const Tensor<T>& g) {
    const Shape& s = x.shape();
    Tensor<T> dx(s);
    const std::size_t len = (end - begin) * inner;
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(g.ptr() + o * len, len, dx.ptr() + (o * s[axis] + begin) * inner);
    t.accumulate(x, dx);
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, long axis_in) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  const std::size_t axis = detail::normalize_axis(axis_in, s0.size());
  Shape os = s0;
  os[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw DimensionError("concat shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    os[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  Tensor<T> out(os);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.value().ptr() + o * len, len, out.ptr() + o * os[axis] * inner + offset);
    offset += len;
  }
  return parts[0].tape().record(std::move(out), parts, [parts, axis, outer, inner](Tape<T>& t, const Tensor<T>& g) {
    const std::size_t total = g.shape()[axis] * inner;
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t len = p.shape()[axis] * inner;
      if (p.requires_grad()) {
        Tensor<T> dp(p.shape());
        for (std::size_t o = 0; o < outer; ++o) std::copy_n(g.ptr() + o * total + offset, len, dp.ptr() + o * len);
        t.accumulate(p, dp);
      }
      offset += len;
    }
  });
}

// Nearest-neighbour upsampling along the last axis.
template <class T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t factor) {
  const Shape& s = x.shape();
  Shape os = s;
  os.back() *= factor;
  const std::size_t rows = x.value().size() / s.back();
  const std::size_t l = s.back();
  Tensor<T> out(os);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < l * factor; ++i) out[r * l * factor + i] = x.value()[r * l + i / factor];
  return x.tape().record(std::move(out), {x}, [x, factor, rows, l](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < l * factor; ++i) dx[r * l + i / factor] += g[r * l * factor + i];
    t.accumulate(x, dx);
  });
}

// ---- matmul ------------------------------------------------------------------

namespace detail {
struct MatmulPlan {
  Shape out_shape;
  std::size_t m, k, n, batch;
  std::vector<std::size_t> a_off, b_off;  // element offsets per output batch
};

inline MatmulPlan plan_matmul(const Shape& sa, const Shape& sb) {
  if (sa.size() < 2 || sb.size() < 2 || sa.back() != sb[sb.size() - 2])
    throw DimensionError("matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  MatmulPlan p;
  p.m = sa[sa.size() - 2];
  p.k = sa.back();
  p.n = sb.back();
  Shape ba(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
  Shape bo;
  try {
    bo = broadcast_shape(ba, bb);
  } catch (const DimensionError&) {
    throw DimensionError("matmul batch dims not broadcastable: " + shape_str(sa) + " x " + shape_str(sb));
  }
  p.batch = numel(bo);
  p.out_shape = bo;
  p.out_shape.push_back(p.m);
  p.out_shape.push_back(p.n);
  p.a_off.resize(p.batch);
  p.b_off.resize(p.batch);
  if (bo.empty()) {
    p.a_off[0] = p.b_off[0] = 0;
  } else {
    Shape one_a = ba.empty() ? Shape{1} : ba;
    Shape one_b = bb.empty() ? Shape{1} : bb;
    for_each_broadcast(bo, one_a, one_b, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      p.a_off[i] = ia * p.m * p.k;
      p.b_off[i] = ib * p.k * p.n;
    });
  }
  return p;
}
}  // namespace detail

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  auto plan = detail::plan_matmul(av.shape(), bv.shape());
  Tensor<T> out(plan.out_shape);
  for (std::size_t i = 0; i < plan.batch; ++i)
    detail::gemm(plan.m, plan.n, plan.k, av.ptr() + plan.a_off[i], bv.ptr() + plan.b_off[i],
                 out.ptr() + i * plan.m * plan.n);
  flops::add(2ull * plan.batch * plan.m * plan.n * plan.k);
  return a.tape().record(std::move(out), {a, b}, [a, b, plan](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    const std::size_t m = plan.m, n = plan.n, k = plan.k;
    if (a.requires_grad()) {
      // dA = dC . B^T
      Tensor<T> bt = transpose_last(bv);
      Tensor<T> da(av.shape());
      for (std::size_t i = 0; i < plan.batch; ++i)
        detail::gemm(m, k, n, g.ptr() + i * m * n, bt.ptr() + plan.b_off[i], da.ptr() + plan.a_off[i]);
      flops::add(2ull * plan.batch * m * n * k);
      t.accumulate(a, da);
    }
    if (b.requires_grad()) {
      // dB = A^T . dC
      Tensor<T> at = transpose_last(av);
      Tensor<T> db(bv.shape());
      for (std::size_t i = 0; i < plan.batch; ++i)
        detail::gemm(k, n, m, at.ptr() + plan.a_off[i], g.ptr() + i * m * n, db.ptr() + plan.b_off[i]);
      flops::add(2ull * plan.batch * m * n * k);
      t.accumulate(b, db);
    }
  });
}

// ---- softmax -----------------------------------------------------------------

// Numerically shifted softmax. -inf entries get probability 0; a slice that is
// entirely -inf yields all zeros (fully masked attention rows).
template <class T>
Var<T> softmax(const Var<T>& x, long axis_in = -1) {
  const Shape& s = x.shape();
  const std::size_t axis = detail::normalize_axis(axis_in, s.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const Tensor<T>& xv = x.value();
  Tensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      if (mx == -std::numeric_limits<T>::infinity()) continue;
      T z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        T e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  flops::add(5ull * xv.size());
  Tensor<T> yv = out;
  return x.tape().record(std::move(out), {x}, [x, outer, inner, n, yv = std::move(yv)](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * yv[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          dx[idx] = yv[idx] * (g[idx] - dot);
        }
      }
    t.accumulate(x, dx);
  });
}

// ---- layer norm ----------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes over the last axis, then applies gain and bias of shape [d].
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(kLayerNormEps)) {
  const Shape& s = x.shape();
  const std::size_t d = s.back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw DimensionError("layer_norm gain/bias must be [" + std::to_string(d) + "], got " + shape_str(gain.shape()) +
                         " and " + shape_str(bias.shape()));
  const std::size_t rows = x.value().size() / d;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& gv = gain.value();
  const Tensor<T>& bv = bias.value();
  Tensor<T> xhat(s), out(s);
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.ptr() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  flops::add(8ull * xv.size());
  return x.tape().record(std::move(out), {x, gain, bias},
                         [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Tape<T>& t, const Tensor<T>& g) {
                           const Tensor<T>& gv = gain.value();
                           if (gain.requires_grad() || bias.requires_grad()) {
                             Tensor<T> dg(Shape{d}), db(Shape{d});
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < d; ++j) {
                                 dg[j] += g[r * d + j] * xhat[r * d + j];
                                 db[j] += g[r * d + j];
                               }
                             t.accumulate(gain, dg);
                             t.accumulate(bias, db);
                           }
                           if (x.requires_grad()) {
                             Tensor<T> dx(x.shape());
                             const T inv_d = T(1) / static_cast<T>(d);
                             for (std::size_t r = 0; r < rows; ++r) {
                               T sum_dh = 0, sum_dh_h = 0;
                               for (std::size_t j = 0; j < d; ++j) {
                                 const T dh = g[r * d + j] * gv[j];
                                 sum_dh += dh;
                                 sum_dh_h += dh * xhat[r * d + j];
                               }
                               for (std::size_t j = 0; j < d; ++j) {
                                 const T dh = g[r * d + j] * gv[j];
                                 dx[r * d + j] = inv_std[r] * (dh - inv_d * sum_dh - xhat[r * d + j] * inv_d * sum_dh_h);
                               }
                             }
                             t.accumulate(x, dx);
                           }
                         });
}

// ---- conv1d ----------------------------------------------------------------------

struct Conv1dGeometry {
  std::size_t c_in, c_out, length, kernel, stride, padding, out_length;
};

inline Conv1dGeometry conv1d_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t padding) {
  if (w.size() != 3 || (x.size() != 2 && x.size() != 3))
    throw DimensionError("conv1d expects x [C_in, L] or [B, C_in, L] and w [C_out, C_in, K], got " + shape_str(x) +
                         " and " + shape_str(w));
  const std::size_t c_in = x[x.size() - 2], len = x.back();
  if (w[1] != c_in)
    throw DimensionError("conv1d channel mismatch: x " + shape_str(x) + " vs w " + shape_str(w));
  if (stride == 0) throw DimensionError("conv1d stride must be positive");
  if (len + 2 * padding < w[2])
    throw DimensionError("conv1d kernel " + std::to_string(w[2]) + " larger than padded input " +
                         std::to_string(len + 2 * padding) + " (x " + shape_str(x) + ")");
  return {c_in, w[0], len, w[2], stride, padding, (len + 2 * padding - w[2]) / stride + 1};
}

namespace detail {
// Unfolds x [B, C_in, L] into columns [C_in*K, B*L_out]; row r = ci*K + k, so
// a gemm over r accumulates ci-major then k.
template <class T>
Tensor<T> im2col(const Conv1dGeometry& g, std::size_t batch, const T* x) {
  const std::size_t cols = batch * g.out_length;
  Tensor<T> out(Shape{g.c_in * g.kernel, cols});
  for (std::size_t ci = 0; ci < g.c_in; ++ci)
    for (std::size_t k = 0; k < g.kernel; ++k) {
      T* row = out.ptr() + (ci * g.kernel + k) * cols;
      const long off = static_cast<long>(k) - static_cast<long>(g.padding);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* xrow = x + (b * g.c_in + ci) * g.length;
        T* dst = row + b * g.out_length;
        for (std::size_t t = 0; t < g.out_length; ++t) {
          const long pos = static_cast<long>(t * g.stride) + off;
          dst[t] = (pos >= 0 && pos < static_cast<long>(g.length)) ? xrow[pos] : T(0);
        }
      }
    }
  return out;
}

// Adds columns [C_in*K, B*L_out] back into dx [B, C_in, L].
template <class T>
void col2im(const Conv1dGeometry& g, std::size_t batch, const T* cols_data, T* dx) {
  const std::size_t cols = batch * g.out_length;
  for (std::size_t ci = 0; ci < g.c_in; ++ci)
    for (std::size_t k = 0; k < g.kernel; ++k) {
      const T* row = cols_data + (ci * g.kernel + k) * cols;
      const long off = static_cast<long>(k) - static_cast<long>(g.padding);
      for (std::size_t b = 0; b < batch; ++b) {
        T* dxrow = dx + (b * g.c_in + ci) * g.length;
        const T* src = row + b * g.out_length;
        for (std::size_t t = 0; t < g.out_length; ++t) {
          const long pos = static_cast<long>(t * g.stride) + off;
          if (pos >= 0 && pos < static_cast<long>(g.length)) dxrow[pos] += src[t];
        }
      }
    }
}
}  // namespace detail

// Cross-correlation with zero padding. x is [C_in, L] or [B, C_in, L]; bias,
// if given, is [C_out].
template <class T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, std::size_t stride, std::size_t padding) {
  const auto geo = conv1d_geometry(x.shape(), w.shape(), stride, padding);
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t cols = batch * geo.out_length, rows = geo.c_in * geo.kernel;
  if (bias && bias->shape() != Shape{geo.c_out})
    throw DimensionError("conv1d bias must be [C_out], got " + shape_str(bias->shape()));
  Tensor<T> xcol = detail::im2col(geo, batch, x.value().ptr());
  Tensor<T> acc(Shape{geo.c_out, cols});
  if (bias)
    for (std::size_t co = 0; co < geo.c_out; ++co) std::fill_n(acc.ptr() + co * cols, cols, bias->value()[co]);
  detail::gemm(geo.c_out, cols, rows, w.value().ptr(), xcol.ptr(), acc.ptr());
  Shape os = batched ? Shape{batch, geo.c_out, geo.out_length} : Shape{geo.c_out, geo.out_length};
  Tensor<T> out(os);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t co = 0; co < geo.c_out; ++co)
      std::copy_n(acc.ptr() + co * cols + b * geo.out_length, geo.out_length,
                  out.ptr() + (b * geo.c_out + co) * geo.out_length);
  flops::add(2ull * batch * geo.c_out * geo.c_in * geo.kernel * geo.out_length);
  std::vector<Var<T>> parents{x, w};
  Var<T> bias_var = bias ? *bias : Var<T>();
  if (bias) parents.push_back(*bias);
  return x.tape().record(std::move(out), parents, [x, w, bias_var, geo, batch, xcol = std::move(xcol)](Tape<T>& t, const Tensor<T>& g) {
    const std::size_t cols = batch * geo.out_length, rows = geo.c_in * geo.kernel;
    // Gradient as [C_out, B*L_out].
    Tensor<T> gm(Shape{geo.c_out, cols});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t co = 0; co < geo.c_out; ++co)
        std::copy_n(g.ptr() + (b * geo.c_out + co) * geo.out_length, geo.out_length,
                    gm.ptr() + co * cols + b * geo.out_length);
    if (w.requires_grad()) {
      Tensor<T> xcol_t = transpose_last(xcol);
      Tensor<T> dw(w.shape());
      detail::gemm(geo.c_out, rows, cols, gm.ptr(), xcol_t.ptr(), dw.ptr());
      t.accumulate(w, dw);
    }
    if (x.requires_grad()) {
      Tensor<T> w_t = transpose_last(w.value().reshaped(Shape{geo.c_out, rows}));
      Tensor<T> dcol(Shape{rows, cols});
      detail::gemm(rows, cols, geo.c_out, w_t.ptr(), gm.ptr(), dcol.ptr());
      Tensor<T> dx(x.shape());
      detail::col2im(geo, batch, dcol.ptr(), dx.ptr());
      t.accumulate(x, dx);
    }
    flops::add(4ull * batch * geo.c_out * geo.c_in * geo.kernel * geo.out_length);
    if (bias_var.valid() && bias_var.requires_grad()) {
      Tensor<T> db(Shape{geo.c_out});
      for (std::size_t co = 0; co < geo.c_out; ++co)
        for (std::size_t i = 0; i < cols; ++i) db[co] += gm[co * cols + i];
      t.accumulate(bias_var, db);
    }
  });
}

template <class T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, std::size_t stride = 1, std::size_t padding = 0) {
  return conv1d<T>(x, w, nullptr, stride, padding);
}

// ---- losses ------------------------------------------------------------------

template <class T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("l1_loss shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return mean(abs(sub(a, b)));
}

template <class T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("mse_loss shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return mean(square(sub(a, b)));
}

}  // namespace genau::ops
