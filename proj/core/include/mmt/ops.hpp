#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "mmt/tape.hpp"

// Dense-tensor primitives with recorded gradient rules. Broadcasting is
// right-aligned: shapes are matched from the trailing dimension, each pair
// of extents must be equal or 1, and missing leading dimensions count as 1.

namespace mmt {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  Shape out(r);
  for (int i = 0; i < r; ++i) {
    const std::int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    const std::int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1)
      throw shape_error("shapes " + shape_str(a) + " and " + shape_str(b) +
                        " are not broadcast-compatible");
    out[i] = std::max(da, db);
  }
  return out;
}

// True when b's shape is a trailing suffix of a's (fast block path).
inline bool is_suffix(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
  return true;
}

inline std::vector<std::int64_t> broadcast_strides(const Shape& shape,
                                                   const Shape& out) {
  const int r = static_cast<int>(out.size());
  const int ra = static_cast<int>(shape.size());
  std::vector<std::int64_t> strides(r, 0);
  std::int64_t s = 1;
  for (int i = ra - 1; i >= 0; --i) {
    const int o = i + (r - ra);
    strides[o] = shape[i] == 1 ? 0 : s;
    s *= shape[i];
  }
  return strides;
}

template <typename Real, typename F>
Tensor<Real> broadcast_binary(const Tensor<Real>& a, const Tensor<Real>& b,
                              F f) {
  if (a.shape() == b.shape()) {
    Tensor<Real> out(a.shape());
    const Real* pa = a.data();
    const Real* pb = b.data();
    Real* po = out.data();
    for (std::int64_t i = 0, n = a.size(); i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  if (is_suffix(a.shape(), b.shape())) {
    Tensor<Real> out(a.shape());
    const Real* pa = a.data();
    const Real* pb = b.data();
    Real* po = out.data();
    const std::int64_t bn = b.size();
    for (std::int64_t i = 0, n = a.size(); i < n; ++i)
      po[i] = f(pa[i], pb[i % bn]);
    return out;
  }
  const Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor<Real> out(os);
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);
  const int r = static_cast<int>(os.size());
  std::vector<std::int64_t> idx(r, 0);
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out.data();
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t i = 0, n = out.size(); i < n; ++i) {
    po[i] = f(pa[ia], pb[ib]);
    for (int d = r - 1; d >= 0; --d) {
      ia += sa[d];
      ib += sb[d];
      if (++idx[d] < os[d]) break;
      idx[d] = 0;
      ia -= sa[d] * os[d];
      ib -= sb[d] * os[d];
    }
  }
  return out;
}

// Sums g down to `target` (g's shape broadcast-covers target).
template <typename Real>
Tensor<Real> reduce_to_shape(const Tensor<Real>& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (is_suffix(g.shape(), target)) {
    // pure leading-dim reduction: sum fixed-size blocks
    const std::int64_t tn = numel(target);
    Tensor<Real> out(target);
    Real* po = out.data();
    const Real* pg = g.data();
    for (std::int64_t i = 0, n = g.size(); i < n; ++i) po[i % tn] += pg[i];
    return out;
  }
  Tensor<Real> out(target);
  const auto st = broadcast_strides(target, g.shape());
  const int r = g.rank();
  std::vector<std::int64_t> idx(r, 0);
  const Real* pg = g.data();
  Real* po = out.data();
  std::int64_t io = 0;
  for (std::int64_t i = 0, n = g.size(); i < n; ++i) {
    po[io] += pg[i];
    for (int d = r - 1; d >= 0; --d) {
      io += st[d];
      if (++idx[d] < g.shape()[d]) break;
      idx[d] = 0;
      io -= st[d] * g.shape()[d];
    }
  }
  return out;
}

template <typename Real>
bool tracked2(const Tape<Real>& tp, const Tensor<Real>& a,
              const Tensor<Real>& b) {
  return tp.active() && (a.node >= 0 || b.node >= 0);
}
template <typename Real>
bool tracked1(const Tape<Real>& tp, const Tensor<Real>& a) {
  return tp.active() && a.node >= 0;
}

// Index decomposition of `axis` within a row-major shape.
struct AxisView {
  std::int64_t outer = 1, extent = 1, inner = 1;
};
inline AxisView axis_view(const Shape& s, int axis) {
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw shape_error("axis out of range for " + shape_str(s));
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[i];
  v.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

inline Shape drop_axis(const Shape& s, int axis) {
  if (axis < 0) axis += static_cast<int>(s.size());
  Shape out;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise suite

template <typename Real, typename F, typename DfA, typename DfB>
Tensor<Real> binary_op(Tape<Real>& tp, const Tensor<Real>& a,
                       const Tensor<Real>& b, F f, DfA dfa, DfB dfb) {
  Tensor<Real> out = detail::broadcast_binary(a, b, f);
  if (detail::tracked2(tp, a, b)) {
    out.requires_grad = true;
    out.node = tp.record([a, b, dfa, dfb](Tape<Real>& t,
                                          const Tensor<Real>& g) {
      if (a.node >= 0) {
        Tensor<Real> da = detail::broadcast_binary(
            g, detail::broadcast_binary(a, b, dfa),
            [](Real x, Real y) { return x * y; });
        t.accumulate(a.node, detail::reduce_to_shape(da, a.shape()));
      }
      if (b.node >= 0) {
        Tensor<Real> db = detail::broadcast_binary(
            g, detail::broadcast_binary(a, b, dfb),
            [](Real x, Real y) { return x * y; });
        t.accumulate(b.node, detail::reduce_to_shape(db, b.shape()));
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> add(Tape<Real>& tp, const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_op(
      tp, a, b, [](Real x, Real y) { return x + y; },
      [](Real, Real) { return Real(1); }, [](Real, Real) { return Real(1); });
}

template <typename Real>
Tensor<Real> sub(Tape<Real>& tp, const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_op(
      tp, a, b, [](Real x, Real y) { return x - y; },
      [](Real, Real) { return Real(1); }, [](Real, Real) { return Real(-1); });
}

template <typename Real>
Tensor<Real> mul(Tape<Real>& tp, const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_op(
      tp, a, b, [](Real x, Real y) { return x * y; },
      [](Real, Real y) { return y; }, [](Real x, Real) { return x; });
}

template <typename Real>
Tensor<Real> div(Tape<Real>& tp, const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_op(
      tp, a, b, [](Real x, Real y) { return x / y; },
      [](Real, Real y) { return Real(1) / y; },
      [](Real x, Real y) { return -x / (y * y); });
}

template <typename Real, typename F, typename Df>
Tensor<Real> unary_op(Tape<Real>& tp, const Tensor<Real>& a, F f, Df df) {
  Tensor<Real> out(a.shape());
  const Real* pa = a.data();
  Real* po = out.data();
  for (std::int64_t i = 0, n = a.size(); i < n; ++i) po[i] = f(pa[i]);
  if (detail::tracked1(tp, a)) {
    out.requires_grad = true;
    out.node = tp.record([a, df](Tape<Real>& t, const Tensor<Real>& g) {
      Tensor<Real> da(a.shape());
      const Real* pa2 = a.data();
      const Real* pg = g.data();
      Real* pd = da.data();
      for (std::int64_t i = 0, n = a.size(); i < n; ++i)
        pd[i] = pg[i] * df(pa2[i]);
      t.accumulate(a.node, da);
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> exp(Tape<Real>& tp, const Tensor<Real>& a) {
  return unary_op(
      tp, a, [](Real x) { return std::exp(x); },
      [](Real x) { return std::exp(x); });
}

template <typename Real>
Tensor<Real> log(Tape<Real>& tp, const Tensor<Real>& a) {
  return unary_op(
      tp, a, [](Real x) { return std::log(x); },
      [](Real x) { return Real(1) / x; });
}

template <typename Real>
Tensor<Real> scale(Tape<Real>& tp, const Tensor<Real>& a, Real c) {
  return unary_op(
      tp, a, [c](Real x) { return c * x; }, [c](Real) { return c; });
}

template <typename Real>
Tensor<Real> neg(Tape<Real>& tp, const Tensor<Real>& a) {
  return scale(tp, a, Real(-1));
}

// Exact Gaussian-CDF GeLU (not the tanh approximation).
template <typename Real>
Tensor<Real> gelu(Tape<Real>& tp, const Tensor<Real>& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary_op(
      tp, a,
      [](Real x) {
        return static_cast<Real>(
            0.5 * static_cast<double>(x) *
            (1.0 + std::erf(static_cast<double>(x) * kInvSqrt2)));
      },
      [](Real x) {
        const double xd = static_cast<double>(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
        return static_cast<Real>(cdf + xd * pdf);
      });
}

// log(1 + e^x), evaluated as max(x,0) + log1p(e^-|x|).
template <typename Real>
Tensor<Real> softplus(Tape<Real>& tp, const Tensor<Real>& a) {
  return unary_op(
      tp, a,
      [](Real x) {
        return static_cast<Real>(std::max<double>(x, 0.0) +
                                 std::log1p(std::exp(-std::abs(
                                     static_cast<double>(x)))));
      },
      [](Real x) {
        const double e = std::exp(-std::abs(static_cast<double>(x)));
        const double s = x >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
        return static_cast<Real>(s);
      });
}

// ---------------------------------------------------------------------------
// matmul

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
template <typename Real>
void mm_nn(const Real* A, const Real* B, Real* C, std::int64_t M,
           std::int64_t K, std::int64_t N) {
  for (std::int64_t m = 0; m < M; ++m) {
    Real* cm = C + m * N;
    const Real* am = A + m * K;
    for (std::int64_t k = 0; k < K; ++k) {
      const Real a = am[k];
      const Real* bk = B + k * N;
      for (std::int64_t n = 0; n < N; ++n) cm[n] += a * bk[n];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
template <typename Real>
void mm_nt(const Real* A, const Real* B, Real* C, std::int64_t M,
           std::int64_t N, std::int64_t K) {
  for (std::int64_t m = 0; m < M; ++m) {
    const Real* am = A + m * N;
    Real* cm = C + m * K;
    for (std::int64_t k = 0; k < K; ++k) {
      const Real* bk = B + k * N;
      Real acc = 0;
      for (std::int64_t n = 0; n < N; ++n) acc += am[n] * bk[n];
      cm[k] += acc;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <typename Real>
void mm_tn(const Real* A, const Real* B, Real* C, std::int64_t M,
           std::int64_t K, std::int64_t N) {
  for (std::int64_t m = 0; m < M; ++m) {
    const Real* am = A + m * K;
    const Real* bm = B + m * N;
    for (std::int64_t k = 0; k < K; ++k) {
      const Real a = am[k];
      Real* ck = C + k * N;
      for (std::int64_t n = 0; n < N; ++n) ck[n] += a * bm[n];
    }
  }
}

struct MatmulDims {
  std::int64_t batch, M, K, N;
  std::int64_t a_stride, b_stride;
  Shape out_shape;
};

inline MatmulDims matmul_dims(const Shape& a, const Shape& b) {
  if (a.size() < 2 || b.size() < 2)
    throw shape_error("matmul requires rank >= 2, got " + shape_str(a) +
                      " and " + shape_str(b));
  MatmulDims d;
  d.M = a[a.size() - 2];
  d.K = a[a.size() - 1];
  const std::int64_t bk = b[b.size() - 2];
  d.N = b[b.size() - 1];
  if (d.K != bk)
    throw shape_error("matmul inner dimensions differ: " + shape_str(a) +
                      " x " + shape_str(b));
  Shape abatch(a.begin(), a.end() - 2), bbatch(b.begin(), b.end() - 2);
  if (!abatch.empty() && !bbatch.empty() && abatch != bbatch)
    throw shape_error("matmul batch dimensions differ: " + shape_str(a) +
                      " x " + shape_str(b));
  const Shape& batch = abatch.empty() ? bbatch : abatch;
  d.batch = numel(batch);
  d.a_stride = abatch.empty() && !bbatch.empty() ? 0 : d.M * d.K;
  d.b_stride = bbatch.empty() && !abatch.empty() ? 0 : d.K * d.N;
  d.out_shape = batch;
  d.out_shape.push_back(d.M);
  d.out_shape.push_back(d.N);
  return d;
}

}  // namespace detail

// Batched contraction: [*,M,K] x [*,K,N] -> [*,M,N]. Leading dims must be
// equal; either operand may instead be rank-2 and is then shared across the
// other's batch.
template <typename Real>
Tensor<Real> matmul(Tape<Real>& tp, const Tensor<Real>& a,
                    const Tensor<Real>& b) {
  const auto d = detail::matmul_dims(a.shape(), b.shape());
  Tensor<Real> out(d.out_shape);
  for (std::int64_t i = 0; i < d.batch; ++i)
    detail::mm_nn(a.data() + i * d.a_stride, b.data() + i * d.b_stride,
                  out.data() + i * d.M * d.N, d.M, d.K, d.N);
  if (detail::tracked2(tp, a, b)) {
    out.requires_grad = true;
    out.node = tp.record([a, b, d](Tape<Real>& t, const Tensor<Real>& g) {
      if (a.node >= 0) {
        Tensor<Real> da(a.shape());
        for (std::int64_t i = 0; i < d.batch; ++i)
          detail::mm_nt(g.data() + i * d.M * d.N, b.data() + i * d.b_stride,
                        da.data() + (d.a_stride ? i * d.a_stride : 0), d.M, d.N,
                        d.K);
        t.accumulate(a.node, da);
      }
      if (b.node >= 0) {
        Tensor<Real> db(b.shape());
        for (std::int64_t i = 0; i < d.batch; ++i)
          detail::mm_tn(a.data() + i * d.a_stride, g.data() + i * d.M * d.N,
                        db.data() + (d.b_stride ? i * d.b_stride : 0), d.M, d.K,
                        d.N);
        t.accumulate(b.node, db);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax family

template <typename Real>
Tensor<Real> softmax(Tape<Real>& tp, const Tensor<Real>& x, int axis = -1) {
  const auto v = detail::axis_view(x.shape(), axis);
  Tensor<Real> out(x.shape());
  const Real* px = x.data();
  Real* po = out.data();
  for (std::int64_t o = 0; o < v.outer; ++o)
    for (std::int64_t in = 0; in < v.inner; ++in) {
      const std::int64_t base = o * v.extent * v.inner + in;
      Real mx = px[base];
      for (std::int64_t e = 1; e < v.extent; ++e)
        mx = std::max(mx, px[base + e * v.inner]);
      Real sum = 0;
      for (std::int64_t e = 0; e < v.extent; ++e) {
        const Real t = std::exp(px[base + e * v.inner] - mx);
        po[base + e * v.inner] = t;
        sum += t;
      }
      const Real inv = Real(1) / sum;
      for (std::int64_t e = 0; e < v.extent; ++e) po[base + e * v.inner] *= inv;
    }
  if (detail::tracked1(tp, x)) {
    out.requires_grad = true;
    out.node = tp.record([x, out, v](Tape<Real>& t, const Tensor<Real>& g) {
      Tensor<Real> dx(x.shape());
      const Real* pp = out.data();
      const Real* pg = g.data();
      Real* pd = dx.data();
      for (std::int64_t o = 0; o < v.outer; ++o)
        for (std::int64_t in = 0; in < v.inner; ++in) {
          const std::int64_t base = o * v.extent * v.inner + in;
          Real dot = 0;
          for (std::int64_t e = 0; e < v.extent; ++e)
            dot += pg[base + e * v.inner] * pp[base + e * v.inner];
          for (std::int64_t e = 0; e < v.extent; ++e)
            pd[base + e * v.inner] = pp[base + e * v.inner] *
                                     (pg[base + e * v.inner] - dot);
        }
      t.accumulate(x.node, dx);
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> log_softmax(Tape<Real>& tp, const Tensor<Real>& x, int axis = -1) {
  const auto v = detail::axis_view(x.shape(), axis);
  Tensor<Real> out(x.shape());
  const Real* px = x.data();
  Real* po = out.data();
  for (std::int64_t o = 0; o < v.outer; ++o)
    for (std::int64_t in = 0; in < v.inner; ++in) {
      const std::int64_t base = o * v.extent * v.inner + in;
      Real mx = px[base];
      for (std::int64_t e = 1; e < v.extent; ++e)
        mx = std::max(mx, px[base + e * v.inner]);
      Real sum = 0;
      for (std::int64_t e = 0; e < v.extent; ++e)
        sum += std::exp(px[base + e * v.inner] - mx);
      const Real lse = mx + std::log(sum);
      for (std::int64_t e = 0; e < v.extent; ++e)
        po[base + e * v.inner] = px[base + e * v.inner] - lse;
    }
  if (detail::tracked1(tp, x)) {
    out.requires_grad = true;
    out.node = tp.record([x, out, v](Tape<Real>& t, const Tensor<Real>& g) {
      Tensor<Real> dx(x.shape());
      const Real* py = out.data();
      const Real* pg = g.data();
      Real* pd = dx.data();
      for (std::int64_t o = 0; o < v.outer; ++o)
        for (std::int64_t in = 0; in < v.inner; ++in) {
          const std::int64_t base = o * v.extent * v.inner + in;
          Real gsum = 0;
          for (std::int64_t e = 0; e < v.extent; ++e)
            gsum += pg[base + e * v.inner];
          for (std::int64_t e = 0; e < v.extent; ++e)
            pd[base + e * v.inner] =
                pg[base + e * v.inner] -
                std::exp(py[base + e * v.inner]) * gsum;
        }
      t.accumulate(x.node, dx);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis, epsilon inside the square root

template <typename Real>
Tensor<Real> layer_norm(Tape<Real>& tp, const Tensor<Real>& x,
                        const Tensor<Real>& gain, const Tensor<Real>& bias) {
  constexpr Real kEps = Real(1e-6);
  const std::int64_t D = x.shape().back();
  if (gain.size() != D || bias.size() != D)
    throw shape_error("layer_norm gain/bias must have length " +
                      std::to_string(D));
  const std::int64_t rows = x.size() / D;
  Tensor<Real> out(x.shape());
  Tensor<Real> xhat(x.shape());
  std::vector<Real> inv_std(rows);
  const Real* px = x.data();
  const Real* pgm = gain.data();
  const Real* pb = bias.data();
  Real* po = out.data();
  Real* ph = xhat.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* row = px + r * D;
    Real mean = 0;
    for (std::int64_t i = 0; i < D; ++i) mean += row[i];
    mean /= Real(D);
    Real var = 0;
    for (std::int64_t i = 0; i < D; ++i) {
      const Real c = row[i] - mean;
      var += c * c;
    }
    var /= Real(D);
    const Real inv = Real(1) / std::sqrt(var + kEps);
    inv_std[r] = inv;
    Real* hrow = ph + r * D;
    Real* orow = po + r * D;
    for (std::int64_t i = 0; i < D; ++i) {
      hrow[i] = (row[i] - mean) * inv;
      orow[i] = hrow[i] * pgm[i] + pb[i];
    }
  }
  if (tp.active() && (x.node >= 0 || gain.node >= 0 || bias.node >= 0)) {
    out.requires_grad = true;
    out.node = tp.record([x, gain, bias, xhat, inv_std = std::move(inv_std),
                          rows, D](Tape<Real>& t, const Tensor<Real>& g) {
      const Real* pg = g.data();
      const Real* phh = xhat.data();
      const Real* pgm2 = gain.data();
      if (gain.node >= 0) {
        Tensor<Real> dg(gain.shape());
        Real* p = dg.data();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t i = 0; i < D; ++i)
            p[i] += pg[r * D + i] * phh[r * D + i];
        t.accumulate(gain.node, dg);
      }
      if (bias.node >= 0) {
        Tensor<Real> db(bias.shape());
        Real* p = db.data();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t i = 0; i < D; ++i) p[i] += pg[r * D + i];
        t.accumulate(bias.node, db);
      }
      if (x.node >= 0) {
        Tensor<Real> dx(x.shape());
        Real* pd = dx.data();
        for (std::int64_t r = 0; r < rows; ++r) {
          Real m1 = 0, m2 = 0;
          for (std::int64_t i = 0; i < D; ++i) {
            const Real h = pgm2[i] * pg[r * D + i];
            m1 += h;
            m2 += h * phh[r * D + i];
          }
          m1 /= Real(D);
          m2 /= Real(D);
          for (std::int64_t i = 0; i < D; ++i) {
            const Real h = pgm2[i] * pg[r * D + i];
            pd[r * D + i] = inv_std[r] * (h - m1 - phh[r * D + i] * m2);
          }
        }
        t.accumulate(x.node, dx);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename Real>
Tensor<Real> sum_axis(Tape<Real>& tp, const Tensor<Real>& x, int axis) {
  const auto v = detail::axis_view(x.shape(), axis);
  Tensor<Real> out(detail::drop_axis(x.shape(), axis));
  const Real* px = x.data();
  Real* po = out.data();
  for (std::int64_t o = 0; o < v.outer; ++o)
    for (std::int64_t e = 0; e < v.extent; ++e) {
      const Real* row = px + (o * v.extent + e) * v.inner;
      Real* orow = po + o * v.inner;
      for (std::int64_t in = 0; in < v.inner; ++in) orow[in] += row[in];
    }
  if (detail::tracked1(tp, x)) {
    out.requires_grad = true;
    out.node = tp.record([x, v](Tape<Real>& t, const Tensor<Real>& g) {
      Tensor<Real> dx(x.shape());
      const Real* pg = g.data();
      Real* pd = dx.data();
      for (std::int64_t o = 0; o < v.outer; ++o)
        for (std::int64_t e = 0; e < v.extent; ++e) {
          const Real* grow = pg + o * v.inner;
          Real* drow = pd + (o * v.extent + e) * v.inner;
          for (std::int64_t in = 0; in < v.inner; ++in) drow[in] = grow[in];
        }
      t.accumulate(x.node, dx);
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> mean_pool(Tape<Real>& tp, const Tensor<Real>& x, int axis) {
  const Real n = static_cast<Real>(detail::axis_view(x.shape(), axis).extent);
  return scale(tp, sum_axis(tp, x, axis), Real(1) / n);
}

template <typename Real>
Tensor<Real> sum_all(Tape<Real>& tp, const Tensor<Real>& x) {
  Tensor<Real> out({1});
  const Real* px = x.data();
  Real acc = 0;
  for (std::int64_t i = 0, n = x.size(); i < n; ++i) acc += px[i];
  out[0] = acc;
  if (detail::tracked1(tp, x)) {
    out.requires_grad = true;
    out.node = tp.record([x](Tape<Real>& t, const Tensor<Real>& g) {
      t.accumulate(x.node, Tensor<Real>::full(x.shape(), g[0]));
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> mean_all(Tape<Real>& tp, const Tensor<Real>& x) {
  return scale(tp, sum_all(tp, x), Real(1) / static_cast<Real>(x.size()));
}

// ---------------------------------------------------------------------------
// gather / scatter_add over the leading axis (the adjoint pair)

template <typename Real>
Tensor<Real> gather_rows(Tape<Real>& tp, const Tensor<Real>& x,
                         const std::vector<std::int64_t>& indices) {
  if (x.rank() < 1) throw shape_error("gather_rows needs rank >= 1");
  const std::int64_t rows = x.shape()[0];
  const std::int64_t width = x.size() / rows;
  for (auto i : indices)
    if (i < 0 || i >= rows)
      throw std::out_of_range("gather_rows index " + std::to_string(i) +
                              " out of range [0," + std::to_string(rows) + ")");
  Shape os = x.shape();
  os[0] = static_cast<std::int64_t>(indices.size());
  Tensor<Real> out(os);
  const Real* px = x.data();
  Real* po = out.data();
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(px + indices[r] * width, width, po + r * width);
  if (detail::tracked1(tp, x)) {
    out.requires_grad = true;
    out.node = tp.record([x, indices, width](Tape<Real>& t,
                                             const Tensor<Real>& g) {
      Tensor<Real> dx(x.shape());
      const Real* pg = g.data();
      Real* pd = dx.data();
      for (std::size_t r = 0; r < indices.size(); ++r) {
        Real* drow = pd + indices[r] * width;
        const Real* grow = pg + r * width;
        for (std::int64_t i = 0; i < width; ++i) drow[i] += grow[i];
      }
      t.accumulate(x.node, dx);
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> scatter_add_rows(Tape<Real>& tp, const Tensor<Real>& y,
                              const std::vector<std::int64_t>& indices,
                              std::int64_t out_rows) {
  if (y.rank() < 1) throw shape_error("scatter_add_rows needs rank >= 1");
  if (y.shape()[0] != static_cast<std::int64_t>(indices.size()))
    throw shape_error("scatter_add_rows: leading extent must equal index count");
  const std::int64_t width = y.size() / y.shape()[0];
  for (auto i : indices)
    if (i < 0 || i >= out_rows)
      throw std::out_of_range("scatter_add_rows index " + std::to_string(i) +
                              " out of range [0," + std::to_string(out_rows) +
                              ")");
  Shape os = y.shape();
  os[0] = out_rows;
  Tensor<Real> out(os);
  const Real* py = y.data();
  Real* po = out.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    Real* orow = po + indices[r] * width;
    const Real* yrow = py + r * width;
    for (std::int64_t i = 0; i < width; ++i) orow[i] += yrow[i];
  }
  if (detail::tracked1(tp, y)) {
    out.requires_grad = true;
    out.node = tp.record([y, indices, width](Tape<Real>& t,
                                             const Tensor<Real>& g) {
      Shape ds = y.shape();
      Tensor<Real> dy(ds);
      const Real* pg = g.data();
      Real* pd = dy.data();
      for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy_n(pg + indices[r] * width, width, pd + r * width);
      t.accumulate(y.node, dy);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename Real>
Tensor<Real> reshape(Tape<Real>& tp, const Tensor<Real>& x, Shape shape) {
  Tensor<Real> out = x.reshaped(std::move(shape));
  if (detail::tracked1(tp, x)) {
    out.requires_grad = true;
    out.node = tp.record([x](Tape<Real>& t, const Tensor<Real>& g) {
      t.accumulate(x.node, g.reshaped(x.shape()));
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> permute(Tape<Real>& tp, const Tensor<Real>& x,
                     const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r)
    throw shape_error("permute axes must cover every dimension");
  Shape os(r);
  std::vector<std::int64_t> in_strides(r, 1), out_strides_for_in(r);
  for (int i = r - 2; i >= 0; --i)
    in_strides[i] = in_strides[i + 1] * x.shape()[i + 1];
  for (int i = 0; i < r; ++i) os[i] = x.shape()[axes[i]];
  std::vector<std::int64_t> os_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) os_strides[i] = os_strides[i + 1] * os[i + 1];
  // walking the output in order, the source index advances by the permuted
  // input strides
  std::vector<std::int64_t> src_stride(r);
  for (int i = 0; i < r; ++i) src_stride[i] = in_strides[axes[i]];
  Tensor<Real> out(os);
  const Real* px = x.data();
  Real* po = out.data();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0, n = out.size(); i < n; ++i) {
    po[i] = px[src];
    for (int d = r - 1; d >= 0; --d) {
      src += src_stride[d];
      if (++idx[d] < os[d]) break;
      idx[d] = 0;
      src -= src_stride[d] * os[d];
    }
  }
  if (detail::tracked1(tp, x)) {
    std::vector<int> inverse(r);
    for (int i = 0; i < r; ++i) inverse[axes[i]] = i;
    out.requires_grad = true;
    out.node = tp.record([x, inverse](Tape<Real>& t, const Tensor<Real>& g) {
      Tape<Real> off(false);
      t.accumulate(x.node, permute(off, g, inverse));
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> transpose_last2(Tape<Real>& tp, const Tensor<Real>& x) {
  std::vector<int> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(tp, x, axes);
}

// ---------------------------------------------------------------------------
// last-axis L2 normalization onto the unit sphere

template <typename Real>
Tensor<Real> l2_normalize(Tape<Real>& tp, const Tensor<Real>& x) {
  const std::int64_t D = x.shape().back();
  const std::int64_t rows = x.size() / D;
  Tensor<Real> out(x.shape());
  std::vector<Real> inv_norm(rows);
  const Real* px = x.data();
  Real* po = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* row = px + r * D;
    Real s = 0;
    for (std::int64_t i = 0; i < D; ++i) s += row[i] * row[i];
    const Real inv = Real(1) / std::sqrt(s + Real(1e-24));
    inv_norm[r] = inv;
    Real* orow = po + r * D;
    for (std::int64_t i = 0; i < D; ++i) orow[i] = row[i] * inv;
  }
  if (detail::tracked1(tp, x)) {
    out.requires_grad = true;
    out.node = tp.record([x, out, inv_norm = std::move(inv_norm), rows,
                          D](Tape<Real>& t, const Tensor<Real>& g) {
      Tensor<Real> dx(x.shape());
      const Real* py = out.data();
      const Real* pg = g.data();
      Real* pd = dx.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        Real dot = 0;
        for (std::int64_t i = 0; i < D; ++i)
          dot += pg[r * D + i] * py[r * D + i];
        for (std::int64_t i = 0; i < D; ++i)
          pd[r * D + i] =
              (pg[r * D + i] - py[r * D + i] * dot) * inv_norm[r];
      }
      t.accumulate(x.node, dx);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// top_k (selection only; no gradient flows through the indices)

template <typename Real>
struct TopK {
  Tensor<Real> values;                // input shape with `axis` extent k
  std::vector<std::int64_t> indices;  // same layout, flattened
};

// k largest per slice, sorted by descending value; ties break toward the
// lower index.
template <typename Real>
TopK<Real> top_k(const Tensor<Real>& scores, std::int64_t k, int axis = -1) {
  const auto v = detail::axis_view(scores.shape(), axis);
  if (k < 1 || k > v.extent)
    throw std::out_of_range("top_k: k=" + std::to_string(k) +
                            " out of range for extent " +
                            std::to_string(v.extent));
  if (axis < 0) axis += scores.rank();
  Shape os = scores.shape();
  os[axis] = k;
  TopK<Real> res;
  res.values = Tensor<Real>(os);
  res.indices.resize(numel(os));
  const Real* px = scores.data();
  std::vector<std::int64_t> order(v.extent);
  for (std::int64_t o = 0; o < v.outer; ++o)
    for (std::int64_t in = 0; in < v.inner; ++in) {
      const std::int64_t base = o * v.extent * v.inner + in;
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + k, order.end(),
                        [&](std::int64_t x, std::int64_t y) {
                          const Real vx = px[base + x * v.inner];
                          const Real vy = px[base + y * v.inner];
                          return vx > vy || (vx == vy && x < y);
                        });
      for (std::int64_t e = 0; e < k; ++e) {
        const std::int64_t dst = (o * k + e) * v.inner + in;
        res.values[dst] = px[base + order[e] * v.inner];
        res.indices[dst] = order[e];
      }
    }
  return res;
}

// ---------------------------------------------------------------------------
// constants

template <typename Real>
Tensor<Real> one_hot(const std::vector<std::int64_t>& labels,
                     std::int64_t num_classes) {
  Tensor<Real> out({static_cast<std::int64_t>(labels.size()), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw std::out_of_range("label " + std::to_string(labels[i]) +
                              " out of range [0," +
                              std::to_string(num_classes) + ")");
    out[static_cast<std::int64_t>(i) * num_classes + labels[i]] = Real(1);
  }
  return out;
}

}  // namespace mmt
