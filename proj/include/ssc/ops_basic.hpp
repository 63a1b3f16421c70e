#pragma once
#include <cmath>
#include <stdexcept>

#include "ssc/scatter.hpp"
#include "ssc/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

// Dense autodiff operations. Ops run forward immediately; when a tape is
// given and any input is tracked they also register a backward rule. All
// kernels reduce serially per output slot and parallelize only across
// independent slots, so results are identical for any thread count.
namespace ssc::ops {

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) throw std::invalid_argument("add: shape mismatch");
  Tensor<T> y(a.shape);
  const int64_t n = y.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) py[i] = pa[i] + pb[i];
  if (wants_grad(tape, {&a, &b})) {
    tape->track(y);
    tape->record({a.node, b.node}, y.node, [a, b, y, n]() {
      const T* gy = y.gptr();
      if (a.grad) {
        T* ga = a.grad->data();
        for (int64_t i = 0; i < n; ++i) ga[i] += gy[i];
      }
      if (b.grad) {
        T* gb = b.grad->data();
        for (int64_t i = 0; i < n; ++i) gb[i] += gy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> scalar_mul(Tape<T>* tape, const Tensor<T>& x, T c) {
  Tensor<T> y(x.shape);
  const int64_t n = y.numel();
  const T* px = x.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) py[i] = c * px[i];
  if (wants_grad(tape, {&x})) {
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, c, n]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
      for (int64_t i = 0; i < n; ++i) gx[i] += c * gy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  const int64_t n = y.numel();
  const T* px = x.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) py[i] = px[i] > T(0) ? px[i] : T(0);
  if (wants_grad(tape, {&x})) {
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, n]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
      const T* px = x.ptr();
      for (int64_t i = 0; i < n; ++i)
        if (px[i] > T(0)) gx[i] += gy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  const int64_t n = y.numel();
  const T* px = x.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) py[i] = T(1) / (T(1) + std::exp(-px[i]));
  if (wants_grad(tape, {&x})) {
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, n]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
      const T* py = y.ptr();
      for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] * py[i] * (T(1) - py[i]);
    });
  }
  return y;
}

// y = x W^T + b with x: M x Cin, W: Cout x Cin, b: Cout
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2) throw std::invalid_argument("linear: rank mismatch");
  const int64_t m = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  if (w.dim(1) != cin || b.numel() != cout)
    throw std::invalid_argument("linear: channel mismatch");
  Tensor<T> y({int(m), int(cout)});
  const T* px = x.ptr();
  const T* pw = w.ptr();
  const T* pb = b.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (m * cout * cin > 8192)
  for (int64_t i = 0; i < m; ++i) {
    const T* xr = px + i * cin;
    T* yr = py + i * cout;
    for (int64_t o = 0; o < cout; ++o) {
      T acc = pb[o];
      const T* wr = pw + o * cin;
      for (int64_t c = 0; c < cin; ++c) acc += xr[c] * wr[c];
      yr[o] = acc;
    }
  }
  if (wants_grad(tape, {&x, &w, &b})) {
    tape->track(y);
    tape->record({x.node, w.node, b.node}, y.node, [x, w, b, y, m, cin, cout]() {
      const T* gy = y.gptr();
      const T* px = x.ptr();
      const T* pw = w.ptr();
      if (x.grad) {
        T* gx = x.grad->data();
#pragma omp parallel for schedule(static) if (m * cout * cin > 8192)
        for (int64_t i = 0; i < m; ++i)
          for (int64_t c = 0; c < cin; ++c) {
            T acc = T(0);
            for (int64_t o = 0; o < cout; ++o) acc += gy[i * cout + o] * pw[o * cin + c];
            gx[i * cin + c] += acc;
          }
      }
      if (w.grad) {
        T* gw = w.grad->data();
#pragma omp parallel for schedule(static) if (m * cout * cin > 8192)
        for (int64_t o = 0; o < cout; ++o)
          for (int64_t c = 0; c < cin; ++c) {
            T acc = T(0);
            for (int64_t i = 0; i < m; ++i) acc += gy[i * cout + o] * px[i * cin + c];
            gw[o * cin + c] += acc;
          }
      }
      if (b.grad) {
        T* gb = b.grad->data();
        for (int64_t o = 0; o < cout; ++o) {
          T acc = T(0);
          for (int64_t i = 0; i < m; ++i) acc += gy[i * cout + o];
          gb[o] += acc;
        }
      }
    });
  }
  return y;
}

namespace detail {
template <typename T>
void axis_extents(const Tensor<T>& x, int axis, int64_t* outer, int64_t* k,
                  int64_t* inner) {
  if (axis < 0 || axis >= x.rank()) throw std::invalid_argument("softmax: bad axis");
  *outer = 1;
  *inner = 1;
  for (int i = 0; i < axis; ++i) *outer *= x.dim(i);
  *k = x.dim(axis);
  for (int i = axis + 1; i < x.rank(); ++i) *inner *= x.dim(i);
}
}  // namespace detail

template <typename T>
Tensor<T> softmax(Tape<T>* tape, const Tensor<T>& x, int axis) {
  int64_t outer, k, inner;
  detail::axis_extents(x, axis, &outer, &k, &inner);
  Tensor<T> y(x.shape);
  const T* px = x.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (outer * inner > 256)
  for (int64_t oi = 0; oi < outer * inner; ++oi) {
    const int64_t o = oi / inner, i = oi % inner;
    const int64_t base = o * k * inner + i;
    T mx = px[base];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, px[base + j * inner]);
    T sum = T(0);
    for (int64_t j = 0; j < k; ++j) {
      const T e = std::exp(px[base + j * inner] - mx);
      py[base + j * inner] = e;
      sum += e;
    }
    const T inv = T(1) / sum;
    for (int64_t j = 0; j < k; ++j) py[base + j * inner] *= inv;
  }
  if (wants_grad(tape, {&x})) {
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, outer, k, inner]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
      const T* py = y.ptr();
#pragma omp parallel for schedule(static) if (outer * inner > 256)
      for (int64_t oi = 0; oi < outer * inner; ++oi) {
        const int64_t o = oi / inner, i = oi % inner;
        const int64_t base = o * k * inner + i;
        T dot = T(0);
        for (int64_t j = 0; j < k; ++j) dot += gy[base + j * inner] * py[base + j * inner];
        for (int64_t j = 0; j < k; ++j)
          gx[base + j * inner] += py[base + j * inner] * (gy[base + j * inner] - dot);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> log_softmax(Tape<T>* tape, const Tensor<T>& x, int axis) {
  int64_t outer, k, inner;
  detail::axis_extents(x, axis, &outer, &k, &inner);
  Tensor<T> y(x.shape);
  const T* px = x.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (outer * inner > 256)
  for (int64_t oi = 0; oi < outer * inner; ++oi) {
    const int64_t o = oi / inner, i = oi % inner;
    const int64_t base = o * k * inner + i;
    T mx = px[base];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, px[base + j * inner]);
    T sum = T(0);
    for (int64_t j = 0; j < k; ++j) sum += std::exp(px[base + j * inner] - mx);
    const T lse = mx + std::log(sum);
    for (int64_t j = 0; j < k; ++j) py[base + j * inner] = px[base + j * inner] - lse;
  }
  if (wants_grad(tape, {&x})) {
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, outer, k, inner]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
      const T* py = y.ptr();
#pragma omp parallel for schedule(static) if (outer * inner > 256)
      for (int64_t oi = 0; oi < outer * inner; ++oi) {
        const int64_t o = oi / inner, i = oi % inner;
        const int64_t base = o * k * inner + i;
        T total = T(0);
        for (int64_t j = 0; j < k; ++j) total += gy[base + j * inner];
        for (int64_t j = 0; j < k; ++j)
          gx[base + j * inner] += gy[base + j * inner] - std::exp(py[base + j * inner]) * total;
      }
    });
  }
  return y;
}

// Per sample and channel over all spatial dims: (x - mean)/sqrt(var + 1e-5),
// then affine with per-channel gain and shift. Input rank >= 3, layout
// (B, C, spatial...).
template <typename T>
Tensor<T> channel_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gain,
                       const Tensor<T>& shift) {
  if (x.rank() < 3) throw std::invalid_argument("channel_norm: rank must be >= 3");
  const int64_t b = x.dim(0), c = x.dim(1);
  int64_t sp = 1;
  for (int i = 2; i < x.rank(); ++i) sp *= x.dim(i);
  if (gain.numel() != c || shift.numel() != c)
    throw std::invalid_argument("channel_norm: gain/shift size mismatch");
  constexpr T kEps = T(1e-5);

  Tensor<T> y(x.shape);
  auto mean = std::make_shared<std::vector<T>>(size_t(b * c));
  auto inv_std = std::make_shared<std::vector<T>>(size_t(b * c));
  const T* px = x.ptr();
  const T* pg = gain.ptr();
  const T* ps = shift.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (b * c > 8)
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const T* xr = px + bc * sp;
    T mu = T(0);
    for (int64_t i = 0; i < sp; ++i) mu += xr[i];
    mu /= T(sp);
    T var = T(0);
    for (int64_t i = 0; i < sp; ++i) {
      const T d = xr[i] - mu;
      var += d * d;
    }
    var /= T(sp);
    const T istd = T(1) / std::sqrt(var + kEps);
    (*mean)[bc] = mu;
    (*inv_std)[bc] = istd;
    const int64_t ch = bc % c;
    T* yr = py + bc * sp;
    for (int64_t i = 0; i < sp; ++i) yr[i] = pg[ch] * (xr[i] - mu) * istd + ps[ch];
  }
  if (wants_grad(tape, {&x, &gain, &shift})) {
    tape->track(y);
    tape->record({x.node, gain.node, shift.node}, y.node,
                 [x, gain, shift, y, mean, inv_std, b, c, sp]() {
      const T* gy = y.gptr();
      const T* px = x.ptr();
      const T* pg = gain.ptr();
      if (x.grad) {
        T* gx = x.grad->data();
#pragma omp parallel for schedule(static) if (b * c > 8)
        for (int64_t bc = 0; bc < b * c; ++bc) {
          const T mu = (*mean)[bc], istd = (*inv_std)[bc];
          const T g = pg[bc % c];
          const T* xr = px + bc * sp;
          const T* dyr = gy + bc * sp;
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int64_t i = 0; i < sp; ++i) {
            const T xhat = (xr[i] - mu) * istd;
            sum_dy += dyr[i];
            sum_dy_xhat += dyr[i] * xhat;
          }
          T* gxr = gx + bc * sp;
          const T n = T(sp);
          for (int64_t i = 0; i < sp; ++i) {
            const T xhat = (xr[i] - mu) * istd;
            gxr[i] += g * istd / n * (n * dyr[i] - sum_dy - xhat * sum_dy_xhat);
          }
        }
      }
      if (gain.grad || shift.grad) {
        for (int64_t ch = 0; ch < c; ++ch) {
          T dg = T(0), ds = T(0);
          for (int64_t bi = 0; bi < b; ++bi) {
            const int64_t bc = bi * c + ch;
            const T mu = (*mean)[bc], istd = (*inv_std)[bc];
            const T* xr = px + bc * sp;
            const T* dyr = gy + bc * sp;
            for (int64_t i = 0; i < sp; ++i) {
              dg += dyr[i] * (xr[i] - mu) * istd;
              ds += dyr[i];
            }
          }
          if (gain.grad) (*gain.grad)[ch] += dg;
          if (shift.grad) (*shift.grad)[ch] += ds;
        }
      }
    });
  }
  return y;
}

// (B, C, H, W) -> (B, C) mean over the spatial plane.
template <typename T>
Tensor<T> global_avg_pool2d(Tape<T>* tape, const Tensor<T>& x) {
  if (x.rank() != 4) throw std::invalid_argument("global_avg_pool2d: rank must be 4");
  const int64_t b = x.dim(0), c = x.dim(1), sp = int64_t(x.dim(2)) * x.dim(3);
  Tensor<T> y({x.dim(0), x.dim(1)});
  const T* px = x.ptr();
  T* py = y.ptr();
  for (int64_t bc = 0; bc < b * c; ++bc) {
    T acc = T(0);
    const T* xr = px + bc * sp;
    for (int64_t i = 0; i < sp; ++i) acc += xr[i];
    py[bc] = acc / T(sp);
  }
  if (wants_grad(tape, {&x})) {
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, b, c, sp]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
      for (int64_t bc = 0; bc < b * c; ++bc) {
        const T g = gy[bc] / T(sp);
        T* gxr = gx + bc * sp;
        for (int64_t i = 0; i < sp; ++i) gxr[i] += g;
      }
    });
  }
  return y;
}

// Concatenation along an axis; all other extents must agree.
template <typename T>
Tensor<T> concat(Tape<T>* tape, const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const int rank = xs[0].rank();
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: bad axis");
  std::vector<int> shape = xs[0].shape;
  int total = 0;
  for (const auto& x : xs) {
    if (x.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && x.dim(i) != shape[size_t(i)])
        throw std::invalid_argument("concat: shape mismatch");
    total += x.dim(axis);
  }
  shape[size_t(axis)] = total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[size_t(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= shape[size_t(i)];

  Tensor<T> y(shape);
  T* py = y.ptr();
  int64_t offset = 0;
  for (const auto& x : xs) {
    const int64_t kx = x.dim(axis);
    const T* px = x.ptr();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(px + o * kx * inner, px + (o + 1) * kx * inner,
                py + (o * total + offset) * inner);
    offset += kx;
  }

  bool any = false;
  for (const auto& x : xs) any = any || x.tracked();
  if (tape && any) {
    tape->track(y);
    std::vector<int> in_nodes;
    for (const auto& x : xs) in_nodes.push_back(x.node);
    auto inputs = xs;  // shallow copies
    tape->record(in_nodes, y.node, [inputs, y, outer, inner, total, axis]() {
      const T* gy = y.gptr();
      int64_t offset = 0;
      for (const auto& x : inputs) {
        const int64_t kx = x.dim(axis);
        if (x.grad) {
          T* gx = x.grad->data();
          for (int64_t o = 0; o < outer; ++o) {
            const T* src = gy + (o * total + offset) * inner;
            T* dst = gx + o * kx * inner;
            for (int64_t i = 0; i < kx * inner; ++i) dst[i] += src[i];
          }
        }
        offset += kx;
      }
    });
  }
  return y;
}

// Per-channel scaling: x (B, C, spatial...) * s (B, C).
template <typename T>
Tensor<T> channel_scale(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() < 2 || s.rank() != 2) throw std::invalid_argument("channel_scale: rank mismatch");
  const int64_t b = x.dim(0), c = x.dim(1);
  if (s.dim(0) != b || s.dim(1) != c) throw std::invalid_argument("channel_scale: shape mismatch");
  int64_t sp = 1;
  for (int i = 2; i < x.rank(); ++i) sp *= x.dim(i);
  Tensor<T> y(x.shape);
  const T* px = x.ptr();
  const T* ps = s.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (b * c * sp > 16384)
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const T v = ps[bc];
    const T* xr = px + bc * sp;
    T* yr = py + bc * sp;
    for (int64_t i = 0; i < sp; ++i) yr[i] = v * xr[i];
  }
  if (wants_grad(tape, {&x, &s})) {
    tape->track(y);
    tape->record({x.node, s.node}, y.node, [x, s, y, b, c, sp]() {
      const T* gy = y.gptr();
      const T* px = x.ptr();
      const T* ps = s.ptr();
      for (int64_t bc = 0; bc < b * c; ++bc) {
        const T* dyr = gy + bc * sp;
        if (x.grad) {
          T* gxr = x.grad->data() + bc * sp;
          for (int64_t i = 0; i < sp; ++i) gxr[i] += ps[bc] * dyr[i];
        }
        if (s.grad) {
          const T* xr = px + bc * sp;
          T acc = T(0);
          for (int64_t i = 0; i < sp; ++i) acc += dyr[i] * xr[i];
          (*s.grad)[bc] += acc;
        }
      }
    });
  }
  return y;
}

// Per-row scaling: x (M, C) * s (M, 1).
template <typename T>
Tensor<T> row_scale(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() != 2 || s.rank() != 2 || s.dim(1) != 1 || s.dim(0) != x.dim(0))
    throw std::invalid_argument("row_scale: shape mismatch");
  const int64_t m = x.dim(0), c = x.dim(1);
  Tensor<T> y(x.shape);
  const T* px = x.ptr();
  const T* ps = s.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (m * c > 16384)
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < c; ++j) py[i * c + j] = ps[i] * px[i * c + j];
  if (wants_grad(tape, {&x, &s})) {
    tape->track(y);
    tape->record({x.node, s.node}, y.node, [x, s, y, m, c]() {
      const T* gy = y.gptr();
      const T* px = x.ptr();
      const T* ps = s.ptr();
      for (int64_t i = 0; i < m; ++i) {
        if (x.grad) {
          T* gxr = x.grad->data() + i * c;
          for (int64_t j = 0; j < c; ++j) gxr[j] += ps[i] * gy[i * c + j];
        }
        if (s.grad) {
          T acc = T(0);
          for (int64_t j = 0; j < c; ++j) acc += gy[i * c + j] * px[i * c + j];
          (*s.grad)[i] += acc;
        }
      }
    });
  }
  return y;
}

// Column slice of a 2-D tensor: y = x[:, start : start + len].
template <typename T>
Tensor<T> slice_cols(Tape<T>* tape, const Tensor<T>& x, int start, int len) {
  if (x.rank() != 2) throw std::invalid_argument("slice_cols: rank must be 2");
  const int64_t m = x.dim(0), c = x.dim(1);
  if (start < 0 || len < 1 || start + len > c)
    throw std::invalid_argument("slice_cols: range out of bounds");
  Tensor<T> y({int(m), len});
  const T* px = x.ptr();
  T* py = y.ptr();
  for (int64_t i = 0; i < m; ++i)
    std::copy(px + i * c + start, px + i * c + start + len, py + i * len);
  if (wants_grad(tape, {&x})) {
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, m, c, start, len]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < len; ++j) gx[i * c + start + j] += gy[i * len + j];
    });
  }
  return y;
}

// y[i] = x[rows[i]]; the backward scatter-add is driven by a precomputed
// reverse index so each source row accumulates serially.
template <typename T>
Tensor<T> gather_rows(Tape<T>* tape, const Tensor<T>& x,
                      const std::vector<int32_t>& rows) {
  if (x.rank() != 2) throw std::invalid_argument("gather_rows: rank must be 2");
  const int64_t m = x.dim(0), c = x.dim(1), n = int64_t(rows.size());
  for (int32_t r : rows)
    if (r < 0 || r >= m) throw std::invalid_argument("gather_rows: row out of range");
  Tensor<T> y({int(n), int(c)});
  const T* px = x.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (n * c > 16384)
  for (int64_t i = 0; i < n; ++i)
    std::copy(px + int64_t(rows[i]) * c, px + (int64_t(rows[i]) + 1) * c, py + i * c);
  if (wants_grad(tape, {&x})) {
    std::vector<int64_t> keys(rows.begin(), rows.end());
    auto reverse = std::make_shared<KeyGroups>(group_by_keys(keys));
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, reverse, c]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
      const int64_t g = reverse->num_groups();
#pragma omp parallel for schedule(static) if (g * c > 16384)
      for (int64_t gi = 0; gi < g; ++gi) {
        T* dst = gx + reverse->unique_keys[gi] * c;
        for (int64_t p = reverse->group_offsets[gi]; p < reverse->group_offsets[gi + 1]; ++p) {
          const T* src = gy + int64_t(reverse->rows_by_group[p]) * c;
          for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return y;
}

// Row reduction by precomputed groups. Max routes gradient to the first
// winning row per channel; mean spreads it uniformly.
template <typename T>
Tensor<T> scatter_rows(Tape<T>* tape, const Tensor<T>& x, const KeyGroups& groups,
                       Reduce reduce) {
  if (x.rank() != 2) throw std::invalid_argument("scatter_rows: rank must be 2");
  const int64_t m = x.dim(0), c = x.dim(1);
  if (int64_t(groups.group_of_row.size()) != m)
    throw std::invalid_argument("scatter_rows: group mapping mismatch");
  std::vector<int64_t> keys(m);
  for (int64_t i = 0; i < m; ++i) keys[i] = groups.group_of_row[i];
  auto result = scatter_reduce(x.ptr(), m, c, keys, reduce);
  const int64_t g = groups.num_groups();
  Tensor<T> y = Tensor<T>::from({int(g), int(c)}, std::move(result.reduced));
  if (wants_grad(tape, {&x})) {
    auto argmax = std::make_shared<std::vector<int32_t>>(std::move(result.argmax));
    auto shared_groups = std::make_shared<KeyGroups>(groups);
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, argmax, shared_groups, reduce, g, c]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
      if (reduce == Reduce::kMax) {
        for (int64_t i = 0; i < g * c; ++i)
          if ((*argmax)[i] >= 0) gx[int64_t((*argmax)[i]) * c + i % c] += gy[i];
      } else {
        const auto& gr = *shared_groups;
        for (int64_t gi = 0; gi < g; ++gi) {
          const int64_t count = gr.group_offsets[gi + 1] - gr.group_offsets[gi];
          const T scale = reduce == Reduce::kMean ? T(1) / T(count) : T(1);
          for (int64_t p = gr.group_offsets[gi]; p < gr.group_offsets[gi + 1]; ++p) {
            T* dst = gx + int64_t(gr.rows_by_group[p]) * c;
            for (int64_t j = 0; j < c; ++j) dst[j] += scale * gy[gi * c + j];
          }
        }
      }
    });
  }
  return y;
}

}  // namespace ssc::ops
