#pragma once
#include <stdexcept>

#include "ssc/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

// Dense cross-correlation kernels. Every output plane (b, co) and every
// input-gradient plane (b, ci) is written by exactly one thread with a fixed
// accumulation order, so forward and backward are bit-deterministic for any
// thread count.
namespace ssc::ops {

namespace detail {
inline int conv_out_extent(int in, int pad, int k, int stride) {
  const int span = in + 2 * pad - k;
  if (span < 0) throw std::invalid_argument("conv: spatial extent smaller than kernel");
  return span / stride + 1;
}
// Range of output positions whose tap (o*stride + ko - pad) lands inside
// [0, in).
inline void conv_out_range(int in, int pad, int ko, int stride, int out,
                           int64_t* lo, int64_t* hi) {
  int64_t l = 0;
  const int64_t shift = int64_t(pad) - ko;
  if (shift > 0) l = (shift + stride - 1) / stride;
  int64_t h = (int64_t(in) - 1 + shift) / stride;
  if (h > out - 1) h = out - 1;
  *lo = l;
  *hi = h;  // inclusive; empty when hi < lo
}
}  // namespace detail

// x: (B, Cin, D0, D1, D2), w: (Cout, Cin, k, k, k), b: (Cout)
template <typename T>
Tensor<T> conv3d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b, int stride, int pad) {
  if (x.rank() != 5 || w.rank() != 5) throw std::invalid_argument("conv3d: rank mismatch");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv3d: bad stride/padding");
  const int64_t bn = x.dim(0), cin = x.dim(1);
  const int d0 = x.dim(2), d1 = x.dim(3), d2 = x.dim(4);
  const int64_t cout = w.dim(0);
  const int k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k || w.dim(4) != k || b.numel() != cout)
    throw std::invalid_argument("conv3d: weight shape mismatch");
  const int o0 = detail::conv_out_extent(d0, pad, k, stride);
  const int o1 = detail::conv_out_extent(d1, pad, k, stride);
  const int o2 = detail::conv_out_extent(d2, pad, k, stride);

  Tensor<T> y({int(bn), int(cout), o0, o1, o2});
  const int64_t in_sp = int64_t(d0) * d1 * d2;
  const int64_t out_sp = int64_t(o0) * o1 * o2;
  const T* px = x.ptr();
  const T* pw = w.ptr();
  const T* pb = b.ptr();
  T* py = y.ptr();

#pragma omp parallel for collapse(2) schedule(static) if (bn * cout > 1)
  for (int64_t bi = 0; bi < bn; ++bi) {
    for (int64_t co = 0; co < cout; ++co) {
      T* out = py + (bi * cout + co) * out_sp;
      for (int64_t i = 0; i < out_sp; ++i) out[i] = pb[co];
      for (int64_t ci = 0; ci < cin; ++ci) {
        const T* in = px + (bi * cin + ci) * in_sp;
        const T* wk = pw + (co * cin + ci) * k * k * k;
        for (int k0 = 0; k0 < k; ++k0)
          for (int k1 = 0; k1 < k; ++k1)
            for (int k2 = 0; k2 < k; ++k2) {
              const T wv = wk[(k0 * k + k1) * k + k2];
              if (wv == T(0)) continue;
              int64_t l0, h0, l1, h1, l2, h2;
              detail::conv_out_range(d0, pad, k0, stride, o0, &l0, &h0);
              detail::conv_out_range(d1, pad, k1, stride, o1, &l1, &h1);
              detail::conv_out_range(d2, pad, k2, stride, o2, &l2, &h2);
              for (int64_t p0 = l0; p0 <= h0; ++p0) {
                const int64_t i0 = p0 * stride + k0 - pad;
                for (int64_t p1 = l1; p1 <= h1; ++p1) {
                  const int64_t i1 = p1 * stride + k1 - pad;
                  const T* src = in + (i0 * d1 + i1) * d2 + (l2 * stride + k2 - pad);
                  T* dst = out + (p0 * o1 + p1) * o2 + l2;
                  const int64_t len = h2 - l2 + 1;
                  if (stride == 1) {
                    for (int64_t q = 0; q < len; ++q) dst[q] += wv * src[q];
                  } else {
                    for (int64_t q = 0; q < len; ++q) dst[q] += wv * src[q * stride];
                  }
                }
              }
            }
      }
    }
  }

  if (wants_grad(tape, {&x, &w, &b})) {
    tape->track(y);
    tape->record({x.node, w.node, b.node}, y.node,
                 [x, w, b, y, bn, cin, cout, d0, d1, d2, o0, o1, o2, k, stride, pad,
                  in_sp, out_sp]() {
      const T* gy = y.gptr();
      const T* px = x.ptr();
      const T* pw = w.ptr();
      if (x.grad) {
        T* gx = x.grad->data();
#pragma omp parallel for collapse(2) schedule(static) if (bn * cin > 1)
        for (int64_t bi = 0; bi < bn; ++bi) {
          for (int64_t ci = 0; ci < cin; ++ci) {
            T* gin = gx + (bi * cin + ci) * in_sp;
            for (int64_t co = 0; co < cout; ++co) {
              const T* gout = gy + (bi * cout + co) * out_sp;
              const T* wk = pw + (co * cin + ci) * k * k * k;
              for (int k0 = 0; k0 < k; ++k0)
                for (int k1 = 0; k1 < k; ++k1)
                  for (int k2 = 0; k2 < k; ++k2) {
                    const T wv = wk[(k0 * k + k1) * k + k2];
                    if (wv == T(0)) continue;
                    int64_t l0, h0, l1, h1, l2, h2;
                    detail::conv_out_range(d0, pad, k0, stride, o0, &l0, &h0);
                    detail::conv_out_range(d1, pad, k1, stride, o1, &l1, &h1);
                    detail::conv_out_range(d2, pad, k2, stride, o2, &l2, &h2);
                    for (int64_t p0 = l0; p0 <= h0; ++p0) {
                      const int64_t i0 = p0 * stride + k0 - pad;
                      for (int64_t p1 = l1; p1 <= h1; ++p1) {
                        const int64_t i1 = p1 * stride + k1 - pad;
                        T* dst = gin + (i0 * d1 + i1) * d2 + (l2 * stride + k2 - pad);
                        const T* src = gout + (p0 * o1 + p1) * o2 + l2;
                        const int64_t len = h2 - l2 + 1;
                        if (stride == 1) {
                          for (int64_t q = 0; q < len; ++q) dst[q] += wv * src[q];
                        } else {
                          for (int64_t q = 0; q < len; ++q) dst[q * stride] += wv * src[q];
                        }
                      }
                    }
                  }
            }
          }
        }
      }
      if (w.grad) {
        T* gw = w.grad->data();
        const int64_t kv = int64_t(k) * k * k;
#pragma omp parallel for collapse(2) schedule(static) if (cout * cin > 1)
        for (int64_t co = 0; co < cout; ++co) {
          for (int64_t ci = 0; ci < cin; ++ci) {
            T* gwk = gw + (co * cin + ci) * kv;
            for (int k0 = 0; k0 < k; ++k0)
              for (int k1 = 0; k1 < k; ++k1)
                for (int k2 = 0; k2 < k; ++k2) {
                  int64_t l0, h0, l1, h1, l2, h2;
                  detail::conv_out_range(d0, pad, k0, stride, o0, &l0, &h0);
                  detail::conv_out_range(d1, pad, k1, stride, o1, &l1, &h1);
                  detail::conv_out_range(d2, pad, k2, stride, o2, &l2, &h2);
                  T acc = T(0);
                  for (int64_t bi = 0; bi < bn; ++bi) {
                    const T* in = px + (bi * cin + ci) * in_sp;
                    const T* gout = gy + (bi * cout + co) * out_sp;
                    for (int64_t p0 = l0; p0 <= h0; ++p0) {
                      const int64_t i0 = p0 * stride + k0 - pad;
                      for (int64_t p1 = l1; p1 <= h1; ++p1) {
                        const int64_t i1 = p1 * stride + k1 - pad;
                        const T* src = in + (i0 * d1 + i1) * d2 + (l2 * stride + k2 - pad);
                        const T* gr = gout + (p0 * o1 + p1) * o2 + l2;
                        for (int64_t q = 0; q <= h2 - l2; ++q)
                          acc += gr[q] * src[q * stride];
                      }
                    }
                  }
                  gwk[(k0 * k + k1) * k + k2] += acc;
                }
          }
        }
      }
      if (b.grad) {
        T* gb = b.grad->data();
        for (int64_t co = 0; co < cout; ++co) {
          T acc = T(0);
          for (int64_t bi = 0; bi < bn; ++bi) {
            const T* gout = gy + (bi * cout + co) * out_sp;
            for (int64_t i = 0; i < out_sp; ++i) acc += gout[i];
          }
          gb[co] += acc;
        }
      }
    });
  }
  return y;
}

// x: (B, Cin, H, W), w: (Cout, Cin, k, k), b: (Cout)
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument("conv2d: rank mismatch");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  const int64_t bn = x.dim(0), cin = x.dim(1);
  const int d0 = x.dim(2), d1 = x.dim(3);
  const int64_t cout = w.dim(0);
  const int k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k || b.numel() != cout)
    throw std::invalid_argument("conv2d: weight shape mismatch");
  const int o0 = detail::conv_out_extent(d0, pad, k, stride);
  const int o1 = detail::conv_out_extent(d1, pad, k, stride);

  Tensor<T> y({int(bn), int(cout), o0, o1});
  const int64_t in_sp = int64_t(d0) * d1;
  const int64_t out_sp = int64_t(o0) * o1;
  const T* px = x.ptr();
  const T* pw = w.ptr();
  const T* pb = b.ptr();
  T* py = y.ptr();

#pragma omp parallel for collapse(2) schedule(static) if (bn * cout > 1)
  for (int64_t bi = 0; bi < bn; ++bi) {
    for (int64_t co = 0; co < cout; ++co) {
      T* out = py + (bi * cout + co) * out_sp;
      for (int64_t i = 0; i < out_sp; ++i) out[i] = pb[co];
      for (int64_t ci = 0; ci < cin; ++ci) {
        const T* in = px + (bi * cin + ci) * in_sp;
        const T* wk = pw + (co * cin + ci) * k * k;
        for (int k0 = 0; k0 < k; ++k0)
          for (int k1 = 0; k1 < k; ++k1) {
            const T wv = wk[k0 * k + k1];
            if (wv == T(0)) continue;
            int64_t l0, h0, l1, h1;
            detail::conv_out_range(d0, pad, k0, stride, o0, &l0, &h0);
            detail::conv_out_range(d1, pad, k1, stride, o1, &l1, &h1);
            for (int64_t p0 = l0; p0 <= h0; ++p0) {
              const int64_t i0 = p0 * stride + k0 - pad;
              const T* src = in + i0 * d1 + (l1 * stride + k1 - pad);
              T* dst = out + p0 * o1 + l1;
              const int64_t len = h1 - l1 + 1;
              if (stride == 1) {
                for (int64_t q = 0; q < len; ++q) dst[q] += wv * src[q];
              } else {
                for (int64_t q = 0; q < len; ++q) dst[q] += wv * src[q * stride];
              }
            }
          }
      }
    }
  }

  if (wants_grad(tape, {&x, &w, &b})) {
    tape->track(y);
    tape->record({x.node, w.node, b.node}, y.node,
                 [x, w, b, y, bn, cin, cout, d0, d1, o0, o1, k, stride, pad, in_sp,
                  out_sp]() {
      const T* gy = y.gptr();
      const T* px = x.ptr();
      const T* pw = w.ptr();
      if (x.grad) {
        T* gx = x.grad->data();
#pragma omp parallel for collapse(2) schedule(static) if (bn * cin > 1)
        for (int64_t bi = 0; bi < bn; ++bi) {
          for (int64_t ci = 0; ci < cin; ++ci) {
            T* gin = gx + (bi * cin + ci) * in_sp;
            for (int64_t co = 0; co < cout; ++co) {
              const T* gout = gy + (bi * cout + co) * out_sp;
              const T* wk = pw + (co * cin + ci) * k * k;
              for (int k0 = 0; k0 < k; ++k0)
                for (int k1 = 0; k1 < k; ++k1) {
                  const T wv = wk[k0 * k + k1];
                  if (wv == T(0)) continue;
                  int64_t l0, h0, l1, h1;
                  detail::conv_out_range(d0, pad, k0, stride, o0, &l0, &h0);
                  detail::conv_out_range(d1, pad, k1, stride, o1, &l1, &h1);
                  for (int64_t p0 = l0; p0 <= h0; ++p0) {
                    const int64_t i0 = p0 * stride + k0 - pad;
                    T* dst = gin + i0 * d1 + (l1 * stride + k1 - pad);
                    const T* src = gout + p0 * o1 + l1;
                    const int64_t len = h1 - l1 + 1;
                    if (stride == 1) {
                      for (int64_t q = 0; q < len; ++q) dst[q] += wv * src[q];
                    } else {
                      for (int64_t q = 0; q < len; ++q) dst[q * stride] += wv * src[q];
                    }
                  }
                }
            }
          }
        }
      }
      if (w.grad) {
        T* gw = w.grad->data();
#pragma omp parallel for collapse(2) schedule(static) if (cout * cin > 1)
        for (int64_t co = 0; co < cout; ++co) {
          for (int64_t ci = 0; ci < cin; ++ci) {
            T* gwk = gw + (co * cin + ci) * k * k;
            for (int k0 = 0; k0 < k; ++k0)
              for (int k1 = 0; k1 < k; ++k1) {
                int64_t l0, h0, l1, h1;
                detail::conv_out_range(d0, pad, k0, stride, o0, &l0, &h0);
                detail::conv_out_range(d1, pad, k1, stride, o1, &l1, &h1);
                T acc = T(0);
                for (int64_t bi = 0; bi < bn; ++bi) {
                  const T* in = px + (bi * cin + ci) * in_sp;
                  const T* gout = gy + (bi * cout + co) * out_sp;
                  for (int64_t p0 = l0; p0 <= h0; ++p0) {
                    const int64_t i0 = p0 * stride + k0 - pad;
                    const T* src = in + i0 * d1 + (l1 * stride + k1 - pad);
                    const T* gr = gout + p0 * o1 + l1;
                    for (int64_t q = 0; q <= h1 - l1; ++q) acc += gr[q] * src[q * stride];
                  }
                }
                gwk[k0 * k + k1] += acc;
              }
          }
        }
      }
      if (b.grad) {
        T* gb = b.grad->data();
        for (int64_t co = 0; co < cout; ++co) {
          T acc = T(0);
          for (int64_t bi = 0; bi < bn; ++bi) {
            const T* gout = gy + (bi * cout + co) * out_sp;
            for (int64_t i = 0; i < out_sp; ++i) acc += gout[i];
          }
          gb[co] += acc;
        }
      }
    });
  }
  return y;
}

// Transposed 2D convolution, no padding: out = (in - 1) * stride + k.
// x: (B, Cin, H, W), w: (Cin, Cout, k, k), b: (Cout)
template <typename T>
Tensor<T> conv2d_transposed(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                            const Tensor<T>& b, int stride) {
  if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument("conv2d_transposed: rank mismatch");
  if (stride < 1) throw std::invalid_argument("conv2d_transposed: bad stride");
  const int64_t bn = x.dim(0), cin = x.dim(1);
  const int d0 = x.dim(2), d1 = x.dim(3);
  const int64_t cout = w.dim(1);
  const int k = w.dim(2);
  if (w.dim(0) != cin || w.dim(3) != k || b.numel() != cout)
    throw std::invalid_argument("conv2d_transposed: weight shape mismatch");
  const int o0 = (d0 - 1) * stride + k;
  const int o1 = (d1 - 1) * stride + k;

  Tensor<T> y({int(bn), int(cout), o0, o1});
  const int64_t in_sp = int64_t(d0) * d1;
  const int64_t out_sp = int64_t(o0) * o1;
  const T* px = x.ptr();
  const T* pw = w.ptr();
  const T* pb = b.ptr();
  T* py = y.ptr();

  // Gather form: every output cell sums the taps (i*stride + ko == o).
#pragma omp parallel for collapse(2) schedule(static) if (bn * cout > 1)
  for (int64_t bi = 0; bi < bn; ++bi) {
    for (int64_t co = 0; co < cout; ++co) {
      T* out = py + (bi * cout + co) * out_sp;
      for (int64_t p0 = 0; p0 < o0; ++p0) {
        for (int64_t p1 = 0; p1 < o1; ++p1) {
          T acc = pb[co];
          for (int k0 = 0; k0 < k; ++k0) {
            const int64_t r0 = p0 - k0;
            if (r0 < 0 || r0 % stride != 0) continue;
            const int64_t i0 = r0 / stride;
            if (i0 >= d0) continue;
            for (int k1 = 0; k1 < k; ++k1) {
              const int64_t r1 = p1 - k1;
              if (r1 < 0 || r1 % stride != 0) continue;
              const int64_t i1 = r1 / stride;
              if (i1 >= d1) continue;
              for (int64_t ci = 0; ci < cin; ++ci)
                acc += px[(bi * cin + ci) * in_sp + i0 * d1 + i1] *
                       pw[((ci * cout + co) * k + k0) * k + k1];
            }
          }
          out[p0 * o1 + p1] = acc;
        }
      }
    }
  }

  if (wants_grad(tape, {&x, &w, &b})) {
    tape->track(y);
    tape->record({x.node, w.node, b.node}, y.node,
                 [x, w, b, y, bn, cin, cout, d0, d1, o0, o1, k, stride, in_sp, out_sp]() {
      const T* gy = y.gptr();
      const T* px = x.ptr();
      const T* pw = w.ptr();
      if (x.grad) {
        T* gx = x.grad->data();
#pragma omp parallel for collapse(2) schedule(static) if (bn * cin > 1)
        for (int64_t bi = 0; bi < bn; ++bi) {
          for (int64_t ci = 0; ci < cin; ++ci) {
            T* gin = gx + (bi * cin + ci) * in_sp;
            for (int64_t i0 = 0; i0 < d0; ++i0)
              for (int64_t i1 = 0; i1 < d1; ++i1) {
                T acc = T(0);
                for (int64_t co = 0; co < cout; ++co) {
                  const T* gout = gy + (bi * cout + co) * out_sp;
                  for (int k0 = 0; k0 < k; ++k0)
                    for (int k1 = 0; k1 < k; ++k1)
                      acc += gout[(i0 * stride + k0) * o1 + i1 * stride + k1] *
                             pw[((ci * cout + co) * k + k0) * k + k1];
                }
                gin[i0 * d1 + i1] += acc;
              }
          }
        }
      }
      if (w.grad) {
        T* gw = w.grad->data();
#pragma omp parallel for collapse(2) schedule(static) if (cin * cout > 1)
        for (int64_t ci = 0; ci < cin; ++ci) {
          for (int64_t co = 0; co < cout; ++co) {
            for (int k0 = 0; k0 < k; ++k0)
              for (int k1 = 0; k1 < k; ++k1) {
                T acc = T(0);
                for (int64_t bi = 0; bi < bn; ++bi) {
                  const T* in = px + (bi * cin + ci) * in_sp;
                  const T* gout = gy + (bi * cout + co) * out_sp;
                  for (int64_t i0 = 0; i0 < d0; ++i0)
                    for (int64_t i1 = 0; i1 < d1; ++i1)
                      acc += in[i0 * d1 + i1] *
                             gout[(i0 * stride + k0) * o1 + i1 * stride + k1];
                }
                gw[((ci * cout + co) * k + k0) * k + k1] += acc;
              }
          }
        }
      }
      if (b.grad) {
        T* gb = b.grad->data();
        for (int64_t co = 0; co < cout; ++co) {
          T acc = T(0);
          for (int64_t bi = 0; bi < bn; ++bi) {
            const T* gout = gy + (bi * cout + co) * out_sp;
            for (int64_t i = 0; i < out_sp; ++i) acc += gout[i];
          }
          gb[co] += acc;
        }
      }
    });
  }
  return y;
}

// 2x2x2 window, stride 2; gradient flows to the first-scanned maximum.
template <typename T>
Tensor<T> max_pool3d(Tape<T>* tape, const Tensor<T>& x) {
  if (x.rank() != 5) throw std::invalid_argument("max_pool3d: rank must be 5");
  const int64_t bn = x.dim(0), c = x.dim(1);
  const int d0 = x.dim(2), d1 = x.dim(3), d2 = x.dim(4);
  if (d0 % 2 || d1 % 2 || d2 % 2)
    throw std::invalid_argument("max_pool3d: spatial dims must be even");
  const int o0 = d0 / 2, o1 = d1 / 2, o2 = d2 / 2;

  Tensor<T> y({int(bn), int(c), o0, o1, o2});
  const int64_t in_sp = int64_t(d0) * d1 * d2;
  const int64_t out_sp = int64_t(o0) * o1 * o2;
  auto argmax = std::make_shared<std::vector<int64_t>>(size_t(bn * c * out_sp));
  const T* px = x.ptr();
  T* py = y.ptr();

#pragma omp parallel for collapse(2) schedule(static) if (bn * c > 1)
  for (int64_t bi = 0; bi < bn; ++bi) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const T* in = px + (bi * c + ci) * in_sp;
      T* out = py + (bi * c + ci) * out_sp;
      int64_t* arg = argmax->data() + (bi * c + ci) * out_sp;
      for (int64_t p0 = 0; p0 < o0; ++p0)
        for (int64_t p1 = 0; p1 < o1; ++p1)
          for (int64_t p2 = 0; p2 < o2; ++p2) {
            T best = -std::numeric_limits<T>::infinity();
            int64_t best_i = -1;
            for (int w0 = 0; w0 < 2; ++w0)
              for (int w1 = 0; w1 < 2; ++w1)
                for (int w2 = 0; w2 < 2; ++w2) {
                  const int64_t i =
                      ((p0 * 2 + w0) * d1 + p1 * 2 + w1) * d2 + p2 * 2 + w2;
                  if (in[i] > best) {
                    best = in[i];
                    best_i = i;
                  }
                }
            out[(p0 * o1 + p1) * o2 + p2] = best;
            arg[(p0 * o1 + p1) * o2 + p2] = best_i;
          }
    }
  }

  if (wants_grad(tape, {&x})) {
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, argmax, bn, c, in_sp, out_sp]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
#pragma omp parallel for collapse(2) schedule(static) if (bn * c > 1)
      for (int64_t bi = 0; bi < bn; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
          const int64_t base = (bi * c + ci) * out_sp;
          T* gin = gx + (bi * c + ci) * in_sp;
          const int64_t* arg = argmax->data() + base;
          for (int64_t i = 0; i < out_sp; ++i) gin[arg[i]] += gy[base + i];
        }
    });
  }
  return y;
}

}  // namespace ssc::ops
