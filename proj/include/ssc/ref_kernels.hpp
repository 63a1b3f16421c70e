#pragma once
#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

// Serial reference implementations, written as plain nested loops with no
// shared code paths with the OpenMP kernels. Tests use them as oracles and
// the benchmark tool compares against them.
namespace ssc::ref {

// Naive six-loop cross-correlation over (B, Cin, D0, D1, D2).
template <typename T>
std::vector<T> conv3d(const std::vector<T>& x, int bn, int cin, int d0, int d1, int d2,
                      const std::vector<T>& w, int cout, int k,
                      const std::vector<T>& bias, int stride, int pad,
                      int* out0 = nullptr, int* out1 = nullptr, int* out2 = nullptr) {
  const int o0 = (d0 + 2 * pad - k) / stride + 1;
  const int o1 = (d1 + 2 * pad - k) / stride + 1;
  const int o2 = (d2 + 2 * pad - k) / stride + 1;
  if (out0) *out0 = o0;
  if (out1) *out1 = o1;
  if (out2) *out2 = o2;
  std::vector<T> y(size_t(bn) * cout * o0 * o1 * o2, T(0));
  for (int b = 0; b < bn; ++b)
    for (int co = 0; co < cout; ++co)
      for (int p0 = 0; p0 < o0; ++p0)
        for (int p1 = 0; p1 < o1; ++p1)
          for (int p2 = 0; p2 < o2; ++p2) {
            T acc = bias[size_t(co)];
            for (int ci = 0; ci < cin; ++ci)
              for (int k0 = 0; k0 < k; ++k0)
                for (int k1 = 0; k1 < k; ++k1)
                  for (int k2 = 0; k2 < k; ++k2) {
                    const int i0 = p0 * stride + k0 - pad;
                    const int i1 = p1 * stride + k1 - pad;
                    const int i2 = p2 * stride + k2 - pad;
                    if (i0 < 0 || i0 >= d0 || i1 < 0 || i1 >= d1 || i2 < 0 || i2 >= d2)
                      continue;
                    acc += x[(((size_t(b) * cin + ci) * d0 + i0) * d1 + i1) * d2 + i2] *
                           w[(((size_t(co) * cin + ci) * k + k0) * k + k1) * k + k2];
                  }
            y[(((size_t(b) * cout + co) * o0 + p0) * o1 + p1) * o2 + p2] = acc;
          }
  return y;
}

template <typename T>
std::vector<T> conv2d(const std::vector<T>& x, int bn, int cin, int d0, int d1,
                      const std::vector<T>& w, int cout, int k,
                      const std::vector<T>& bias, int stride, int pad,
                      int* out0 = nullptr, int* out1 = nullptr) {
  const int o0 = (d0 + 2 * pad - k) / stride + 1;
  const int o1 = (d1 + 2 * pad - k) / stride + 1;
  if (out0) *out0 = o0;
  if (out1) *out1 = o1;
  std::vector<T> y(size_t(bn) * cout * o0 * o1, T(0));
  for (int b = 0; b < bn; ++b)
    for (int co = 0; co < cout; ++co)
      for (int p0 = 0; p0 < o0; ++p0)
        for (int p1 = 0; p1 < o1; ++p1) {
          T acc = bias[size_t(co)];
          for (int ci = 0; ci < cin; ++ci)
            for (int k0 = 0; k0 < k; ++k0)
              for (int k1 = 0; k1 < k; ++k1) {
                const int i0 = p0 * stride + k0 - pad;
                const int i1 = p1 * stride + k1 - pad;
                if (i0 < 0 || i0 >= d0 || i1 < 0 || i1 >= d1) continue;
                acc += x[((size_t(b) * cin + ci) * d0 + i0) * d1 + i1] *
                       w[((size_t(co) * cin + ci) * k + k0) * k + k1];
              }
          y[((size_t(b) * cout + co) * o0 + p0) * o1 + p1] = acc;
        }
  return y;
}

// Scatter form of the transposed convolution; weight layout (Cin, Cout, k, k).
template <typename T>
std::vector<T> conv2d_transposed(const std::vector<T>& x, int bn, int cin, int d0,
                                 int d1, const std::vector<T>& w, int cout, int k,
                                 const std::vector<T>& bias, int stride,
                                 int* out0 = nullptr, int* out1 = nullptr) {
  const int o0 = (d0 - 1) * stride + k;
  const int o1 = (d1 - 1) * stride + k;
  if (out0) *out0 = o0;
  if (out1) *out1 = o1;
  std::vector<T> y(size_t(bn) * cout * o0 * o1, T(0));
  for (int b = 0; b < bn; ++b)
    for (int co = 0; co < cout; ++co)
      for (int p = 0; p < o0 * o1; ++p)
        y[(size_t(b) * cout + co) * o0 * o1 + p] = bias[size_t(co)];
  for (int b = 0; b < bn; ++b)
    for (int ci = 0; ci < cin; ++ci)
      for (int i0 = 0; i0 < d0; ++i0)
        for (int i1 = 0; i1 < d1; ++i1) {
          const T v = x[((size_t(b) * cin + ci) * d0 + i0) * d1 + i1];
          for (int co = 0; co < cout; ++co)
            for (int k0 = 0; k0 < k; ++k0)
              for (int k1 = 0; k1 < k; ++k1)
                y[((size_t(b) * cout + co) * o0 + i0 * stride + k0) * o1 + i1 * stride +
                  k1] += v * w[((size_t(ci) * cout + co) * k + k0) * k + k1];
        }
  return y;
}

template <typename T>
std::vector<T> max_pool3d(const std::vector<T>& x, int bn, int c, int d0, int d1,
                          int d2) {
  const int o0 = d0 / 2, o1 = d1 / 2, o2 = d2 / 2;
  std::vector<T> y(size_t(bn) * c * o0 * o1 * o2);
  for (int b = 0; b < bn; ++b)
    for (int ci = 0; ci < c; ++ci)
      for (int p0 = 0; p0 < o0; ++p0)
        for (int p1 = 0; p1 < o1; ++p1)
          for (int p2 = 0; p2 < o2; ++p2) {
            T best = -std::numeric_limits<T>::infinity();
            for (int w0 = 0; w0 < 2; ++w0)
              for (int w1 = 0; w1 < 2; ++w1)
                for (int w2 = 0; w2 < 2; ++w2)
                  best = std::max(
                      best, x[(((size_t(b) * c + ci) * d0 + p0 * 2 + w0) * d1 + p1 * 2 +
                               w1) * d2 + p2 * 2 + w2]);
            y[(((size_t(b) * c + ci) * o0 + p0) * o1 + p1) * o2 + p2] = best;
          }
  return y;
}

enum class Reduce { kMax, kMean, kSum };

// Per-key grouping with an ordered map, one pass per key.
template <typename T>
void scatter_reduce(const std::vector<T>& features, int64_t c,
                    const std::vector<int64_t>& keys, Reduce reduce,
                    std::vector<int64_t>* unique_keys, std::vector<T>* reduced) {
  std::map<int64_t, std::vector<int64_t>> rows_of;
  for (int64_t i = 0; i < int64_t(keys.size()); ++i) rows_of[keys[i]].push_back(i);
  unique_keys->clear();
  reduced->clear();
  for (const auto& [key, rows] : rows_of) {
    unique_keys->push_back(key);
    for (int64_t j = 0; j < c; ++j) {
      if (reduce == Reduce::kMax) {
        T best = -std::numeric_limits<T>::infinity();
        for (int64_t r : rows) best = std::max(best, features[size_t(r * c + j)]);
        reduced->push_back(best);
      } else {
        T acc = T(0);
        for (int64_t r : rows) acc += features[size_t(r * c + j)];
        if (reduce == Reduce::kMean) acc /= T(rows.size());
        reduced->push_back(acc);
      }
    }
  }
}

// Max over z of a densified (C, L, W, H) volume, restricted to the occupied
// voxels of each column; empty columns give zero.
template <typename T>
std::vector<T> bev_zmax(const std::vector<T>& dense, int c, int l, int w, int h,
                        const std::vector<uint8_t>& occupied_voxel) {
  std::vector<T> bev(size_t(c) * l * w, T(0));
  for (int ci = 0; ci < c; ++ci)
    for (int x = 0; x < l; ++x)
      for (int y = 0; y < w; ++y) {
        T best = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (int z = 0; z < h; ++z) {
          if (!occupied_voxel[(size_t(x) * w + y) * h + z]) continue;
          any = true;
          best = std::max(best, dense[((size_t(ci) * l + x) * w + y) * h + z]);
        }
        if (any) bev[(size_t(ci) * l + x) * w + y] = best;
      }
  return bev;
}

// Direct Lovasz-extension evaluation for one class: sort the errors
// descending and accumulate m_sorted[i] * (J(S_i) - J(S_{i-1})) where
// J(S) = |S| / |fg union S| on the prefix sets.
template <typename T>
T lovasz_class_direct(const std::vector<T>& errors, const std::vector<uint8_t>& is_fg) {
  const int64_t n = int64_t(errors.size());
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return errors[a] > errors[b]; });
  int64_t fg_total = 0;
  for (uint8_t f : is_fg) fg_total += f;
  T loss = T(0);
  T prev_delta = T(0);
  int64_t prefix_nonfg = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (!is_fg[size_t(order[i])]) ++prefix_nonfg;
    const T delta = T(i + 1) / T(fg_total + prefix_nonfg);
    loss += errors[size_t(order[i])] * (delta - prev_delta);
    prev_delta = delta;
  }
  return loss;
}

// Triple-loop confusion matrix over two label volumes, skipping invalids.
inline std::vector<int64_t> confusion(const std::vector<uint16_t>& gt,
                                      const std::vector<uint16_t>& pred,
                                      const std::vector<uint8_t>& invalid,
                                      int num_classes_with_empty) {
  const int k = num_classes_with_empty;
  std::vector<int64_t> cm(size_t(k) * k, 0);
  for (size_t i = 0; i < gt.size(); ++i) {
    if (invalid[i]) continue;
    cm[size_t(gt[i]) * k + pred[i]] += 1;
  }
  return cm;
}

}  // namespace ssc::ref
