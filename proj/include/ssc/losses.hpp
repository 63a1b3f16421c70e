#pragma once
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ssc/ops_basic.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

// Loss scalars of one forward pass; total = 3*bev + sem + com by
// construction (Eq. of the multi-task objective).
struct LossReport {
  double bev = 0.0;
  double sem = 0.0;
  double com = 0.0;
  double total = 0.0;
  std::array<double, 3> sem_stages{0.0, 0.0, 0.0};
  std::array<double, 3> com_stages{0.0, 0.0, 0.0};
};

namespace ops {

template <typename T>
Tensor<T> affine(Tape<T>* tape, const Tensor<T>& x, T a, T b) {
  Tensor<T> y(x.shape);
  const int64_t n = y.numel();
  const T* px = x.ptr();
  T* py = y.ptr();
  for (int64_t i = 0; i < n; ++i) py[i] = a * px[i] + b;
  if (wants_grad(tape, {&x})) {
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, a, n]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
      for (int64_t i = 0; i < n; ++i) gx[i] += a * gy[i];
    });
  }
  return y;
}

// Mean over non-ignored rows of -log softmax(logits)[target]; an empty
// selection gives 0 with zero gradient.
template <typename T>
Tensor<T> cross_entropy(Tape<T>* tape, const Tensor<T>& logits,
                        const std::vector<int32_t>& targets,
                        const std::vector<uint8_t>& ignore) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be 2-D");
  const int64_t m = logits.dim(0), k = logits.dim(1);
  if (int64_t(targets.size()) != m || int64_t(ignore.size()) != m)
    throw std::invalid_argument("cross_entropy: target size mismatch");

  int64_t count = 0;
  double total = 0.0;
  const T* pl = logits.ptr();
  auto log_probs = std::make_shared<std::vector<T>>(size_t(m * k));
  for (int64_t i = 0; i < m; ++i) {
    if (ignore[size_t(i)]) continue;
    const int32_t t = targets[size_t(i)];
    if (t < 0 || t >= k) throw std::invalid_argument("cross_entropy: target out of range");
    const T* row = pl + i * k;
    T mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int64_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    for (int64_t j = 0; j < k; ++j) (*log_probs)[size_t(i * k + j)] = row[j] - lse;
    total += double(lse - row[t]);
    ++count;
  }
  Tensor<T> y = Tensor<T>::from({1}, {count ? T(total / double(count)) : T(0)});
  if (wants_grad(tape, {&logits}) && count > 0) {
    tape->track(y);
    auto tgt = std::make_shared<std::vector<int32_t>>(targets);
    auto ign = std::make_shared<std::vector<uint8_t>>(ignore);
    tape->record({logits.node}, y.node, [logits, y, tgt, ign, log_probs, m, k, count]() {
      if (!logits.grad) return;
      T* gx = logits.grad->data();
      const T g = (*y.grad)[0] / T(count);
      for (int64_t i = 0; i < m; ++i) {
        if ((*ign)[size_t(i)]) continue;
        for (int64_t j = 0; j < k; ++j) {
          const T p = std::exp((*log_probs)[size_t(i * k + j)]);
          gx[i * k + j] += g * (p - (j == (*tgt)[size_t(i)] ? T(1) : T(0)));
        }
      }
    });
  } else if (wants_grad(tape, {&logits})) {
    tape->track(y);  // all rows ignored: constant node, zero gradient
  }
  return y;
}

// Numerically stable binary cross-entropy on logits:
// max(z,0) - z*t + log(1 + exp(-|z|)), averaged over non-ignored rows.
template <typename T>
Tensor<T> bce_with_logits(Tape<T>* tape, const Tensor<T>& logits,
                          const std::vector<uint8_t>& targets,
                          const std::vector<uint8_t>& ignore) {
  const int64_t m = logits.numel();
  if (int64_t(targets.size()) != m || int64_t(ignore.size()) != m)
    throw std::invalid_argument("bce_with_logits: target size mismatch");
  const T* pz = logits.ptr();
  int64_t count = 0;
  double total = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    if (ignore[size_t(i)]) continue;
    const double z = double(pz[i]);
    const double t = targets[size_t(i)] ? 1.0 : 0.0;
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    ++count;
  }
  Tensor<T> y = Tensor<T>::from({1}, {count ? T(total / double(count)) : T(0)});
  if (wants_grad(tape, {&logits}) && count > 0) {
    tape->track(y);
    auto tgt = std::make_shared<std::vector<uint8_t>>(targets);
    auto ign = std::make_shared<std::vector<uint8_t>>(ignore);
    tape->record({logits.node}, y.node, [logits, y, tgt, ign, m, count]() {
      if (!logits.grad) return;
      T* gx = logits.grad->data();
      const T* pz = logits.ptr();
      const T g = (*y.grad)[0] / T(count);
      for (int64_t i = 0; i < m; ++i) {
        if ((*ign)[size_t(i)]) continue;
        const T s = T(1) / (T(1) + std::exp(-pz[i]));
        gx[i] += g * (s - ((*tgt)[size_t(i)] ? T(1) : T(0)));
      }
    });
  } else if (wants_grad(tape, {&logits})) {
    tape->track(y);
  }
  return y;
}

// Lovasz-softmax: mean over classes present in the (non-ignored) targets of
// the Jaccard-extension loss on sorted per-element errors. The gradient of
// the piecewise-linear extension w.r.t. the probabilities is assembled in
// the forward pass.
template <typename T>
Tensor<T> lovasz_softmax(Tape<T>* tape, const Tensor<T>& probs,
                         const std::vector<int32_t>& targets,
                         const std::vector<uint8_t>& ignore) {
  if (probs.rank() != 2) throw std::invalid_argument("lovasz_softmax: probs must be 2-D");
  const int64_t m = probs.dim(0), k = probs.dim(1);
  if (int64_t(targets.size()) != m || int64_t(ignore.size()) != m)
    throw std::invalid_argument("lovasz_softmax: target size mismatch");
  const T* pp = probs.ptr();

  std::vector<int64_t> rows;  // participating rows, in order
  rows.reserve(size_t(m));
  for (int64_t i = 0; i < m; ++i) {
    if (ignore[size_t(i)]) continue;
    T sum = T(0);
    for (int64_t j = 0; j < k; ++j) sum += pp[i * k + j];
    if (std::abs(double(sum) - 1.0) > 1e-4)
      throw std::invalid_argument("lovasz_softmax: probability rows must sum to 1");
    if (targets[size_t(i)] < 0 || targets[size_t(i)] >= k)
      throw std::invalid_argument("lovasz_softmax: target out of range");
    rows.push_back(i);
  }
  std::vector<uint8_t> present(size_t(k), 0);
  for (int64_t i : rows) present[size_t(targets[size_t(i)])] = 1;
  const int64_t num_present = std::accumulate(present.begin(), present.end(), int64_t(0));

  auto dprobs = std::make_shared<std::vector<T>>(size_t(m * k), T(0));
  double loss = 0.0;
  const int64_t n = int64_t(rows.size());
  std::vector<T> errors(static_cast<size_t>(n), T(0));
  std::vector<uint8_t> is_fg(static_cast<size_t>(n), 0);
  std::vector<int64_t> order(static_cast<size_t>(n), 0);
  for (int64_t c = 0; c < k; ++c) {
    if (!present[size_t(c)]) continue;
    int64_t fg_total = 0;
    for (int64_t r = 0; r < n; ++r) {
      const int64_t i = rows[size_t(r)];
      is_fg[size_t(r)] = targets[size_t(i)] == c;
      fg_total += is_fg[size_t(r)];
      errors[size_t(r)] =
          is_fg[size_t(r)] ? T(1) - pp[i * k + c] : pp[i * k + c];
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      return errors[size_t(a)] > errors[size_t(b)];
    });
    // g[i] = successive difference of 1 - intersection/union over the sorted
    // prefix; d(loss)/d(error_sorted[i]) = g[i]
    int64_t inter = fg_total, uni = fg_total;
    double prev_jacc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const int64_t r = order[size_t(i)];
      if (is_fg[size_t(r)]) --inter; else ++uni;
      const double jacc = 1.0 - (uni > 0 ? double(inter) / double(uni) : 0.0);
      const double gcoef = jacc - prev_jacc;
      prev_jacc = jacc;
      loss += double(errors[size_t(r)]) * gcoef;
      const int64_t row = rows[size_t(r)];
      (*dprobs)[size_t(row * k + c)] +=
          T(is_fg[size_t(r)] ? -gcoef : gcoef) / T(num_present);
    }
  }
  loss = num_present ? loss / double(num_present) : 0.0;

  Tensor<T> y = Tensor<T>::from({1}, {T(loss)});
  if (wants_grad(tape, {&probs})) {
    tape->track(y);
    if (num_present > 0) {
      tape->record({probs.node}, y.node, [probs, y, dprobs, m, k]() {
        if (!probs.grad) return;
        T* gx = probs.grad->data();
        const T g = (*y.grad)[0];
        for (int64_t i = 0; i < m * k; ++i) gx[i] += g * (*dprobs)[size_t(i)];
      });
    }
  }
  return y;
}

// Transposes (B, K, spatial...) into rows (B*spatial, K) so the per-voxel
// losses can treat channels as class columns.
template <typename T>
Tensor<T> channels_to_rows(Tape<T>* tape, const Tensor<T>& x) {
  if (x.rank() < 2) throw std::invalid_argument("channels_to_rows: rank must be >= 2");
  const int64_t b = x.dim(0), k = x.dim(1);
  int64_t sp = 1;
  for (int i = 2; i < x.rank(); ++i) sp *= x.dim(i);
  Tensor<T> y({int(b * sp), int(k)});
  const T* px = x.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) if (b * sp * k > 65536)
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t j = 0; j < k; ++j)
      for (int64_t s = 0; s < sp; ++s)
        py[(bi * sp + s) * k + j] = px[(bi * k + j) * sp + s];
  if (wants_grad(tape, {&x})) {
    tape->track(y);
    tape->record({x.node}, y.node, [x, y, b, k, sp]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T* gy = y.gptr();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < k; ++j)
          for (int64_t s = 0; s < sp; ++s)
            gx[(bi * k + j) * sp + s] += gy[(bi * sp + s) * k + j];
    });
  }
  return y;
}

// lovasz(softmax(logits)) + cross_entropy(logits) on the same row selection.
template <typename T>
Tensor<T> lovasz_ce(Tape<T>* tape, const Tensor<T>& logits,
                    const std::vector<int32_t>& targets,
                    const std::vector<uint8_t>& ignore) {
  Tensor<T> probs = softmax(tape, logits, 1);
  Tensor<T> lov = lovasz_softmax(tape, probs, targets, ignore);
  Tensor<T> ce = cross_entropy(tape, logits, targets, ignore);
  return add(tape, lov, ce);
}

// lovasz on the 2-class (empty/occupied) probabilities from a single logit
// plus the stabilized BCE.
template <typename T>
Tensor<T> lovasz_bce(Tape<T>* tape, const Tensor<T>& logits,
                     const std::vector<uint8_t>& targets,
                     const std::vector<uint8_t>& ignore) {
  const int64_t m = logits.numel();
  Tensor<T> flat = reshape(logits, {int(m), 1});
  Tensor<T> p_occ = sigmoid(tape, flat);
  Tensor<T> p_empty = affine(tape, p_occ, T(-1), T(1));
  Tensor<T> probs = concat(tape, {p_empty, p_occ}, 1);
  std::vector<int32_t> cls(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) cls[i] = targets[i] ? 1 : 0;
  Tensor<T> lov = lovasz_softmax(tape, probs, cls, ignore);
  Tensor<T> bce = bce_with_logits(tape, flat, targets, ignore);
  return add(tape, lov, bce);
}

// total = weight_bev * bev + sem + com, evaluated in tensor arithmetic so the
// gradient identity holds exactly.
template <typename T>
Tensor<T> total_loss(Tape<T>* tape, const Tensor<T>& bev, const Tensor<T>& sem,
                     const Tensor<T>& com, T weight_bev = T(3)) {
  return add(tape, scalar_mul(tape, bev, weight_bev), add(tape, sem, com));
}

}  // namespace ops
}  // namespace ssc
