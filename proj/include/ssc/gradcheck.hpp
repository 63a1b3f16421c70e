#pragma once
#include <functional>
#include <string>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

struct GradCheckCase {
  std::string name;
  double rel_err = 0.0;
  bool pass = false;
};

// Test-only reduction with a hand-verified backward rule; turns any tensor
// into a scalar objective for finite-difference probing.
template <typename T>
Tensor<T> weighted_sum(Tape<T>* tape, const Tensor<T>& x, const std::vector<T>& weights) {
  if (int64_t(weights.size()) != x.numel())
    throw std::invalid_argument("weighted_sum: weight size mismatch");
  T acc = T(0);
  const T* px = x.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) acc += weights[size_t(i)] * px[i];
  Tensor<T> y = Tensor<T>::from({1}, {acc});
  if (tape && x.tracked()) {
    tape->track(y);
    auto w = std::make_shared<std::vector<T>>(weights);
    tape->record({x.node}, y.node, [x, y, w]() {
      if (!x.grad) return;
      T* gx = x.grad->data();
      const T g = (*y.grad)[0];
      for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g * (*w)[size_t(i)];
    });
  }
  return y;
}

// Central finite differences at 64-bit against one reverse pass. `fn` must
// rebuild the forward graph from the current parameter values on every call
// (with a null tape for the probing evaluations). Checks every element, or a
// deterministic evenly-spaced subset when max_per_tensor > 0. Returns the
// infinity-norm relative error between the analytic and numeric gradients.
inline double gradcheck(const std::function<Tensor<double>(Tape<double>*)>& fn,
                        const std::vector<Tensor<double>*>& params,
                        double step = 1e-5, int max_per_tensor = 0) {
  Tape<double> tape;
  for (Tensor<double>* p : params) tape.track(*p);
  Tensor<double> loss = fn(&tape);
  tape.backward(loss);

  double max_diff = 0.0, max_mag = 0.0;
  for (Tensor<double>* p : params) {
    const std::vector<double> analytic = *p->grad;
    const int64_t n = p->numel();
    int64_t checks = max_per_tensor > 0 ? std::min<int64_t>(n, max_per_tensor) : n;
    for (int64_t j = 0; j < checks; ++j) {
      const int64_t i = checks == n ? j : j * n / checks;
      double* v = &(*p->data)[size_t(i)];
      const double saved = *v;
      *v = saved + step;
      const double lp = fn(nullptr).scalar();
      *v = saved - step;
      const double lm = fn(nullptr).scalar();
      *v = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      max_diff = std::max(max_diff, std::abs(analytic[size_t(i)] - numeric));
      max_mag = std::max({max_mag, std::abs(analytic[size_t(i)]), std::abs(numeric)});
    }
  }
  return max_diff / std::max(max_mag, 1e-8);
}

// One case per differentiable operation plus the end-to-end model.
std::vector<GradCheckCase> run_gradcheck_suite(double tolerance);

}  // namespace ssc
