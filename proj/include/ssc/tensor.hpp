#pragma once
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssc/rng.hpp"

namespace ssc {

// Dense row-major tensor. Copies are shallow (data and grad are shared), so
// tensors can be captured by backward closures cheaply. A tensor participates
// in autodiff once a Tape has assigned it a node id and a grad buffer.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // null until tracked
  int node = -1;

  Tensor() : data(std::make_shared<std::vector<T>>()) {}
  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)),
        data(std::make_shared<std::vector<T>>(size_t(shape_numel(shape)), T(0))) {}

  static int64_t shape_numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      // zero extents mark degenerate tensors (an empty sparse feature table)
      if (d < 0) throw std::invalid_argument("tensor dims must be non-negative");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T value) {
    Tensor t(std::move(s));
    for (auto& v : *t.data) v = value;
    return t;
  }

  static Tensor from(std::vector<int> s, std::vector<T> values) {
    Tensor t;
    t.shape = std::move(s);
    if (int64_t(values.size()) != shape_numel(t.shape))
      throw std::invalid_argument("tensor data length does not match shape");
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  int64_t numel() const { return int64_t(data->size()); }
  int dim(int i) const { return shape[size_t(i)]; }
  int rank() const { return int(shape.size()); }

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  T* gptr() { return grad->data(); }
  const T* gptr() const { return grad->data(); }

  bool tracked() const { return node >= 0; }

  T scalar() const {
    if (numel() != 1) throw std::invalid_argument("tensor is not a scalar");
    return (*data)[0];
  }

  // Deep copy of values; the copy starts untracked.
  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(*data);
    return t;
  }
};

// Metadata-only view: same buffers (and node), new shape.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> new_shape) {
  if (Tensor<T>::shape_numel(new_shape) != x.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor<T> y = x;
  y.shape = std::move(new_shape);
  return y;
}

// Reverse-mode tape: an ordered list of recorded steps, inputs preceding
// outputs. One tape per training step; it owns no tensor storage, only the
// backward closures.
template <typename T>
struct Tape {
  struct Step {
    std::vector<int> inputs;
    int output = -1;
    std::function<void()> backward;
  };

  std::vector<Step> steps;
  int num_nodes = 0;

  // Assigns a fresh node id and a zeroed grad buffer. Re-tracking a tensor
  // from an earlier tape resets its gradient.
  int track(Tensor<T>& t) {
    t.node = num_nodes++;
    if (!t.grad || int64_t(t.grad->size()) != t.numel())
      t.grad = std::make_shared<std::vector<T>>(size_t(t.numel()), T(0));
    else
      std::fill(t.grad->begin(), t.grad->end(), T(0));
    return t.node;
  }

  void record(std::vector<int> inputs, int output, std::function<void()> backward) {
    for (int in : inputs)
      if (in >= output)
        throw std::logic_error("tape: inputs must precede outputs");
    steps.push_back({std::move(inputs), output, std::move(backward)});
  }

  // Seeds d(loss)/d(loss) = 1 and runs every step's rule in reverse order;
  // nodes that do not reach the loss keep their zero gradient.
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    if (!loss.tracked() || !loss.grad)
      throw std::invalid_argument("backward: loss is not on the tape");
    (*loss.grad)[0] = T(1);
    for (auto it = steps.rbegin(); it != steps.rend(); ++it) it->backward();
  }
};

namespace ops {
// An op registers a backward rule only when a tape is active and some input
// already participates in it.
template <typename T>
inline bool wants_grad(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> ins) {
  if (!tape) return false;
  for (const Tensor<T>* t : ins)
    if (t->tracked()) return true;
  return false;
}
}  // namespace ops

// Named parameter table with deterministic (lexicographic) iteration order.
template <typename T>
struct ParamRegistry {
  std::map<std::string, Tensor<T>> params;

  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    auto [it, inserted] = params.emplace(name, std::move(t));
    if (!inserted) throw std::invalid_argument("duplicate parameter name: " + name);
    return it->second;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
  }

  void track_all(Tape<T>& tape) {
    for (auto& [name, t] : params) tape.track(t);
  }
};

// Centered uniform init with scale 1/sqrt(fan_in).
template <typename T>
void init_uniform_fan_in(Tensor<T>& t, int64_t fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(double(fan_in > 0 ? fan_in : 1));
  for (auto& v : *t.data) v = T(rng.uniform(-a, a));
}

template <typename T>
struct AdamConfig {
  T lr = T(0.001);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

template <typename T>
struct AdamState {
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
  int64_t step_count = 0;
};

// Standard Adam with bias correction; parameters whose gradient is zero stay
// put. Deterministic given the step count.
template <typename T>
void adam_step(ParamRegistry<T>& params, AdamState<T>& state,
               const AdamConfig<T>& cfg = {}) {
  state.step_count += 1;
  const double t = double(state.step_count);
  const T corr1 = T(1) - T(std::pow(double(cfg.beta1), t));
  const T corr2 = T(1) - T(std::pow(double(cfg.beta2), t));
  for (auto& [name, p] : params.params) {
    if (!p.grad) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(size_t(p.numel()), T(0));
    if (v.empty()) v.assign(size_t(p.numel()), T(0));
    T* w = p.ptr();
    const T* g = p.gptr();
    for (int64_t i = 0; i < p.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (T(1) - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (T(1) - cfg.beta2) * g[i] * g[i];
      const T mhat = m[i] / corr1;
      const T vhat = v[i] / corr2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace ssc
