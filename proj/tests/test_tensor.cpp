#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "ssc/gradcheck.hpp"
#include "ssc/losses.hpp"
#include "ssc/ops_basic.hpp"
#include "ssc/ops_conv.hpp"
#include "ssc/ref_kernels.hpp"
#include "ssc/rng.hpp"

using namespace ssc;

namespace {

Tensor<float> rnd(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<float> t(std::move(shape));
  for (auto& v : *t.data) v = float(rng.uniform(lo, hi));
  return t;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace

TEST_CASE("conv3d hand cases") {
  SUBCASE("all-ones 3x3x3 with a 3-cubed kernel of ones sums to 27") {
    Tensor<float> x = Tensor<float>::full({1, 1, 3, 3, 3}, 1.f);
    Tensor<float> w = Tensor<float>::full({1, 1, 3, 3, 3}, 1.f);
    Tensor<float> b = Tensor<float>::zeros({1});
    Tensor<float> y = ops::conv3d<float>(nullptr, x, w, b, 1, 0);
    CHECK(y.shape == std::vector<int>{1, 1, 1, 1, 1});
    CHECK(y.scalar() == doctest::Approx(27.f));
  }
  SUBCASE("identity kernel reproduces the input") {
    Rng rng(1);
    Tensor<float> x = rnd({1, 2, 4, 5, 6}, rng);
    Tensor<float> w = Tensor<float>::zeros({2, 2, 3, 3, 3});
    // center tap of the matching channel
    for (int c = 0; c < 2; ++c) (*w.data)[size_t((c * 2 + c) * 27 + 13)] = 1.f;
    Tensor<float> b = Tensor<float>::zeros({2});
    Tensor<float> y = ops::conv3d<float>(nullptr, x, w, b, 1, 1);
    CHECK(max_abs_diff(*y.data, *x.data) == 0.0);
  }
  SUBCASE("random case matches the naive six-loop oracle") {
    Rng rng(2);
    for (int stride : {1, 2}) {
      Tensor<float> x = rnd({2, 3, 5, 6, 7}, rng);
      Tensor<float> w = rnd({4, 3, 3, 3, 3}, rng);
      Tensor<float> b = rnd({4}, rng);
      Tensor<float> y = ops::conv3d<float>(nullptr, x, w, b, stride, 1);
      const auto oracle =
          ref::conv3d(*x.data, 2, 3, 5, 6, 7, *w.data, 4, 3, *b.data, stride, 1);
      CHECK(max_abs_diff(*y.data, oracle) <= 1e-6);
    }
  }
}

TEST_CASE("conv2d and transposed conv2d") {
  SUBCASE("1x1 kernel is a per-pixel linear map") {
    Rng rng(3);
    Tensor<float> x = rnd({1, 2, 3, 3}, rng);
    Tensor<float> w = rnd({3, 2, 1, 1}, rng);
    Tensor<float> b = rnd({3}, rng);
    Tensor<float> y = ops::conv2d<float>(nullptr, x, w, b, 1, 0);
    for (int i = 0; i < 9; ++i)
      for (int co = 0; co < 3; ++co) {
        float expect = (*b.data)[size_t(co)];
        for (int ci = 0; ci < 2; ++ci)
          expect += (*w.data)[size_t(co * 2 + ci)] * (*x.data)[size_t(ci * 9 + i)];
        CHECK((*y.data)[size_t(co * 9 + i)] == doctest::Approx(expect));
      }
  }
  SUBCASE("transposed stride-2 unit kernel scatters inputs to even sites") {
    Tensor<float> x = Tensor<float>::from({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor<float> w = Tensor<float>::zeros({1, 1, 2, 2});
    (*w.data)[0] = 1.f;  // only the (0,0) tap
    Tensor<float> b = Tensor<float>::zeros({1});
    Tensor<float> y = ops::conv2d_transposed<float>(nullptr, x, w, b, 2);
    CHECK(y.shape == std::vector<int>{1, 1, 4, 4});
    CHECK((*y.data)[0] == 1.f);
    CHECK((*y.data)[2] == 2.f);
    CHECK((*y.data)[8] == 3.f);
    CHECK((*y.data)[10] == 4.f);
    CHECK((*y.data)[1] == 0.f);
    CHECK((*y.data)[5] == 0.f);
  }
  SUBCASE("random cases match the naive oracles") {
    Rng rng(4);
    Tensor<float> x = rnd({2, 3, 6, 5}, rng);
    Tensor<float> w = rnd({4, 3, 3, 3}, rng);
    Tensor<float> b = rnd({4}, rng);
    for (int stride : {1, 2}) {
      Tensor<float> y = ops::conv2d<float>(nullptr, x, w, b, stride, 1);
      const auto oracle = ref::conv2d(*x.data, 2, 3, 6, 5, *w.data, 4, 3, *b.data, stride, 1);
      CHECK(max_abs_diff(*y.data, oracle) <= 1e-6);
    }
    Tensor<float> wt = rnd({3, 2, 2, 2}, rng);
    Tensor<float> bt = rnd({2}, rng);
    Tensor<float> yt = ops::conv2d_transposed<float>(nullptr, x, wt, bt, 2);
    const auto oracle_t =
        ref::conv2d_transposed(*x.data, 2, 3, 6, 5, *wt.data, 2, 2, *bt.data, 2);
    CHECK(max_abs_diff(*yt.data, oracle_t) <= 1e-6);
  }
}

TEST_CASE("convolution is linear in the input for zero bias") {
  Rng rng(5);
  Tensor<float> x1 = rnd({1, 2, 4, 4, 4}, rng);
  Tensor<float> x2 = rnd({1, 2, 4, 4, 4}, rng);
  Tensor<float> w = rnd({3, 2, 3, 3, 3}, rng);
  Tensor<float> b = Tensor<float>::zeros({3});
  const float a = 0.7f, c = -1.3f;
  Tensor<float> mix(x1.shape);
  for (int64_t i = 0; i < mix.numel(); ++i)
    (*mix.data)[size_t(i)] = a * (*x1.data)[size_t(i)] + c * (*x2.data)[size_t(i)];
  Tensor<float> y_mix = ops::conv3d<float>(nullptr, mix, w, b, 1, 1);
  Tensor<float> y1 = ops::conv3d<float>(nullptr, x1, w, b, 1, 1);
  Tensor<float> y2 = ops::conv3d<float>(nullptr, x2, w, b, 1, 1);
  for (int64_t i = 0; i < y_mix.numel(); ++i)
    CHECK((*y_mix.data)[size_t(i)] ==
          doctest::Approx(a * (*y1.data)[size_t(i)] + c * (*y2.data)[size_t(i)])
              .epsilon(1e-5));
}

TEST_CASE("max_pool3d") {
  SUBCASE("constant input stays constant") {
    Tensor<float> x = Tensor<float>::full({1, 1, 4, 4, 4}, 2.5f);
    Tensor<float> y = ops::max_pool3d<float>(nullptr, x);
    for (float v : *y.data) CHECK(v == 2.5f);
  }
  SUBCASE("a single spike survives") {
    Tensor<float> x = Tensor<float>::zeros({1, 1, 4, 4, 4});
    (*x.data)[21] = 9.f;
    Tensor<float> y = ops::max_pool3d<float>(nullptr, x);
    float best = -1;
    for (float v : *y.data) best = std::max(best, v);
    CHECK(best == 9.f);
  }
  SUBCASE("random input matches the window-loop oracle") {
    Rng rng(6);
    Tensor<float> x = rnd({2, 3, 6, 4, 8}, rng);
    Tensor<float> y = ops::max_pool3d<float>(nullptr, x);
    CHECK(max_abs_diff(*y.data, ref::max_pool3d(*x.data, 2, 3, 6, 4, 8)) == 0.0);
  }
}

TEST_CASE("activations and softmax") {
  CHECK(ops::relu<float>(nullptr, Tensor<float>::from({2}, {-3.f, 4.f})).data->at(0) == 0.f);
  CHECK(ops::relu<float>(nullptr, Tensor<float>::from({2}, {-3.f, 4.f})).data->at(1) == 4.f);

  Tensor<float> zeros = Tensor<float>::zeros({2, 5});
  Tensor<float> sm = ops::softmax<float>(nullptr, zeros, 1);
  for (float v : *sm.data) CHECK(v == doctest::Approx(0.2f));

  Rng rng(7);
  Tensor<float> x = rnd({6, 9}, rng, -4.0, 4.0);
  Tensor<float> s = ops::softmax<float>(nullptr, x, 1);
  Tensor<float> ls = ops::log_softmax<float>(nullptr, x, 1);
  for (int i = 0; i < 6; ++i) {
    float sum = 0;
    for (int j = 0; j < 9; ++j) sum += (*s.data)[size_t(i * 9 + j)];
    CHECK(sum == doctest::Approx(1.f).epsilon(1e-6));
  }
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK((*ls.data)[size_t(i)] ==
          doctest::Approx(std::log((*s.data)[size_t(i)])).epsilon(1e-5));

  Tensor<float> gap_in = Tensor<float>::full({2, 3, 4, 4}, 1.25f);
  Tensor<float> gap = ops::global_avg_pool2d<float>(nullptr, gap_in);
  for (float v : *gap.data) CHECK(v == doctest::Approx(1.25f));
}

TEST_CASE("channel_norm statistics") {
  SUBCASE("a constant channel normalizes to the shift") {
    Tensor<float> x = Tensor<float>::full({1, 2, 3, 5}, 4.f);
    Tensor<float> g = Tensor<float>::full({2}, 1.f);
    Tensor<float> s = Tensor<float>::from({2}, {0.25f, -1.f});
    Tensor<float> y = ops::channel_norm<float>(nullptr, x, g, s);
    for (int i = 0; i < 15; ++i) {
      CHECK((*y.data)[size_t(i)] == doctest::Approx(0.25f));
      CHECK((*y.data)[size_t(15 + i)] == doctest::Approx(-1.f));
    }
  }
  SUBCASE("output mean is the shift and std the gain") {
    Rng rng(8);
    Tensor<float> x = rnd({2, 3, 8, 8}, rng, -3.0, 3.0);
    Tensor<float> g = Tensor<float>::from({3}, {1.5f, -0.5f, 2.f});
    Tensor<float> s = Tensor<float>::from({3}, {0.1f, 0.9f, -0.4f});
    Tensor<float> y = ops::channel_norm<float>(nullptr, x, g, s);
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        for (int i = 0; i < 64; ++i) mean += (*y.data)[size_t((b * 3 + c) * 64 + i)];
        mean /= 64;
        for (int i = 0; i < 64; ++i) {
          const double d = (*y.data)[size_t((b * 3 + c) * 64 + i)] - mean;
          var += d * d;
        }
        var /= 64;
        CHECK(mean == doctest::Approx(double((*s.data)[size_t(c)])).epsilon(1e-4));
        CHECK(std::sqrt(var) ==
              doctest::Approx(std::abs(double((*g.data)[size_t(c)]))).epsilon(1e-3));
      }
  }
}

TEST_CASE("backward basics") {
  SUBCASE("loss = sum(w * x) gives dw = x") {
    Tape<double> tape;
    Tensor<double> w = Tensor<double>::from({4}, {1, 2, 3, 4});
    const std::vector<double> x{0.5, -1, 2, 7};
    tape.track(w);
    Tensor<double> loss = weighted_sum(&tape, w, x);
    tape.backward(loss);
    for (int i = 0; i < 4; ++i) CHECK((*w.grad)[size_t(i)] == x[size_t(i)]);
  }
  SUBCASE("a disconnected parameter keeps a zero gradient") {
    Tape<double> tape;
    Tensor<double> used = Tensor<double>::from({2}, {1, 2});
    Tensor<double> unused = Tensor<double>::from({2}, {3, 4});
    tape.track(used);
    tape.track(unused);
    Tensor<double> loss = weighted_sum(&tape, used, {1.0, 1.0});
    tape.backward(loss);
    CHECK((*unused.grad)[0] == 0.0);
    CHECK((*unused.grad)[1] == 0.0);
  }
  SUBCASE("a non-scalar loss is rejected") {
    Tape<double> tape;
    Tensor<double> x = Tensor<double>::from({2}, {1, 2});
    tape.track(x);
    Tensor<double> y = ops::relu(&tape, x);
    CHECK_THROWS(tape.backward(y));
  }
  SUBCASE("a composite graph passes finite differences") {
    Rng rng(9);
    Tensor<double> x(std::vector<int>{3, 4});
    Tensor<double> w(std::vector<int>{2, 4});
    Tensor<double> b(std::vector<int>{2});
    for (auto* t : {&x, &w, &b})
      for (auto& v : *t->data) v = rng.uniform(-1, 1);
    std::vector<double> mix;
    for (int i = 0; i < 6; ++i) mix.push_back(rng.uniform(-1, 1));
    const double err = gradcheck(
        [&](Tape<double>* t) {
          return weighted_sum(
              t, ops::sigmoid(t, ops::linear(t, ops::relu(t, x), w, b)), mix);
        },
        {&x, &w, &b});
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamRegistry<float> reg;
    reg.add("p", Tensor<float>::from({3}, {1.f, -2.f, 3.f}));
    Tape<float> tape;
    reg.track_all(tape);
    AdamState<float> state;
    adam_step(reg, state);
    CHECK(*reg.at("p").data == std::vector<float>{1.f, -2.f, 3.f});
  }
  SUBCASE("first step moves by about lr in the gradient sign direction") {
    ParamRegistry<double> reg;
    reg.add("p", Tensor<double>::from({2}, {0.0, 0.0}));
    Tape<double> tape;
    reg.track_all(tape);
    (*reg.at("p").grad)[0] = 0.37;  // arbitrary magnitudes
    (*reg.at("p").grad)[1] = -82.0;
    AdamState<double> state;
    AdamConfig<double> cfg;
    adam_step(reg, state, cfg);
    // bias-corrected first step: lr * g / (|g| + eps)
    CHECK((*reg.at("p").data)[0] == doctest::Approx(-cfg.lr).epsilon(1e-6));
    CHECK((*reg.at("p").data)[1] == doctest::Approx(cfg.lr).epsilon(1e-6));
  }
  SUBCASE("a quadratic bowl converges below 1e-6 within 2000 steps") {
    ParamRegistry<double> reg;
    reg.add("p", Tensor<double>::from({2}, {3.0, -2.0}));
    Tape<double> tape;
    reg.track_all(tape);
    AdamState<double> state;
    AdamConfig<double> cfg;
    cfg.lr = 0.01;
    Tensor<double>& p = reg.at("p");
    double value = 0;
    for (int step = 0; step < 2000; ++step) {
      value = 0.5 * ((*p.data)[0] * (*p.data)[0] + (*p.data)[1] * (*p.data)[1]);
      (*p.grad)[0] = (*p.data)[0];
      (*p.grad)[1] = (*p.data)[1];
      adam_step(reg, state, cfg);
    }
    CHECK(value < 1e-6);
  }
}

TEST_CASE("forward and backward are bit-deterministic") {
  auto run = [](std::vector<float>* grads) {
    Rng rng(10);
    Tensor<float> x(std::vector<int>{1, 3, 8, 8});
    Tensor<float> w(std::vector<int>{4, 3, 3, 3});
    Tensor<float> b(std::vector<int>{4});
    for (auto* t : {&x, &w, &b})
      for (auto& v : *t->data) v = float(rng.uniform(-1, 1));
    Tape<float> tape;
    tape.track(w);
    tape.track(b);
    Tensor<float> y = ops::conv2d(&tape, x, w, b, 1, 1);
    std::vector<float> weights(static_cast<size_t>(y.numel()), 0.f);
    for (auto& v : weights) v = float(rng.uniform(-1, 1));
    Tensor<float> loss = weighted_sum(&tape, y, weights);
    tape.backward(loss);
    *grads = *w.grad;
    return *y.data;
  };
  std::vector<float> g1, g2;
  const std::vector<float> y1 = run(&g1);
  const std::vector<float> y2 = run(&g2);
  CHECK(y1 == y2);
  CHECK(g1 == g2);
}

namespace {

// op with a deliberately wrong backward rule: y = 2x but the rule claims 3
template <typename T>
Tensor<T> corrupted_double(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) (*y.data)[size_t(i)] = T(2) * (*x.data)[size_t(i)];
  if (tape && x.tracked()) {
    tape->track(y);
    tape->record({x.node}, y.node, [x, y]() {
      if (!x.grad) return;
      for (int64_t i = 0; i < x.numel(); ++i)
        (*x.grad)[size_t(i)] += T(3) * (*y.grad)[size_t(i)];
    });
  }
  return y;
}

}  // namespace

TEST_CASE("gradcheck flags a corrupted backward rule") {
  Tensor<double> x = Tensor<double>::from({3}, {0.4, -0.7, 1.2});
  const double err = gradcheck(
      [&](Tape<double>* t) { return weighted_sum(t, corrupted_double(t, x), {1.0, 2.0, -1.0}); },
      {&x});
  CHECK(err > 1e-3);
}

TEST_CASE("gradient suite covers each op exactly once") {
  const auto results = run_gradcheck_suite(1e-5);
  std::set<std::string> names;
  for (const auto& r : results) CHECK(names.insert(r.name).second);
  for (const char* required :
       {"conv2d", "conv3d", "conv2d_transposed", "max_pool3d", "channel_norm", "linear",
        "relu", "sigmoid", "softmax", "log_softmax", "sparse_conv3d", "sparse_norm",
        "sgfe_downscale", "arf_fuse", "cross_entropy", "bce_with_logits", "lovasz_softmax",
        "semantic_loss", "completion_loss", "bev_loss", "total_loss", "full_model"})
    CHECK(names.count(required) == 1);
}

TEST_CASE("tensor shape and reshape contracts") {
  CHECK_THROWS(Tensor<float>::from({2, 3}, {1.f, 2.f}));
  Tensor<float> t = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<float> r = reshape(t, {3, 2});
  CHECK(r.data == t.data);
  CHECK_THROWS(reshape(t, {4, 2}));
  CHECK_THROWS(ops::conv2d<float>(nullptr, Tensor<float>::zeros({1, 1, 2, 2}),
                                  Tensor<float>::zeros({1, 1, 3, 3}),
                                  Tensor<float>::zeros({1}), 1, 0));
  CHECK_THROWS(ops::add<float>(nullptr, Tensor<float>::zeros({2}), Tensor<float>::zeros({3})));
  CHECK_THROWS(ops::linear<float>(nullptr, Tensor<float>::zeros({2, 3}),
                                  Tensor<float>::zeros({4, 5}), Tensor<float>::zeros({4})));
}
