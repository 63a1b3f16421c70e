// Timing comparison between the OpenMP kernels and the serial reference
// implementations, with a max-abs-difference cross check per case.
#include <chrono>
#include <cstdio>
#include <functional>

#include "ssc/network.hpp"
#include "ssc/ops_conv.hpp"
#include "ssc/ref_kernels.hpp"
#include "ssc/rng.hpp"
#include "ssc/scatter.hpp"
#include "ssc/sparse.hpp"

using ssc::Tensor;

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<float> rnd_vec(int64_t n, ssc::Rng& rng) {
  std::vector<float> v(static_cast<size_t>(n), 0.f);
  for (auto& x : v) x = float(rng.uniform(-1.0, 1.0));
  return v;
}

struct Row {
  const char* name;
  double serial_ms;
  double parallel_ms;
  double max_diff;
};

void print(const Row& r) {
  std::printf("%-22s serial %9.2f ms   parallel %9.2f ms   speedup %5.2fx   max|diff| %.3e\n",
              r.name, r.serial_ms, r.parallel_ms, r.serial_ms / r.parallel_ms, r.max_diff);
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
  return m;
}

template <typename F>
double time_best_of3(F&& f) {
  double best = 1e30;
  for (int i = 0; i < 3; ++i) {
    const double t0 = now_ms();
    f();
    best = std::min(best, now_ms() - t0);
  }
  return best;
}

}  // namespace

int main() {
  ssc::Rng rng(99);

  {
    const int b = 1, cin = 8, cout = 8, d = 24, k = 3;
    Tensor<float> x = Tensor<float>::from({b, cin, d, d, d}, rnd_vec(int64_t(b) * cin * d * d * d, rng));
    Tensor<float> w = Tensor<float>::from({cout, cin, k, k, k}, rnd_vec(int64_t(cout) * cin * k * k * k, rng));
    Tensor<float> bias = Tensor<float>::from({cout}, rnd_vec(cout, rng));
    std::vector<float> ref;
    Tensor<float> fast;
    const double ts = time_best_of3([&] {
      ref = ssc::ref::conv3d(*x.data, b, cin, d, d, d, *w.data, cout, k, *bias.data, 1, 1);
    });
    const double tp = time_best_of3([&] { fast = ssc::ops::conv3d<float>(nullptr, x, w, bias, 1, 1); });
    print({"conv3d 8x24^3 k3", ts, tp, max_abs_diff(ref, *fast.data)});
  }

  {
    const int b = 1, cin = 32, cout = 32, d = 128, k = 3;
    Tensor<float> x = Tensor<float>::from({b, cin, d, d}, rnd_vec(int64_t(b) * cin * d * d, rng));
    Tensor<float> w = Tensor<float>::from({cout, cin, k, k}, rnd_vec(int64_t(cout) * cin * k * k, rng));
    Tensor<float> bias = Tensor<float>::from({cout}, rnd_vec(cout, rng));
    std::vector<float> ref;
    Tensor<float> fast;
    const double ts = time_best_of3([&] {
      ref = ssc::ref::conv2d(*x.data, b, cin, d, d, *w.data, cout, k, *bias.data, 1, 1);
    });
    const double tp = time_best_of3([&] { fast = ssc::ops::conv2d<float>(nullptr, x, w, bias, 1, 1); });
    print({"conv2d 32x128^2 k3", ts, tp, max_abs_diff(ref, *fast.data)});
  }

  {
    const int64_t m = 400000, c = 16;
    std::vector<float> feats = rnd_vec(m * c, rng);
    std::vector<int64_t> keys(static_cast<size_t>(m), 0);
    for (auto& k : keys) k = rng.uniform_int(5000);
    std::vector<int64_t> uk;
    std::vector<float> red;
    ssc::ScatterResult<float> fast;
    const double ts = time_best_of3([&] {
      ssc::ref::scatter_reduce(feats, c, keys, ssc::ref::Reduce::kMax, &uk, &red);
    });
    const double tp =
        time_best_of3([&] { fast = ssc::scatter_reduce(feats.data(), m, c, keys, ssc::Reduce::kMax); });
    print({"scatter_max 400k x16", ts, tp, max_abs_diff(red, fast.reduced)});
  }

  {
    // submanifold conv vs densify + dense conv on a plane-like pattern
    const int cin = 16, cout = 16, size = 48;
    ssc::SparseVoxelTensor<float> x;
    x.spatial_shape = {size, size, size};
    x.batch_size = 1;
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j)
        x.coords.push_back({0, i, j, (i + j) % 8});
    std::sort(x.coords.begin(), x.coords.end());
    x.features = Tensor<float>::from({int(x.coords.size()), cin},
                                     rnd_vec(int64_t(x.coords.size()) * cin, rng));
    Tensor<float> w = Tensor<float>::from({cout, cin, 3, 3, 3}, rnd_vec(cout * cin * 27, rng));
    Tensor<float> bias = Tensor<float>::from({cout}, rnd_vec(cout, rng));

    Tensor<float> dense = ssc::ops::sparse_to_dense<float>(nullptr, x);
    std::vector<float> ref_dense;
    ssc::SparseVoxelTensor<float> fast;
    const double ts = time_best_of3([&] {
      ref_dense = ssc::ref::conv3d(*dense.data, 1, cin, size, size, size, *w.data, cout, 3,
                                   *bias.data, 1, 1);
    });
    const double tp =
        time_best_of3([&] { fast = ssc::ops::submanifold_conv3d<float>(nullptr, x, w, bias); });
    // compare at the active sites only
    double max_diff = 0;
    const int64_t sp = int64_t(size) * size * size;
    for (int64_t i = 0; i < fast.num_active(); ++i) {
      const auto& c = fast.coords[size_t(i)];
      const int64_t cell = (int64_t(c[1]) * size + c[2]) * size + c[3];
      for (int ch = 0; ch < cout; ++ch)
        max_diff = std::max(max_diff,
                            double(std::abs((*fast.features.data)[size_t(i * cout + ch)] -
                                            ref_dense[size_t(ch * sp + cell)])));
    }
    print({"submanifold 48^3 plane", ts, tp, max_diff});
  }

  {
    const int b = 2, c = 16, d = 32;
    Tensor<float> x = Tensor<float>::from({b, c, d, d, d}, rnd_vec(int64_t(b) * c * d * d * d, rng));
    std::vector<float> ref;
    Tensor<float> fast;
    const double ts = time_best_of3([&] { ref = ssc::ref::max_pool3d(*x.data, b, c, d, d, d); });
    const double tp = time_best_of3([&] { fast = ssc::ops::max_pool3d<float>(nullptr, x); });
    print({"max_pool3d 16x32^3", ts, tp, max_abs_diff(ref, *fast.data)});
  }

  return 0;
}
