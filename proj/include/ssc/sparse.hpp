#pragma once
#include <array>
#include <cstdint>
#include <unordered_map>

#include "ssc/ops_basic.hpp"
#include "ssc/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ssc {

// Set of active voxels with one feature row per coordinate. Coordinates are
// (batch, x, y, z), unique and sorted lexicographically, each within the
// dense spatial_shape.
template <typename T>
struct SparseVoxelTensor {
  std::vector<std::array<int32_t, 4>> coords;
  Tensor<T> features;  // M x C
  std::array<int, 3> spatial_shape{1, 1, 1};
  int batch_size = 1;

  int64_t num_active() const { return int64_t(coords.size()); }
  int channels() const { return features.rank() == 2 ? features.dim(1) : 0; }

  void validate() const {
    if (features.rank() != 2 || features.dim(0) != int(coords.size()))
      throw std::invalid_argument("sparse tensor: feature rows != coords");
    for (const auto& c : coords) {
      if (c[0] < 0 || c[0] >= batch_size) throw std::invalid_argument("sparse tensor: batch out of range");
      for (int k = 0; k < 3; ++k)
        if (c[k + 1] < 0 || c[k + 1] >= spatial_shape[size_t(k)])
          throw std::invalid_argument("sparse tensor: coord out of range");
    }
    for (size_t i = 1; i < coords.size(); ++i)
      if (!(coords[i - 1] < coords[i]))
        throw std::invalid_argument("sparse tensor: coords must be sorted and unique");
  }
};

inline int64_t coord_key(const std::array<int32_t, 4>& c,
                         const std::array<int, 3>& shape) {
  return ((int64_t(c[0]) * shape[0] + c[1]) * shape[1] + c[2]) * shape[2] + c[3];
}

inline std::array<int32_t, 4> key_to_coord(int64_t key, const std::array<int, 3>& shape) {
  const int64_t sp = int64_t(shape[0]) * shape[1] * shape[2];
  std::array<int32_t, 4> c;
  c[0] = int32_t(key / sp);
  int64_t r = key % sp;
  c[1] = int32_t(r / (int64_t(shape[1]) * shape[2]));
  r %= int64_t(shape[1]) * shape[2];
  c[2] = int32_t(r / shape[2]);
  c[3] = int32_t(r % shape[2]);
  return c;
}

enum class ConvMode { kSubmanifold, kStrided };

// Gather/scatter plan for sparse convolution. `pairs[o]` lists the
// (input_row, output_row) pairs for kernel offset o; on top of that two CSR
// indexes drive the deterministic per-row kernels. Submanifold offsets are
// centered (offset = tap - k/2, input = output + offset); strided offsets
// are the taps in [0, k)^3 probed at output*stride + tap.
struct Rulebook {
  int kernel_size = 3;
  ConvMode mode = ConvMode::kSubmanifold;
  std::vector<std::vector<std::pair<int32_t, int32_t>>> pairs;
  std::vector<std::array<int32_t, 4>> out_coords;
  std::array<int, 3> out_spatial_shape{1, 1, 1};

  // entries (offset, peer_row) grouped by output row / by input row
  std::vector<int64_t> out_offsets;
  std::vector<std::pair<int32_t, int32_t>> out_entries;  // (offset, input_row)
  std::vector<int64_t> in_offsets;
  std::vector<std::pair<int32_t, int32_t>> in_entries;  // (offset, output_row)

  int64_t pair_count() const {
    int64_t n = 0;
    for (const auto& p : pairs) n += int64_t(p.size());
    return n;
  }

  void build_csr(int64_t num_in, int64_t num_out) {
    std::vector<int64_t> out_count(size_t(num_out) + 1, 0), in_count(size_t(num_in) + 1, 0);
    for (const auto& list : pairs)
      for (const auto& [i, j] : list) {
        ++out_count[size_t(j) + 1];
        ++in_count[size_t(i) + 1];
      }
    for (int64_t r = 0; r < num_out; ++r) out_count[size_t(r) + 1] += out_count[size_t(r)];
    for (int64_t r = 0; r < num_in; ++r) in_count[size_t(r) + 1] += in_count[size_t(r)];
    out_offsets = out_count;
    in_offsets = in_count;
    out_entries.resize(size_t(pair_count()));
    in_entries.resize(size_t(pair_count()));
    std::vector<int64_t> oc = out_offsets, ic = in_offsets;
    for (int32_t o = 0; o < int32_t(pairs.size()); ++o)
      for (const auto& [i, j] : pairs[size_t(o)]) {
        out_entries[size_t(oc[size_t(j)]++)] = {o, i};
        in_entries[size_t(ic[size_t(i)]++)] = {o, j};
      }
  }
};

inline Rulebook build_rulebook(const std::vector<std::array<int32_t, 4>>& coords,
                               const std::array<int, 3>& spatial_shape,
                               int kernel_size, int stride, ConvMode mode) {
  Rulebook rb;
  rb.kernel_size = kernel_size;
  rb.mode = mode;
  const int64_t m = int64_t(coords.size());

  std::unordered_map<int64_t, int32_t> row_of;
  row_of.reserve(size_t(m) * 2);
  for (int64_t i = 0; i < m; ++i) row_of[coord_key(coords[size_t(i)], spatial_shape)] = int32_t(i);

  if (mode == ConvMode::kSubmanifold) {
    if (kernel_size % 2 == 0)
      throw std::invalid_argument("build_rulebook: submanifold kernel must be odd");
    const int r = kernel_size / 2;
    rb.out_coords = coords;
    rb.out_spatial_shape = spatial_shape;
    rb.pairs.assign(size_t(kernel_size) * kernel_size * kernel_size, {});
    for (int dx = -r; dx <= r; ++dx)
      for (int dy = -r; dy <= r; ++dy)
        for (int dz = -r; dz <= r; ++dz) {
          const size_t o = size_t(((dx + r) * kernel_size + dy + r) * kernel_size + dz + r);
          auto& list = rb.pairs[o];
          for (int64_t j = 0; j < m; ++j) {
            const auto& c = coords[size_t(j)];
            const std::array<int32_t, 4> q{c[0], c[1] + dx, c[2] + dy, c[3] + dz};
            if (q[1] < 0 || q[1] >= spatial_shape[0] || q[2] < 0 ||
                q[2] >= spatial_shape[1] || q[3] < 0 || q[3] >= spatial_shape[2])
              continue;
            auto it = row_of.find(coord_key(q, spatial_shape));
            if (it != row_of.end()) list.push_back({it->second, int32_t(j)});
          }
        }
  } else {
    if (stride < 1) throw std::invalid_argument("build_rulebook: bad stride");
    for (int k = 0; k < 3; ++k)
      rb.out_spatial_shape[size_t(k)] = (spatial_shape[size_t(k)] + stride - 1) / stride;
    std::vector<int64_t> down_keys(static_cast<size_t>(m), 0);
    for (int64_t i = 0; i < m; ++i) {
      const auto& c = coords[size_t(i)];
      down_keys[size_t(i)] = coord_key(
          {c[0], c[1] / stride, c[2] / stride, c[3] / stride}, rb.out_spatial_shape);
    }
    const KeyGroups groups = group_by_keys(down_keys);
    rb.out_coords.reserve(size_t(groups.num_groups()));
    for (int64_t key : groups.unique_keys)
      rb.out_coords.push_back(key_to_coord(key, rb.out_spatial_shape));
    rb.pairs.assign(size_t(kernel_size) * kernel_size * kernel_size, {});
    for (int t0 = 0; t0 < kernel_size; ++t0)
      for (int t1 = 0; t1 < kernel_size; ++t1)
        for (int t2 = 0; t2 < kernel_size; ++t2) {
          auto& list = rb.pairs[size_t((t0 * kernel_size + t1) * kernel_size + t2)];
          for (int64_t j = 0; j < int64_t(rb.out_coords.size()); ++j) {
            const auto& oc = rb.out_coords[size_t(j)];
            const std::array<int32_t, 4> q{oc[0], oc[1] * stride + t0,
                                           oc[2] * stride + t1, oc[3] * stride + t2};
            if (q[1] >= spatial_shape[0] || q[2] >= spatial_shape[1] ||
                q[3] >= spatial_shape[2])
              continue;
            auto it = row_of.find(coord_key(q, spatial_shape));
            if (it != row_of.end()) list.push_back({it->second, int32_t(j)});
          }
        }
  }
  rb.build_csr(m, int64_t(rb.out_coords.size()));
  return rb;
}

namespace ops {

// out[j] = bias + sum over rulebook pairs of weight[offset] x[i].
// weight: (Cout, Cin, k, k, k). Submanifold rulebooks keep the active set.
template <typename T>
SparseVoxelTensor<T> sparse_conv3d(Tape<T>* tape, const SparseVoxelTensor<T>& x,
                                   const Tensor<T>& w, const Tensor<T>& b,
                                   const std::shared_ptr<Rulebook>& rb) {
  if (w.rank() != 5) throw std::invalid_argument("sparse_conv3d: weight rank must be 5");
  const int64_t cout = w.dim(0), cin = w.dim(1);
  const int k = w.dim(2);
  const int64_t kv = int64_t(k) * k * k;
  if (cin != x.channels() || b.numel() != cout || k != rb->kernel_size)
    throw std::invalid_argument("sparse_conv3d: channel mismatch");
  const int64_t m_in = x.num_active();
  const int64_t m_out = int64_t(rb->out_coords.size());

  // offset-major weight copy, contiguous in cout for the inner loops
  auto wt = std::make_shared<std::vector<T>>(size_t(kv * cin * cout));
  {
    const T* pw = w.ptr();
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t ci = 0; ci < cin; ++ci)
        for (int64_t o = 0; o < kv; ++o)
          (*wt)[(o * cin + ci) * cout + co] = pw[(co * cin + ci) * kv + o];
  }

  SparseVoxelTensor<T> y;
  y.coords = rb->out_coords;
  y.spatial_shape = rb->out_spatial_shape;
  y.batch_size = x.batch_size;
  y.features = Tensor<T>({int(m_out), int(cout)});

  const T* px = x.features.ptr();
  const T* pb = b.ptr();
  T* py = y.features.ptr();
#pragma omp parallel for schedule(static) if (m_out > 256)
  for (int64_t j = 0; j < m_out; ++j) {
    T* out = py + j * cout;
    for (int64_t co = 0; co < cout; ++co) out[co] = pb[co];
    for (int64_t e = rb->out_offsets[size_t(j)]; e < rb->out_offsets[size_t(j) + 1]; ++e) {
      const auto [o, i] = rb->out_entries[size_t(e)];
      const T* xr = px + int64_t(i) * cin;
      const T* wo = wt->data() + int64_t(o) * cin * cout;
      for (int64_t ci = 0; ci < cin; ++ci) {
        const T xv = xr[ci];
        if (xv == T(0)) continue;
        const T* wr = wo + ci * cout;
        for (int64_t co = 0; co < cout; ++co) out[co] += xv * wr[co];
      }
    }
  }

  if (wants_grad(tape, {&x.features, &w, &b})) {
    tape->track(y.features);
    const Tensor<T> xf = x.features;
    const Tensor<T> yf = y.features;
    tape->record({x.features.node, w.node, b.node}, y.features.node,
                 [xf, w, b, yf, rb, wt, m_in, m_out, cin, cout, kv]() {
      const T* gy = yf.gptr();
      const T* px = xf.ptr();
      if (xf.grad) {
        T* gx = xf.grad->data();
#pragma omp parallel for schedule(static) if (m_in > 256)
        for (int64_t i = 0; i < m_in; ++i) {
          T* gin = gx + i * cin;
          for (int64_t e = rb->in_offsets[size_t(i)]; e < rb->in_offsets[size_t(i) + 1]; ++e) {
            const auto [o, j] = rb->in_entries[size_t(e)];
            const T* gout = gy + int64_t(j) * cout;
            const T* wo = wt->data() + int64_t(o) * cin * cout;
            for (int64_t ci = 0; ci < cin; ++ci) {
              T acc = T(0);
              const T* wr = wo + ci * cout;
              for (int64_t co = 0; co < cout; ++co) acc += wr[co] * gout[co];
              gin[ci] += acc;
            }
          }
        }
      }
      if (w.grad) {
        T* gw = w.grad->data();
#pragma omp parallel for schedule(static) if (kv > 1)
        for (int64_t o = 0; o < kv; ++o) {
          std::vector<T> local(size_t(cin * cout), T(0));
          for (const auto& [i, j] : rb->pairs[size_t(o)]) {
            const T* xr = px + int64_t(i) * cin;
            const T* gout = gy + int64_t(j) * cout;
            for (int64_t ci = 0; ci < cin; ++ci) {
              const T xv = xr[ci];
              if (xv == T(0)) continue;
              T* dst = local.data() + ci * cout;
              for (int64_t co = 0; co < cout; ++co) dst[co] += xv * gout[co];
            }
          }
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t co = 0; co < cout; ++co)
              gw[(co * cin + ci) * kv + o] += local[size_t(ci * cout + co)];
        }
      }
      if (b.grad) {
        T* gb = b.grad->data();
        for (int64_t co = 0; co < cout; ++co) {
          T acc = T(0);
          for (int64_t j = 0; j < m_out; ++j) acc += gy[j * cout + co];
          gb[co] += acc;
        }
      }
    });
  }
  return y;
}

template <typename T>
SparseVoxelTensor<T> submanifold_conv3d(Tape<T>* tape, const SparseVoxelTensor<T>& x,
                                        const Tensor<T>& w, const Tensor<T>& b) {
  auto rb = std::make_shared<Rulebook>(build_rulebook(
      x.coords, x.spatial_shape, w.dim(2), 1, ConvMode::kSubmanifold));
  return sparse_conv3d(tape, x, w, b, rb);
}

// Per (batch sample, channel) normalization over the sample's active rows,
// then per-channel affine. Mirrors channel_norm for sparse features.
template <typename T>
Tensor<T> sparse_norm(Tape<T>* tape, const Tensor<T>& feats,
                      const std::vector<std::array<int32_t, 4>>& coords,
                      int batch_size, const Tensor<T>& gain, const Tensor<T>& shift) {
  if (feats.rank() != 2) throw std::invalid_argument("sparse_norm: rank must be 2");
  const int64_t m = feats.dim(0), c = feats.dim(1);
  if (gain.numel() != c || shift.numel() != c)
    throw std::invalid_argument("sparse_norm: gain/shift size mismatch");
  constexpr T kEps = T(1e-5);

  // coords are sorted with batch leading, so samples are contiguous row runs
  auto ranges = std::make_shared<std::vector<std::pair<int64_t, int64_t>>>();
  {
    int64_t start = 0;
    for (int64_t i = 1; i <= m; ++i)
      if (i == m || coords[size_t(i)][0] != coords[size_t(start)][0]) {
        ranges->push_back({start, i});
        start = i;
      }
    (void)batch_size;
  }

  Tensor<T> y(feats.shape);
  auto mean = std::make_shared<std::vector<T>>(size_t(ranges->size() * c));
  auto inv_std = std::make_shared<std::vector<T>>(size_t(ranges->size() * c));
  const T* px = feats.ptr();
  const T* pg = gain.ptr();
  const T* ps = shift.ptr();
  T* py = y.ptr();
  for (size_t s = 0; s < ranges->size(); ++s) {
    const auto [lo, hi] = (*ranges)[s];
    const T n = T(hi - lo);
    for (int64_t ch = 0; ch < c; ++ch) {
      T mu = T(0);
      for (int64_t i = lo; i < hi; ++i) mu += px[i * c + ch];
      mu /= n;
      T var = T(0);
      for (int64_t i = lo; i < hi; ++i) {
        const T d = px[i * c + ch] - mu;
        var += d * d;
      }
      var /= n;
      const T istd = T(1) / std::sqrt(var + kEps);
      (*mean)[s * c + ch] = mu;
      (*inv_std)[s * c + ch] = istd;
      for (int64_t i = lo; i < hi; ++i)
        py[i * c + ch] = pg[ch] * (px[i * c + ch] - mu) * istd + ps[ch];
    }
  }

  if (wants_grad(tape, {&feats, &gain, &shift})) {
    tape->track(y);
    tape->record({feats.node, gain.node, shift.node}, y.node,
                 [feats, gain, shift, y, mean, inv_std, ranges, c]() {
      const T* gy = y.gptr();
      const T* px = feats.ptr();
      const T* pg = gain.ptr();
      for (size_t s = 0; s < ranges->size(); ++s) {
        const auto [lo, hi] = (*ranges)[s];
        const T n = T(hi - lo);
        for (int64_t ch = 0; ch < c; ++ch) {
          const T mu = (*mean)[s * c + ch];
          const T istd = (*inv_std)[s * c + ch];
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int64_t i = lo; i < hi; ++i) {
            const T xhat = (px[i * c + ch] - mu) * istd;
            sum_dy += gy[i * c + ch];
            sum_dy_xhat += gy[i * c + ch] * xhat;
          }
          if (feats.grad) {
            T* gx = feats.grad->data();
            for (int64_t i = lo; i < hi; ++i) {
              const T xhat = (px[i * c + ch] - mu) * istd;
              gx[i * c + ch] += pg[ch] * istd / n *
                                (n * gy[i * c + ch] - sum_dy - xhat * sum_dy_xhat);
            }
          }
          if (gain.grad) (*gain.grad)[ch] += sum_dy_xhat;
          if (shift.grad) (*shift.grad)[ch] += sum_dy;
        }
      }
    });
  }
  return y;
}

// Active sites written into a dense (B, C, L, W, H) volume, zeros elsewhere.
template <typename T>
Tensor<T> sparse_to_dense(Tape<T>* tape, const SparseVoxelTensor<T>& x) {
  const int64_t m = x.num_active(), c = x.channels();
  const auto& sh = x.spatial_shape;
  const int64_t sp = int64_t(sh[0]) * sh[1] * sh[2];
  Tensor<T> y({x.batch_size, int(c), sh[0], sh[1], sh[2]});
  const T* px = x.features.ptr();
  T* py = y.ptr();
  for (int64_t i = 0; i < m; ++i) {
    const auto& co = x.coords[size_t(i)];
    const int64_t cell = (int64_t(co[1]) * sh[1] + co[2]) * sh[2] + co[3];
    for (int64_t ch = 0; ch < c; ++ch)
      py[(int64_t(co[0]) * c + ch) * sp + cell] = px[i * c + ch];
  }
  if (wants_grad(tape, {&x.features})) {
    tape->track(y);
    const Tensor<T> xf = x.features;
    auto coords = std::make_shared<std::vector<std::array<int32_t, 4>>>(x.coords);
    tape->record({x.features.node}, y.node, [xf, y, coords, sh, m, c, sp]() {
      if (!xf.grad) return;
      T* gx = xf.grad->data();
      const T* gy = y.gptr();
      for (int64_t i = 0; i < m; ++i) {
        const auto& co = (*coords)[size_t(i)];
        const int64_t cell = (int64_t(co[1]) * sh[1] + co[2]) * sh[2] + co[3];
        for (int64_t ch = 0; ch < c; ++ch)
          gx[i * c + ch] += gy[(int64_t(co[0]) * c + ch) * sp + cell];
      }
    });
  }
  return y;
}

// Writes per-column rows (keyed (b*L + x)*W + y) into a dense (B, C, L, W)
// map; backward gathers per row, so no write races.
template <typename T>
Tensor<T> densify_bev(Tape<T>* tape, const Tensor<T>& rows,
                      const std::vector<int64_t>& column_keys, int batch_size,
                      int l, int w) {
  if (rows.rank() != 2 || int64_t(column_keys.size()) != rows.dim(0))
    throw std::invalid_argument("densify_bev: shape mismatch");
  const int64_t g = rows.dim(0), c = rows.dim(1);
  Tensor<T> y({batch_size, int(c), l, w});
  const int64_t sp = int64_t(l) * w;
  const T* pr = rows.ptr();
  T* py = y.ptr();
  for (int64_t i = 0; i < g; ++i) {
    const int64_t b = column_keys[size_t(i)] / sp;
    const int64_t cell = column_keys[size_t(i)] % sp;
    for (int64_t ch = 0; ch < c; ++ch) py[(b * c + ch) * sp + cell] = pr[i * c + ch];
  }
  if (wants_grad(tape, {&rows})) {
    tape->track(y);
    auto keys = std::make_shared<std::vector<int64_t>>(column_keys);
    tape->record({rows.node}, y.node, [rows, y, keys, g, c, sp]() {
      if (!rows.grad) return;
      T* gr = rows.grad->data();
      const T* gy = y.gptr();
      for (int64_t i = 0; i < g; ++i) {
        const int64_t b = (*keys)[size_t(i)] / sp;
        const int64_t cell = (*keys)[size_t(i)] % sp;
        for (int64_t ch = 0; ch < c; ++ch) gr[i * c + ch] += gy[(b * c + ch) * sp + cell];
      }
    });
  }
  return y;
}

}  // namespace ops

// Sparse residual unit: y = relu(skip(x) + conv2(norm2(relu(conv1(norm1(x))))))
// with two k=3 submanifold convolutions sharing one rulebook; the skip is a
// 1x1 map when the width changes, identity otherwise. Parameters live in a
// ParamRegistry; the block keeps pointers.
template <typename T>
struct SparseResidualBlock {
  int cin = 0, cout = 0;
  Tensor<T>* n1_gain = nullptr;
  Tensor<T>* n1_shift = nullptr;
  Tensor<T>* w1 = nullptr;
  Tensor<T>* b1 = nullptr;
  Tensor<T>* n2_gain = nullptr;
  Tensor<T>* n2_shift = nullptr;
  Tensor<T>* w2 = nullptr;
  Tensor<T>* b2 = nullptr;
  Tensor<T>* w_skip = nullptr;  // (cout, cin) when cin != cout
  Tensor<T>* b_skip = nullptr;

  void init(ParamRegistry<T>& reg, const std::string& prefix, int cin_, int cout_,
            Rng& rng) {
    cin = cin_;
    cout = cout_;
    n1_gain = &reg.add(prefix + ".norm1.gain", Tensor<T>::full({cin}, T(1)));
    n1_shift = &reg.add(prefix + ".norm1.shift", Tensor<T>::zeros({cin}));
    Tensor<T> w1t({cout, cin, 3, 3, 3});
    init_uniform_fan_in(w1t, int64_t(cin) * 27, rng);
    w1 = &reg.add(prefix + ".conv1.weight", std::move(w1t));
    b1 = &reg.add(prefix + ".conv1.bias", Tensor<T>::zeros({cout}));
    n2_gain = &reg.add(prefix + ".norm2.gain", Tensor<T>::full({cout}, T(1)));
    n2_shift = &reg.add(prefix + ".norm2.shift", Tensor<T>::zeros({cout}));
    Tensor<T> w2t({cout, cout, 3, 3, 3});
    init_uniform_fan_in(w2t, int64_t(cout) * 27, rng);
    w2 = &reg.add(prefix + ".conv2.weight", std::move(w2t));
    b2 = &reg.add(prefix + ".conv2.bias", Tensor<T>::zeros({cout}));
    if (cin != cout) {
      Tensor<T> ws({cout, cin});
      init_uniform_fan_in(ws, cin, rng);
      w_skip = &reg.add(prefix + ".skip.weight", std::move(ws));
      b_skip = &reg.add(prefix + ".skip.bias", Tensor<T>::zeros({cout}));
    }
  }

  SparseVoxelTensor<T> forward(Tape<T>* tape, const SparseVoxelTensor<T>& x) const {
    auto rb = std::make_shared<Rulebook>(
        build_rulebook(x.coords, x.spatial_shape, 3, 1, ConvMode::kSubmanifold));
    SparseVoxelTensor<T> h = x;
    h.features = ops::sparse_norm(tape, x.features, x.coords, x.batch_size, *n1_gain, *n1_shift);
    h = ops::sparse_conv3d(tape, h, *w1, *b1, rb);
    h.features = ops::relu(tape, h.features);
    h.features = ops::sparse_norm(tape, h.features, h.coords, h.batch_size, *n2_gain, *n2_shift);
    h = ops::sparse_conv3d(tape, h, *w2, *b2, rb);
    Tensor<T> skip = w_skip ? ops::linear(tape, x.features, *w_skip, *b_skip) : x.features;
    h.features = ops::relu(tape, ops::add(tape, skip, h.features));
    return h;
  }
};

// Simplified geometry-guided downscale: three scatter-mean pooling scales
// (1, 2, 4), per-scale linear branches, a shared per-voxel scoring head whose
// softmax over the scales gates the branch sum added back to the input, then
// a factor-2 scatter-max downsample.
template <typename T>
struct SgfeBlock {
  static constexpr int kScales[3] = {1, 2, 4};
  int channels = 0;
  Tensor<T>* branch_w[3] = {nullptr, nullptr, nullptr};
  Tensor<T>* branch_b[3] = {nullptr, nullptr, nullptr};
  Tensor<T>* score_w = nullptr;
  Tensor<T>* score_b = nullptr;

  void init(ParamRegistry<T>& reg, const std::string& prefix, int channels_, Rng& rng) {
    channels = channels_;
    for (int s = 0; s < 3; ++s) {
      Tensor<T> w({channels, channels});
      init_uniform_fan_in(w, channels, rng);
      branch_w[s] = &reg.add(prefix + ".scale" + std::to_string(kScales[s]) + ".weight",
                             std::move(w));
      branch_b[s] = &reg.add(prefix + ".scale" + std::to_string(kScales[s]) + ".bias",
                             Tensor<T>::zeros({channels}));
    }
    Tensor<T> sw({1, channels});
    init_uniform_fan_in(sw, channels, rng);
    score_w = &reg.add(prefix + ".score.weight", std::move(sw));
    score_b = &reg.add(prefix + ".score.bias", Tensor<T>::zeros({1}));
  }

  SparseVoxelTensor<T> forward(Tape<T>* tape, const SparseVoxelTensor<T>& x) const {
    for (int k = 0; k < 3; ++k)
      if (x.spatial_shape[size_t(k)] % 2 != 0)
        throw std::invalid_argument("sgfe_downscale: spatial shape must be even");
    const int64_t m = x.num_active();

    Tensor<T> branches[3];
    Tensor<T> scores[3];
    for (int s = 0; s < 3; ++s) {
      const int r = kScales[s];
      std::array<int, 3> pooled_shape{(x.spatial_shape[0] + r - 1) / r,
                                      (x.spatial_shape[1] + r - 1) / r,
                                      (x.spatial_shape[2] + r - 1) / r};
      std::vector<int64_t> keys(static_cast<size_t>(m), 0);
      for (int64_t i = 0; i < m; ++i) {
        const auto& c = x.coords[size_t(i)];
        keys[size_t(i)] =
            coord_key({c[0], c[1] / r, c[2] / r, c[3] / r}, pooled_shape);
      }
      const KeyGroups groups = group_by_keys(keys);
      Tensor<T> pooled = ops::scatter_rows(tape, x.features, groups, Reduce::kMean);
      Tensor<T> gathered = ops::gather_rows(tape, pooled, groups.group_of_row);
      branches[s] = ops::linear(tape, gathered, *branch_w[s], *branch_b[s]);
      scores[s] = ops::linear(tape, branches[s], *score_w, *score_b);
    }
    Tensor<T> attn = ops::softmax(
        tape, ops::concat(tape, {scores[0], scores[1], scores[2]}, 1), 1);
    Tensor<T> enhanced = x.features;
    for (int s = 0; s < 3; ++s) {
      Tensor<T> weighted =
          ops::row_scale(tape, branches[s], ops::slice_cols(tape, attn, s, 1));
      enhanced = ops::add(tape, enhanced, weighted);
    }

    SparseVoxelTensor<T> out;
    out.batch_size = x.batch_size;
    out.spatial_shape = {x.spatial_shape[0] / 2, x.spatial_shape[1] / 2,
                         x.spatial_shape[2] / 2};
    std::vector<int64_t> keys(static_cast<size_t>(m), 0);
    for (int64_t i = 0; i < m; ++i) {
      const auto& c = x.coords[size_t(i)];
      keys[size_t(i)] =
          coord_key({c[0], c[1] / 2, c[2] / 2, c[3] / 2}, out.spatial_shape);
    }
    const KeyGroups groups = group_by_keys(keys);
    out.features = ops::scatter_rows(tape, enhanced, groups, Reduce::kMax);
    out.coords.reserve(size_t(groups.num_groups()));
    for (int64_t key : groups.unique_keys)
      out.coords.push_back(key_to_coord(key, out.spatial_shape));
    return out;
  }
};

}  // namespace ssc
