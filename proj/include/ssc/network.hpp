#pragma once
#include <string>

#include "ssc/geometry.hpp"
#include "ssc/ops_basic.hpp"
#include "ssc/ops_conv.hpp"
#include "ssc/sparse.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

// Grid, class count and channel plan. The desk-scale defaults keep a single
// CPU training run in the minutes range; all widths are configurable up to
// the full 256x256x32 grid.
struct ModelConfig {
  int num_classes = 19;  // semantic classes; voxel targets also include empty
  VoxelGridSpec grid{{0.0, -6.4, -0.8}, 0.2, {64, 64, 8}};
  int voxel_feature_width = 16;                  // C_V
  std::array<int, 3> sem_widths{32, 48, 64};     // S1..S3
  std::array<int, 4> com_widths{8, 16, 24, 32};  // G0..G3
  std::array<int, 4> bev_widths{32, 48, 64, 80};  // C_0..C_3
  std::array<int, 3> decoder_widths{64, 48, 32};
  int arf_reduction = 4;
  bool use_semantic_branch = true;
  uint64_t init_seed = 1;

  void validate() const {
    grid.validate();
    for (int k = 0; k < 3; ++k)
      if (grid.dims[size_t(k)] % 8 != 0)
        throw std::invalid_argument("model grid dims must be divisible by 8");
    if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
    for (int c : bev_widths)
      if (c % arf_reduction != 0)
        throw std::invalid_argument("bev widths must be divisible by arf_reduction");
  }
};

// One scene per batch slot: raw points plus the dense occupancy of the
// observed voxels.
struct ModelInput {
  std::vector<PointCloud> points;
  std::vector<BoolGrid> occupancy;

  size_t batch() const { return occupancy.size(); }
};

template <typename T>
struct ForwardOutput {
  Tensor<T> ssc_logits;  // (B, C_n+1, H, L, W)
  std::array<SparseVoxelTensor<T>, 3> sem_aux;  // C_n logits at 1/2, 1/4, 1/8
  std::array<Tensor<T>, 3> com_aux;             // (B, 1, H_i, L_i, W_i)
  bool has_aux = false;
  bool has_sem = true;
};

// Scatter-max of sparse features over (batch, x, y) columns, densified to a
// (B, C, L, W) map; empty columns stay zero.
template <typename T>
Tensor<T> bev_project_sparse(Tape<T>* tape, const SparseVoxelTensor<T>& x) {
  const int l = x.spatial_shape[0], w = x.spatial_shape[1];
  std::vector<int64_t> keys(size_t(x.num_active()));
  for (int64_t i = 0; i < x.num_active(); ++i) {
    const auto& c = x.coords[size_t(i)];
    keys[size_t(i)] = (int64_t(c[0]) * l + c[1]) * w + c[2];
  }
  const KeyGroups groups = group_by_keys(keys);
  Tensor<T> pooled = ops::scatter_rows(tape, x.features, groups, Reduce::kMax);
  return ops::densify_bev(tape, pooled, groups.unique_keys, x.batch_size, l, w);
}

// Stacks the vertical axis into channels ((B,C,D,H,W) -> (B,C*D,H,W)) and
// reduces to the target width with a 1x1 convolution.
template <typename T>
Tensor<T> bev_project_dense(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                            const Tensor<T>& b) {
  if (x.rank() != 5) throw std::invalid_argument("bev_project_dense: rank must be 5");
  Tensor<T> stacked = reshape(x, {x.dim(0), x.dim(1) * x.dim(2), x.dim(3), x.dim(4)});
  return ops::conv2d(tape, stacked, w, b, 1, 0);
}

// 3D residual unit with 3^3 convolutions, unit stride; 1x1x1 skip when the
// width changes.
template <typename T>
struct DenseResidualBlock3d {
  int cin = 0, cout = 0;
  Tensor<T>*n1_gain{}, *n1_shift{}, *w1{}, *b1{}, *n2_gain{}, *n2_shift{}, *w2{}, *b2{};
  Tensor<T>*w_skip{}, *b_skip{};

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
      Tensor<T> ws({cout, cin, 1, 1, 1});
      init_uniform_fan_in(ws, cin, rng);
      w_skip = &reg.add(prefix + ".skip.weight", std::move(ws));
      b_skip = &reg.add(prefix + ".skip.bias", Tensor<T>::zeros({cout}));
    }
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    Tensor<T> h = ops::channel_norm(tape, x, *n1_gain, *n1_shift);
    h = ops::conv3d(tape, h, *w1, *b1, 1, 1);
    h = ops::relu(tape, h);
    h = ops::channel_norm(tape, h, *n2_gain, *n2_shift);
    h = ops::conv3d(tape, h, *w2, *b2, 1, 1);
    Tensor<T> skip = w_skip ? ops::conv3d(tape, x, *w_skip, *b_skip, 1, 0) : x;
    return ops::relu(tape, ops::add(tape, skip, h));
  }
};

// 2D residual unit; the first convolution carries the stride, the skip is a
// strided 1x1 whenever stride or width changes.
template <typename T>
struct ResidualBlock2d {
  int cin = 0, cout = 0, stride = 1;
  Tensor<T>*n1_gain{}, *n1_shift{}, *w1{}, *b1{}, *n2_gain{}, *n2_shift{}, *w2{}, *b2{};
  Tensor<T>*w_skip{}, *b_skip{};

  void init(ParamRegistry<T>& reg, const std::string& prefix, int cin_, int cout_,
            int stride_, Rng& rng) {
    cin = cin_;
    cout = cout_;
    stride = stride_;
    n1_gain = &reg.add(prefix + ".norm1.gain", Tensor<T>::full({cin}, T(1)));
    n1_shift = &reg.add(prefix + ".norm1.shift", Tensor<T>::zeros({cin}));
    Tensor<T> w1t({cout, cin, 3, 3});
    init_uniform_fan_in(w1t, int64_t(cin) * 9, rng);
    w1 = &reg.add(prefix + ".conv1.weight", std::move(w1t));
    b1 = &reg.add(prefix + ".conv1.bias", Tensor<T>::zeros({cout}));
    n2_gain = &reg.add(prefix + ".norm2.gain", Tensor<T>::full({cout}, T(1)));
    n2_shift = &reg.add(prefix + ".norm2.shift", Tensor<T>::zeros({cout}));
    Tensor<T> w2t({cout, cout, 3, 3});
    init_uniform_fan_in(w2t, int64_t(cout) * 9, rng);
    w2 = &reg.add(prefix + ".conv2.weight", std::move(w2t));
    b2 = &reg.add(prefix + ".conv2.bias", Tensor<T>::zeros({cout}));
    if (cin != cout || stride != 1) {
      Tensor<T> ws({cout, cin, 1, 1});
      init_uniform_fan_in(ws, cin, rng);
      w_skip = &reg.add(prefix + ".skip.weight", std::move(ws));
      b_skip = &reg.add(prefix + ".skip.bias", Tensor<T>::zeros({cout}));
    }
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    Tensor<T> h = ops::channel_norm(tape, x, *n1_gain, *n1_shift);
    h = ops::conv2d(tape, h, *w1, *b1, stride, 1);
    h = ops::relu(tape, h);
    h = ops::channel_norm(tape, h, *n2_gain, *n2_shift);
    h = ops::conv2d(tape, h, *w2, *b2, 1, 1);
    Tensor<T> skip = w_skip ? ops::conv2d(tape, x, *w_skip, *b_skip, stride, 0) : x;
    return ops::relu(tape, ops::add(tape, skip, h));
  }
};

// Channel attention fusion: one shared squeeze MLP scores every source, the
// sigmoid-weighted sources are summed and mixed by a 1x1 convolution. With
// identical inputs the weighted terms are identical because the MLP is
// shared.
template <typename T>
struct ArfModule {
  int channels = 0;
  Tensor<T>*w1{}, *b1{}, *w2{}, *b2{}, *w_fuse{}, *b_fuse{};

  void init(ParamRegistry<T>& reg, const std::string& prefix, int channels_,
            int reduction, Rng& rng) {
    channels = channels_;
    const int hidden = channels / reduction;
    Tensor<T> w1t({hidden, channels});
    init_uniform_fan_in(w1t, channels, rng);
    w1 = &reg.add(prefix + ".mlp1.weight", std::move(w1t));
    b1 = &reg.add(prefix + ".mlp1.bias", Tensor<T>::zeros({hidden}));
    Tensor<T> w2t({channels, hidden});
    init_uniform_fan_in(w2t, hidden, rng);
    w2 = &reg.add(prefix + ".mlp2.weight", std::move(w2t));
    b2 = &reg.add(prefix + ".mlp2.bias", Tensor<T>::zeros({channels}));
    Tensor<T> wf({channels, channels, 1, 1});
    init_uniform_fan_in(wf, channels, rng);
    w_fuse = &reg.add(prefix + ".fuse.weight", std::move(wf));
    b_fuse = &reg.add(prefix + ".fuse.bias", Tensor<T>::zeros({channels}));
  }

  Tensor<T> attention(Tape<T>* tape, const Tensor<T>& source) const {
    Tensor<T> a = ops::global_avg_pool2d(tape, source);
    a = ops::relu(tape, ops::linear(tape, a, *w1, *b1));
    return ops::sigmoid(tape, ops::linear(tape, a, *w2, *b2));
  }

  Tensor<T> forward(Tape<T>* tape, const std::vector<Tensor<T>>& sources) const {
    if (sources.empty()) throw std::invalid_argument("arf: no sources");
    for (const auto& s : sources)
      if (s.shape != sources[0].shape)
        throw std::invalid_argument("arf: source shape mismatch");
    Tensor<T> sum;
    bool first = true;
    for (const auto& s : sources) {
      Tensor<T> weighted = ops::channel_scale(tape, s, attention(tape, s));
      sum = first ? weighted : ops::add(tape, sum, weighted);
      first = false;
    }
    return ops::conv2d(tape, sum, *w_fuse, *b_fuse, 1, 0);
  }
};

// The end-to-end model: sparse semantic branch and dense completion branch
// projected to bird's-eye view and fused by a 2D U-Net with ARF modules at
// the three downsampled scales.
template <typename T>
struct SscModel {
  ModelConfig cfg;
  ParamRegistry<T> params;

  // semantic branch
  Tensor<T>*pmlp1_w{}, *pmlp1_b{}, *pmlp2_w{}, *pmlp2_b{}, *reduce_w{}, *reduce_b{};
  SparseResidualBlock<T> sem_res[3];
  SgfeBlock<T> sem_sgfe[3];
  Tensor<T>*sem_head_w1[3] = {}, *sem_head_b1[3] = {}, *sem_head_w2[3] = {},
      *sem_head_b2[3] = {};

  // completion branch
  Tensor<T>*com_in_w{}, *com_in_b{};
  DenseResidualBlock3d<T> com_res[3];
  Tensor<T>*com_head_w1[3] = {}, *com_head_b1[3] = {}, *com_head_w2[3] = {},
      *com_head_b2[3] = {};

  // BEV fusion network
  Tensor<T>*sem_proj_w[4] = {}, *sem_proj_b[4] = {};
  Tensor<T>*com_proj_w[4] = {}, *com_proj_b[4] = {};
  Tensor<T>*in_conv_w{}, *in_conv_b{}, *in_norm_gain{}, *in_norm_shift{};
  ResidualBlock2d<T> enc[4];
  ArfModule<T> arf[3];
  Tensor<T>*up_w[3] = {}, *up_b[3] = {};
  ResidualBlock2d<T> dec[3];
  Tensor<T>*head_w{}, *head_b{};

  explicit SscModel(const ModelConfig& config) : cfg(config) {
    cfg.validate();
    Rng rng(cfg.init_seed);
    const int cv = cfg.voxel_feature_width;
    const auto& s = cfg.sem_widths;
    const auto& g = cfg.com_widths;
    const auto& c = cfg.bev_widths;
    const auto& d = cfg.decoder_widths;
    const int hz = cfg.grid.dims[2];

    if (cfg.use_semantic_branch) {
      auto dense = [&](const std::string& name, std::vector<int> shape, int64_t fan) {
        Tensor<T> t(std::move(shape));
        init_uniform_fan_in(t, fan, rng);
        return &params.add(name, std::move(t));
      };
      pmlp1_w = dense("sem.voxel.mlp1.weight", {2 * cv, 7}, 7);
      pmlp1_b = &params.add("sem.voxel.mlp1.bias", Tensor<T>::zeros({2 * cv}));
      pmlp2_w = dense("sem.voxel.mlp2.weight", {2 * cv, 2 * cv}, 2 * cv);
      pmlp2_b = &params.add("sem.voxel.mlp2.bias", Tensor<T>::zeros({2 * cv}));
      reduce_w = dense("sem.voxel.reduce.weight", {cv, 2 * cv}, 2 * cv);
      reduce_b = &params.add("sem.voxel.reduce.bias", Tensor<T>::zeros({cv}));
      for (int i = 0; i < 3; ++i) {
        const int cin = i == 0 ? cv : s[size_t(i) - 1];
        const std::string stage = "sem.stage" + std::to_string(i + 1);
        sem_res[i].init(params, stage + ".res", cin, s[size_t(i)], rng);
        sem_sgfe[i].init(params, stage + ".sgfe", s[size_t(i)], rng);
        const std::string head = "sem.head" + std::to_string(i + 1);
        sem_head_w1[i] = dense(head + ".fc1.weight", {s[size_t(i)], s[size_t(i)]}, s[size_t(i)]);
        sem_head_b1[i] = &params.add(head + ".fc1.bias", Tensor<T>::zeros({s[size_t(i)]}));
        sem_head_w2[i] = dense(head + ".fc2.weight", {cfg.num_classes, s[size_t(i)]}, s[size_t(i)]);
        sem_head_b2[i] = &params.add(head + ".fc2.bias", Tensor<T>::zeros({cfg.num_classes}));
      }
    }

    {
      Tensor<T> w({g[0], 1, 7, 7, 7});
      init_uniform_fan_in(w, 343, rng);
      com_in_w = &params.add("com.input.weight", std::move(w));
      com_in_b = &params.add("com.input.bias", Tensor<T>::zeros({g[0]}));
      for (int i = 0; i < 3; ++i) {
        const std::string stage = "com.stage" + std::to_string(i + 1);
        com_res[i].init(params, stage + ".res", g[size_t(i)], g[size_t(i) + 1], rng);
        const int gc = g[size_t(i) + 1];
        const std::string head = "com.head" + std::to_string(i + 1);
        Tensor<T> w1({gc, gc, 1, 1, 1});
        init_uniform_fan_in(w1, gc, rng);
        com_head_w1[i] = &params.add(head + ".fc1.weight", std::move(w1));
        com_head_b1[i] = &params.add(head + ".fc1.bias", Tensor<T>::zeros({gc}));
        Tensor<T> w2({1, gc, 1, 1, 1});
        init_uniform_fan_in(w2, gc, rng);
        com_head_w2[i] = &params.add(head + ".fc2.weight", std::move(w2));
        com_head_b2[i] = &params.add(head + ".fc2.bias", Tensor<T>::zeros({1}));
      }
    }

    {
      const int sem_src[4] = {cv, s[0], s[1], s[2]};
      for (int i = 0; i < 4; ++i) {
        const std::string tag = std::to_string(i);
        if (cfg.use_semantic_branch) {
          Tensor<T> w({c[size_t(i)], sem_src[i], 1, 1});
          init_uniform_fan_in(w, sem_src[i], rng);
          sem_proj_w[i] = &params.add("bev.sem_proj" + tag + ".weight", std::move(w));
          sem_proj_b[i] = &params.add("bev.sem_proj" + tag + ".bias",
                                      Tensor<T>::zeros({c[size_t(i)]}));
        }
        const int com_src = g[size_t(i)] * (hz >> i);
        Tensor<T> w({c[size_t(i)], com_src, 1, 1});
        init_uniform_fan_in(w, com_src, rng);
        com_proj_w[i] = &params.add("bev.com_proj" + tag + ".weight", std::move(w));
        com_proj_b[i] = &params.add("bev.com_proj" + tag + ".bias",
                                    Tensor<T>::zeros({c[size_t(i)]}));
      }
      const int in_ch = cfg.use_semantic_branch ? 2 * c[0] : c[0];
      Tensor<T> w({c[0], in_ch, 3, 3});
      init_uniform_fan_in(w, int64_t(in_ch) * 9, rng);
      in_conv_w = &params.add("bev.input.conv.weight", std::move(w));
      in_conv_b = &params.add("bev.input.conv.bias", Tensor<T>::zeros({c[0]}));
      in_norm_gain = &params.add("bev.input.norm.gain", Tensor<T>::full({c[0]}, T(1)));
      in_norm_shift = &params.add("bev.input.norm.shift", Tensor<T>::zeros({c[0]}));
      enc[0].init(params, "bev.enc1", c[0], c[1], 2, rng);
      enc[1].init(params, "bev.enc2", c[1], c[2], 2, rng);
      enc[2].init(params, "bev.enc3", c[2], c[3], 2, rng);
      enc[3].init(params, "bev.enc4", c[3], c[3], 1, rng);
      for (int i = 0; i < 3; ++i)
        arf[i].init(params, "bev.arf" + std::to_string(i + 1), c[size_t(i) + 1],
                    cfg.arf_reduction, rng);
      const int up_in[3] = {c[3], d[0], d[1]};
      const int skip_ch[3] = {c[2], c[1], c[0]};
      for (int i = 0; i < 3; ++i) {
        Tensor<T> w2({up_in[i], d[size_t(i)], 2, 2});
        init_uniform_fan_in(w2, up_in[i] * 4, rng);
        up_w[i] = &params.add("bev.up" + std::to_string(i + 1) + ".weight", std::move(w2));
        up_b[i] = &params.add("bev.up" + std::to_string(i + 1) + ".bias",
                              Tensor<T>::zeros({d[size_t(i)]}));
        dec[i].init(params, "bev.dec" + std::to_string(i + 1),
                    d[size_t(i)] + skip_ch[i], d[size_t(i)], 1, rng);
      }
      const int out_ch = (cfg.num_classes + 1) * hz;
      Tensor<T> hw({out_ch, d[2], 1, 1});
      init_uniform_fan_in(hw, d[2], rng);
      head_w = &params.add("bev.head.weight", std::move(hw));
      head_b = &params.add("bev.head.bias", Tensor<T>::zeros({out_ch}));
    }
  }

  int64_t param_count(const std::string& prefix = "") const {
    int64_t n = 0;
    for (const auto& [name, t] : params.params)
      if (name.rfind(prefix, 0) == 0) n += t.numel();
    return n;
  }

  // Eq. 2 style voxel feature layer: per-point MLP, scatter-max per voxel,
  // reduction MLP. Raw metric features are standardized to about [-1, 1]
  // before the MLP so positions do not drown out the center offsets and the
  // intensity channel.
  SparseVoxelTensor<T> voxel_features(Tape<T>* tape, const ModelInput& in) const {
    const auto& dims = cfg.grid.dims;
    std::array<double, 3> center, half;
    for (int k = 0; k < 3; ++k) {
      half[size_t(k)] = 0.5 * cfg.grid.extent(k);
      center[size_t(k)] = cfg.grid.origin[size_t(k)] + half[size_t(k)];
    }
    const double half_cell = 0.5 * cfg.grid.voxel_size;
    std::vector<T> rows;
    std::vector<int64_t> keys;
    for (int b = 0; b < int(in.points.size()); ++b) {
      const std::vector<float> feats = build_point_features(in.points[size_t(b)], cfg.grid);
      const VoxelizeResult vox = voxelize(in.points[size_t(b)], cfg.grid);
      if (vox.indices.empty())
        throw std::runtime_error("empty scene: no points inside the grid (sample " +
                                 std::to_string(b) + ")");
      for (size_t p = 0; p < feats.size(); p += 7) {
        for (int k = 0; k < 3; ++k)
          rows.push_back(T((feats[p + size_t(k)] - center[size_t(k)]) / half[size_t(k)]));
        for (int k = 3; k < 6; ++k) rows.push_back(T(feats[p + size_t(k)] / half_cell));
        rows.push_back(T(2.0 * feats[p + 6] - 1.0));
      }
      for (const VoxelIndex& v : vox.indices)
        keys.push_back(coord_key({int32_t(b), v.x, v.y, v.z}, dims));
    }
    const int n = int(keys.size());
    Tensor<T> pf = Tensor<T>::from({n, 7}, std::move(rows));
    Tensor<T> h = ops::relu(tape, ops::linear(tape, pf, *pmlp1_w, *pmlp1_b));
    h = ops::relu(tape, ops::linear(tape, h, *pmlp2_w, *pmlp2_b));
    const KeyGroups groups = group_by_keys(keys);
    Tensor<T> pooled = ops::scatter_rows(tape, h, groups, Reduce::kMax);
    Tensor<T> fv = ops::relu(tape, ops::linear(tape, pooled, *reduce_w, *reduce_b));
    SparseVoxelTensor<T> out;
    out.features = fv;
    out.spatial_shape = dims;
    out.batch_size = int(in.points.size());
    out.coords.reserve(size_t(groups.num_groups()));
    for (int64_t key : groups.unique_keys) out.coords.push_back(key_to_coord(key, dims));
    return out;
  }

  Tensor<T> occupancy_tensor(const ModelInput& in) const {
    const auto& dims = cfg.grid.dims;
    const int l = dims[0], w = dims[1], h = dims[2];
    Tensor<T> occ({int(in.batch()), 1, h, l, w});
    T* po = occ.ptr();
    for (int b = 0; b < int(in.batch()); ++b) {
      const BoolGrid& grid = in.occupancy[size_t(b)];
      if (grid.dims != dims)
        throw std::invalid_argument("occupancy grid does not match model grid");
      for (int x = 0; x < l; ++x)
        for (int y = 0; y < w; ++y)
          for (int z = 0; z < h; ++z)
            po[((int64_t(b) * h + z) * l + x) * w + y] =
                grid.values[size_t(grid.index(x, y, z))] ? T(1) : T(0);
    }
    return occ;
  }

  ForwardOutput<T> forward(Tape<T>* tape, const ModelInput& in, bool with_aux) const {
    if (in.batch() == 0) throw std::invalid_argument("forward: empty batch");
    ForwardOutput<T> out;
    out.has_sem = cfg.use_semantic_branch;
    out.has_aux = with_aux;

    // semantic branch
    SparseVoxelTensor<T> sem_scales[4];
    if (cfg.use_semantic_branch) {
      sem_scales[0] = voxel_features(tape, in);
      for (int i = 0; i < 3; ++i) {
        SparseVoxelTensor<T> h = sem_res[i].forward(tape, sem_scales[i]);
        sem_scales[i + 1] = sem_sgfe[i].forward(tape, h);
        if (with_aux) {
          Tensor<T> a = ops::relu(
              tape, ops::linear(tape, sem_scales[i + 1].features, *sem_head_w1[i],
                                *sem_head_b1[i]));
          out.sem_aux[size_t(i)] = sem_scales[size_t(i) + 1];
          out.sem_aux[size_t(i)].features =
              ops::linear(tape, a, *sem_head_w2[i], *sem_head_b2[i]);
        }
      }
    }

    // completion branch
    Tensor<T> com_scales[4];
    {
      Tensor<T> occ = occupancy_tensor(in);
      com_scales[0] = ops::conv3d(tape, occ, *com_in_w, *com_in_b, 1, 3);
      for (int i = 0; i < 3; ++i) {
        Tensor<T> pooled = ops::max_pool3d(tape, com_scales[i]);
        com_scales[i + 1] = com_res[i].forward(tape, pooled);
        if (with_aux) {
          Tensor<T> a = ops::relu(tape, ops::conv3d(tape, com_scales[i + 1],
                                                    *com_head_w1[i], *com_head_b1[i], 1, 0));
          out.com_aux[size_t(i)] =
              ops::conv3d(tape, a, *com_head_w2[i], *com_head_b2[i], 1, 0);
        }
      }
    }

    // BEV projections to the shared channel plan
    Tensor<T> sem_bev[4], com_bev[4];
    for (int i = 0; i < 4; ++i) {
      if (cfg.use_semantic_branch) {
        Tensor<T> raw = bev_project_sparse(tape, sem_scales[i]);
        sem_bev[i] = ops::conv2d(tape, raw, *sem_proj_w[i], *sem_proj_b[i], 1, 0);
      }
      com_bev[i] = bev_project_dense(tape, com_scales[i], *com_proj_w[i], *com_proj_b[i]);
    }

    // BEV U-Net with ARF fusion after each downsampling stage
    Tensor<T> input = cfg.use_semantic_branch
                          ? ops::concat(tape, {sem_bev[0], com_bev[0]}, 1)
                          : com_bev[0];
    Tensor<T> h0 = ops::conv2d(tape, input, *in_conv_w, *in_conv_b, 1, 1);
    h0 = ops::relu(tape, ops::channel_norm(tape, h0, *in_norm_gain, *in_norm_shift));

    Tensor<T> fused[3];
    Tensor<T> h = h0;
    for (int i = 0; i < 3; ++i) {
      h = enc[i].forward(tape, h);
      std::vector<Tensor<T>> sources{h};
      if (cfg.use_semantic_branch) sources.push_back(sem_bev[i + 1]);
      sources.push_back(com_bev[i + 1]);
      fused[i] = arf[i].forward(tape, sources);
      h = fused[i];
    }
    h = enc[3].forward(tape, h);

    const Tensor<T>* skips[3] = {&fused[1], &fused[0], &h0};
    for (int i = 0; i < 3; ++i) {
      Tensor<T> up = ops::conv2d_transposed(tape, h, *up_w[i], *up_b[i], 2);
      h = dec[i].forward(tape, ops::concat(tape, {up, *skips[i]}, 1));
    }
    Tensor<T> logits = ops::conv2d(tape, h, *head_w, *head_b, 1, 0);
    out.ssc_logits = reshape(logits, {int(in.batch()), cfg.num_classes + 1,
                                      cfg.grid.dims[2], cfg.grid.dims[0],
                                      cfg.grid.dims[1]});
    return out;
  }
};

// Per-voxel argmax over the C_n+1 classes of one batch slot.
template <typename T>
LabelGrid logits_to_labels(const Tensor<T>& ssc_logits, int batch_index,
                           const VoxelGridSpec& grid) {
  const int k = ssc_logits.dim(1), h = ssc_logits.dim(2), l = ssc_logits.dim(3),
            w = ssc_logits.dim(4);
  LabelGrid out = LabelGrid::empty(grid.dims);
  const T* p = ssc_logits.ptr();
  const int64_t sp = int64_t(h) * l * w;
  for (int x = 0; x < l; ++x)
    for (int y = 0; y < w; ++y)
      for (int z = 0; z < h; ++z) {
        const int64_t cell = (int64_t(z) * l + x) * w + y;
        int best = 0;
        T best_v = p[(int64_t(batch_index) * k) * sp + cell];
        for (int c = 1; c < k; ++c) {
          const T v = p[(int64_t(batch_index) * k + c) * sp + cell];
          if (v > best_v) {
            best_v = v;
            best = c;
          }
        }
        out.labels[size_t(out.index(x, y, z))] = uint16_t(best);
      }
  return out;
}

}  // namespace ssc
