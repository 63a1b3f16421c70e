#include "ssc/gradcheck.hpp"

#include "ssc/losses.hpp"
#include "ssc/network.hpp"
#include "ssc/rng.hpp"
#include "ssc/sparse.hpp"
#include "ssc/supervision.hpp"
#include "ssc/synth.hpp"

namespace ssc {

namespace {

using D = double;
using TensorD = Tensor<D>;
using TapeD = Tape<D>;

// values bounded away from 0 so relu/max kinks stay clear of the probe step
TensorD rnd(std::vector<int> shape, Rng& rng) {
  TensorD t(std::move(shape));
  for (auto& v : *t.data) {
    const double u = 0.1 + 0.9 * rng.uniform();
    v = rng.coin() ? u : -u;
  }
  return t;
}

std::vector<D> rnd_weights(int64_t n, Rng& rng) {
  std::vector<D> w(static_cast<size_t>(n), D(0));
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

std::vector<std::array<int32_t, 4>> rnd_coords(int count, std::array<int, 3> shape,
                                               int batch, Rng& rng) {
  std::vector<int64_t> keys;
  const int64_t cells = int64_t(batch) * shape[0] * shape[1] * shape[2];
  std::vector<uint8_t> used(size_t(cells), 0);
  while (int(keys.size()) < count) {
    const int64_t k = rng.uniform_int(cells);
    if (used[size_t(k)]) continue;
    used[size_t(k)] = 1;
    keys.push_back(k);
  }
  std::sort(keys.begin(), keys.end());
  std::vector<std::array<int32_t, 4>> coords;
  for (int64_t k : keys) coords.push_back(key_to_coord(k, shape));
  return coords;
}

struct Case {
  std::string name;
  std::function<double()> run;  // returns rel err
};

double check(const std::function<TensorD(TapeD*)>& fn,
             const std::vector<TensorD*>& params, int max_per_tensor = 0) {
  return gradcheck(fn, params, 1e-5, max_per_tensor);
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(double tolerance) {
  std::vector<Case> cases;

  cases.push_back({"add", [] {
    Rng rng(11);
    TensorD a = rnd({3, 4}, rng), b = rnd({3, 4}, rng);
    auto w = rnd_weights(12, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::add(t, a, b), w); }, {&a, &b});
  }});
  cases.push_back({"scalar_mul", [] {
    Rng rng(12);
    TensorD a = rnd({2, 5}, rng);
    auto w = rnd_weights(10, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::scalar_mul(t, a, 1.7), w); }, {&a});
  }});
  cases.push_back({"relu", [] {
    Rng rng(13);
    TensorD a = rnd({4, 6}, rng);
    auto w = rnd_weights(24, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::relu(t, a), w); }, {&a});
  }});
  cases.push_back({"sigmoid", [] {
    Rng rng(14);
    TensorD a = rnd({4, 6}, rng);
    auto w = rnd_weights(24, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::sigmoid(t, a), w); }, {&a});
  }});
  cases.push_back({"linear", [] {
    Rng rng(15);
    TensorD x = rnd({5, 4}, rng), w = rnd({3, 4}, rng), b = rnd({3}, rng);
    auto wt = rnd_weights(15, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::linear(t, x, w, b), wt); },
                 {&x, &w, &b});
  }});
  cases.push_back({"softmax", [] {
    Rng rng(16);
    TensorD a = rnd({4, 5}, rng);
    auto w = rnd_weights(20, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::softmax(t, a, 1), w); }, {&a});
  }});
  cases.push_back({"log_softmax", [] {
    Rng rng(17);
    TensorD a = rnd({4, 5}, rng);
    auto w = rnd_weights(20, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::log_softmax(t, a, 1), w); }, {&a});
  }});
  cases.push_back({"channel_norm", [] {
    Rng rng(18);
    TensorD x = rnd({2, 3, 4, 5}, rng), g = rnd({3}, rng), s = rnd({3}, rng);
    auto w = rnd_weights(2 * 3 * 4 * 5, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::channel_norm(t, x, g, s), w); },
                 {&x, &g, &s});
  }});
  cases.push_back({"global_avg_pool2d", [] {
    Rng rng(19);
    TensorD x = rnd({2, 3, 4, 4}, rng);
    auto w = rnd_weights(6, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::global_avg_pool2d(t, x), w); }, {&x});
  }});
  cases.push_back({"concat", [] {
    Rng rng(20);
    TensorD a = rnd({3, 2}, rng), b = rnd({3, 4}, rng);
    auto w = rnd_weights(18, rng);
    return check(
        [&](TapeD* t) { return weighted_sum(t, ops::concat(t, {a, b}, 1), w); }, {&a, &b});
  }});
  cases.push_back({"slice_cols", [] {
    Rng rng(21);
    TensorD a = rnd({4, 6}, rng);
    auto w = rnd_weights(8, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::slice_cols(t, a, 2, 2), w); }, {&a});
  }});
  cases.push_back({"channel_scale", [] {
    Rng rng(22);
    TensorD x = rnd({2, 3, 4, 4}, rng), s = rnd({2, 3}, rng);
    auto w = rnd_weights(x.numel(), rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::channel_scale(t, x, s), w); },
                 {&x, &s});
  }});
  cases.push_back({"row_scale", [] {
    Rng rng(23);
    TensorD x = rnd({5, 3}, rng), s = rnd({5, 1}, rng);
    auto w = rnd_weights(15, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::row_scale(t, x, s), w); },
                 {&x, &s});
  }});
  cases.push_back({"gather_rows", [] {
    Rng rng(24);
    TensorD x = rnd({4, 3}, rng);
    std::vector<int32_t> rows{0, 2, 2, 3, 1, 0};
    auto w = rnd_weights(18, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::gather_rows(t, x, rows), w); },
                 {&x});
  }});
  cases.push_back({"scatter_max", [] {
    Rng rng(25);
    TensorD x = rnd({6, 3}, rng);
    const KeyGroups groups = group_by_keys({4, 1, 4, 2, 1, 4});
    auto w = rnd_weights(9, rng);
    return check(
        [&](TapeD* t) {
          return weighted_sum(t, ops::scatter_rows(t, x, groups, Reduce::kMax), w);
        },
        {&x});
  }});
  cases.push_back({"scatter_mean", [] {
    Rng rng(26);
    TensorD x = rnd({6, 3}, rng);
    const KeyGroups groups = group_by_keys({4, 1, 4, 2, 1, 4});
    auto w = rnd_weights(9, rng);
    return check(
        [&](TapeD* t) {
          return weighted_sum(t, ops::scatter_rows(t, x, groups, Reduce::kMean), w);
        },
        {&x});
  }});
  cases.push_back({"conv3d", [] {
    Rng rng(27);
    TensorD x = rnd({1, 2, 4, 4, 4}, rng), w = rnd({3, 2, 3, 3, 3}, rng), b = rnd({3}, rng);
    auto wt = rnd_weights(3 * 64, rng);
    return check(
        [&](TapeD* t) { return weighted_sum(t, ops::conv3d(t, x, w, b, 1, 1), wt); },
        {&x, &w, &b});
  }});
  cases.push_back({"conv2d", [] {
    Rng rng(28);
    TensorD x = rnd({2, 3, 6, 6}, rng), w = rnd({4, 3, 3, 3}, rng), b = rnd({4}, rng);
    auto wt = rnd_weights(2 * 4 * 3 * 3, rng);
    return check(
        [&](TapeD* t) { return weighted_sum(t, ops::conv2d(t, x, w, b, 2, 1), wt); },
        {&x, &w, &b});
  }});
  cases.push_back({"conv2d_transposed", [] {
    Rng rng(29);
    TensorD x = rnd({1, 3, 3, 3}, rng), w = rnd({3, 2, 2, 2}, rng), b = rnd({2}, rng);
    auto wt = rnd_weights(2 * 36, rng);
    return check(
        [&](TapeD* t) { return weighted_sum(t, ops::conv2d_transposed(t, x, w, b, 2), wt); },
        {&x, &w, &b});
  }});
  cases.push_back({"max_pool3d", [] {
    Rng rng(30);
    TensorD x = rnd({1, 2, 4, 4, 4}, rng);
    auto w = rnd_weights(2 * 8, rng);
    return check([&](TapeD* t) { return weighted_sum(t, ops::max_pool3d(t, x), w); }, {&x});
  }});
  cases.push_back({"sparse_conv3d", [] {
    Rng rng(31);
    SparseVoxelTensor<D> x;
    x.spatial_shape = {6, 6, 6};
    x.batch_size = 1;
    x.coords = rnd_coords(7, x.spatial_shape, 1, rng);
    x.features = rnd({7, 3}, rng);
    TensorD w = rnd({4, 3, 3, 3, 3}, rng), b = rnd({4}, rng);
    auto wt = rnd_weights(28, rng);
    return check(
        [&](TapeD* t) {
          return weighted_sum(t, ops::submanifold_conv3d(t, x, w, b).features, wt);
        },
        {&x.features, &w, &b});
  }});
  cases.push_back({"sparse_norm", [] {
    Rng rng(32);
    SparseVoxelTensor<D> x;
    x.spatial_shape = {4, 4, 4};
    x.batch_size = 2;
    x.coords = rnd_coords(8, x.spatial_shape, 2, rng);
    x.features = rnd({8, 3}, rng);
    TensorD g = rnd({3}, rng), s = rnd({3}, rng);
    auto w = rnd_weights(24, rng);
    return check(
        [&](TapeD* t) {
          return weighted_sum(
              t, ops::sparse_norm(t, x.features, x.coords, 2, g, s), w);
        },
        {&x.features, &g, &s});
  }});
  cases.push_back({"sparse_residual_block", [] {
    Rng rng(33);
    ParamRegistry<D> reg;
    Rng init(7);
    SparseResidualBlock<D> block;
    block.init(reg, "blk", 3, 4, init);
    SparseVoxelTensor<D> x;
    x.spatial_shape = {5, 5, 5};
    x.batch_size = 1;
    x.coords = rnd_coords(5, x.spatial_shape, 1, rng);
    x.features = rnd({5, 3}, rng);
    auto w = rnd_weights(20, rng);
    std::vector<TensorD*> params{&x.features};
    for (auto& [name, t] : reg.params) params.push_back(&t);
    return check(
        [&](TapeD* t) { return weighted_sum(t, block.forward(t, x).features, w); }, params);
  }});
  cases.push_back({"sgfe_downscale", [] {
    Rng rng(34);
    ParamRegistry<D> reg;
    Rng init(8);
    SgfeBlock<D> block;
    block.init(reg, "sgfe", 3, init);
    SparseVoxelTensor<D> x;
    x.spatial_shape = {4, 4, 4};
    x.batch_size = 1;
    x.coords = rnd_coords(6, x.spatial_shape, 1, rng);
    x.features = rnd({6, 3}, rng);
    auto forward_rows = block.forward(nullptr, x).num_active();
    auto w = rnd_weights(forward_rows * 3, rng);
    std::vector<TensorD*> params{&x.features};
    for (auto& [name, t] : reg.params) params.push_back(&t);
    return check(
        [&](TapeD* t) { return weighted_sum(t, block.forward(t, x).features, w); }, params);
  }});
  cases.push_back({"sparse_to_dense", [] {
    Rng rng(35);
    SparseVoxelTensor<D> x;
    x.spatial_shape = {3, 3, 3};
    x.batch_size = 2;
    x.coords = rnd_coords(5, x.spatial_shape, 2, rng);
    x.features = rnd({5, 2}, rng);
    auto w = rnd_weights(2 * 2 * 27, rng);
    return check(
        [&](TapeD* t) { return weighted_sum(t, ops::sparse_to_dense(t, x), w); },
        {&x.features});
  }});
  cases.push_back({"densify_bev", [] {
    Rng rng(36);
    TensorD rows = rnd({4, 3}, rng);
    std::vector<int64_t> keys{1, 5, 12, 17};
    auto w = rnd_weights(1 * 3 * 3 * 6, rng);
    return check(
        [&](TapeD* t) { return weighted_sum(t, ops::densify_bev(t, rows, keys, 1, 3, 6), w); },
        {&rows});
  }});
  cases.push_back({"bev_project_sparse", [] {
    Rng rng(37);
    SparseVoxelTensor<D> x;
    x.spatial_shape = {4, 4, 4};
    x.batch_size = 1;
    x.coords = rnd_coords(8, x.spatial_shape, 1, rng);
    x.features = rnd({8, 3}, rng);
    auto w = rnd_weights(3 * 16, rng);
    return check([&](TapeD* t) { return weighted_sum(t, bev_project_sparse(t, x), w); },
                 {&x.features});
  }});
  cases.push_back({"bev_project_dense", [] {
    Rng rng(38);
    TensorD x = rnd({1, 2, 3, 4, 4}, rng), w = rnd({3, 6, 1, 1}, rng), b = rnd({3}, rng);
    auto wt = rnd_weights(3 * 16, rng);
    return check(
        [&](TapeD* t) { return weighted_sum(t, bev_project_dense(t, x, w, b), wt); },
        {&x, &w, &b});
  }});
  cases.push_back({"arf_fuse", [] {
    Rng rng(39);
    ParamRegistry<D> reg;
    Rng init(9);
    ArfModule<D> arf;
    arf.init(reg, "arf", 4, 2, init);
    TensorD a = rnd({1, 4, 3, 3}, rng), b = rnd({1, 4, 3, 3}, rng), c = rnd({1, 4, 3, 3}, rng);
    auto w = rnd_weights(36, rng);
    std::vector<TensorD*> params{&a, &b, &c};
    for (auto& [name, t] : reg.params) params.push_back(&t);
    return check(
        [&](TapeD* t) { return weighted_sum(t, arf.forward(t, {a, b, c}), w); }, params);
  }});
  cases.push_back({"cross_entropy", [] {
    Rng rng(40);
    TensorD logits = rnd({6, 4}, rng);
    std::vector<int32_t> targets{0, 3, 1, 2, 1, 0};
    std::vector<uint8_t> ignore{0, 0, 1, 0, 0, 0};
    return check(
        [&](TapeD* t) { return ops::cross_entropy(t, logits, targets, ignore); }, {&logits});
  }});
  cases.push_back({"bce_with_logits", [] {
    Rng rng(41);
    TensorD logits = rnd({8, 1}, rng);
    std::vector<uint8_t> targets{1, 0, 1, 1, 0, 0, 1, 0};
    std::vector<uint8_t> ignore{0, 0, 0, 1, 0, 0, 0, 0};
    return check(
        [&](TapeD* t) { return ops::bce_with_logits(t, logits, targets, ignore); }, {&logits});
  }});
  cases.push_back({"lovasz_softmax", [] {
    Rng rng(42);
    TensorD logits = rnd({7, 3}, rng);
    std::vector<int32_t> targets{0, 2, 1, 1, 0, 2, 1};
    std::vector<uint8_t> ignore{0, 0, 0, 0, 1, 0, 0};
    return check(
        [&](TapeD* t) {
          return ops::lovasz_softmax(t, ops::softmax(t, logits, 1), targets, ignore);
        },
        {&logits});
  }});
  cases.push_back({"semantic_loss", [] {
    Rng rng(43);
    LabelGrid gt = LabelGrid::empty({4, 4, 2});
    for (auto& v : gt.labels) v = uint16_t(rng.uniform_int(4));  // 0..3
    SparseVoxelTensor<D> aux;
    aux.spatial_shape = {4, 4, 2};
    aux.batch_size = 1;
    aux.coords = rnd_coords(9, aux.spatial_shape, 1, rng);
    aux.features = rnd({9, 3}, rng);
    return check(
        [&](TapeD* t) { return semantic_stage_loss(t, aux, {&gt}); }, {&aux.features});
  }});
  cases.push_back({"completion_loss", [] {
    Rng rng(44);
    LabelGrid lab = LabelGrid::empty({4, 4, 2});
    BoolGrid occ = BoolGrid::zeros({4, 4, 2});
    for (auto& v : occ.values) v = uint8_t(rng.coin());
    TensorD logits = rnd({1, 1, 2, 4, 4}, rng);
    return check(
        [&](TapeD* t) { return completion_stage_loss(t, logits, {&occ}, {&lab}); }, {&logits});
  }});
  cases.push_back({"bev_loss", [] {
    Rng rng(45);
    LabelGrid gt = LabelGrid::empty({4, 4, 2});
    for (auto& v : gt.labels) v = uint16_t(rng.uniform_int(4));
    gt.invalid[3] = 1;
    TensorD logits = rnd({1, 4, 2, 4, 4}, rng);
    return check([&](TapeD* t) { return bev_loss(t, logits, {&gt}); }, {&logits});
  }});
  cases.push_back({"total_loss", [] {
    Rng rng(46);
    TensorD a = rnd({1}, rng), b = rnd({1}, rng), c = rnd({1}, rng);
    return check(
        [&](TapeD* t) {
          return ops::total_loss(t, ops::sigmoid(t, a), ops::sigmoid(t, b),
                                 ops::sigmoid(t, c), 3.0);
        },
        {&a, &b, &c});
  }});
  cases.push_back({"full_model", [] {
    ModelConfig cfg;
    cfg.num_classes = 3;
    cfg.grid = VoxelGridSpec{{0.0, -0.8, -0.8}, 0.2, {8, 8, 8}};
    cfg.voxel_feature_width = 4;
    cfg.sem_widths = {4, 4, 4};
    cfg.com_widths = {2, 2, 2, 2};
    cfg.bev_widths = {4, 4, 4, 4};
    cfg.decoder_widths = {4, 4, 4};
    cfg.arf_reduction = 2;
    cfg.init_seed = 5;
    SscModel<D> model(cfg);
    // probe at a generic point: zero biases would park empty space exactly on
    // the relu/max kinks where finite differences are one-sided
    Rng prng(77);
    for (auto& [name, t] : model.params.params)
      for (auto& v : *t.data) {
        const double u = 0.05 + 0.45 * prng.uniform();
        v = prng.coin() ? u : -u;
      }

    VoxelGridSpec synth_grid = cfg.grid;
    SceneSample scene = generate_synthetic_scene(21, synth_grid);
    for (auto& v : scene.gt.labels) v = uint16_t(std::min<int>(v, 3));
    const SceneTargets targets = build_scene_targets(scene.gt);
    ModelInput input;
    input.points.push_back(scene.points);
    input.occupancy.push_back(scene.input_occupancy);

    std::vector<TensorD*> params;
    for (auto& [name, t] : model.params.params) params.push_back(&t);
    auto fn = [&](TapeD* t) {
      ForwardOutput<D> out = model.forward(t, input, true);
      return compute_losses(t, out, {&targets}, 3.0).total;
    };
    return gradcheck(fn, params, 1e-5, 4);
  }});

  std::vector<GradCheckCase> results;
  results.reserve(cases.size());
  for (const Case& c : cases) {
    GradCheckCase r;
    r.name = c.name;
    r.rel_err = c.run();
    r.pass = r.rel_err <= tolerance;
    results.push_back(r);
  }
  return results;
}

}  // namespace ssc
