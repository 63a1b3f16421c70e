#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ssc/network.hpp"
#include "ssc/ref_kernels.hpp"
#include "ssc/rng.hpp"
#include "ssc/supervision.hpp"
#include "ssc/synth.hpp"

using namespace ssc;

namespace {

// small widths keep the per-test forward passes fast
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.num_classes = 4;
  cfg.grid = VoxelGridSpec{{0.0, -1.6, -0.8}, 0.2, {16, 16, 8}};
  cfg.voxel_feature_width = 4;
  cfg.sem_widths = {6, 8, 8};
  cfg.com_widths = {4, 4, 6, 6};
  cfg.bev_widths = {8, 8, 8, 8};
  cfg.decoder_widths = {8, 8, 8};
  cfg.arf_reduction = 2;
  cfg.init_seed = 3;
  return cfg;
}

ModelInput scene_input(const SceneSample& s) {
  ModelInput in;
  in.points.push_back(s.points);
  in.occupancy.push_back(s.input_occupancy);
  return in;
}

Tensor<float> rnd(std::vector<int> shape, Rng& rng) {
  Tensor<float> t(std::move(shape));
  for (auto& v : *t.data) v = float(rng.uniform(-1.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("voxel feature layer") {
  const ModelConfig cfg = tiny_config();
  SscModel<float> model(cfg);

  SUBCASE("one point yields exactly one active voxel") {
    ModelInput in;
    PointCloud pc;
    pc.positions.push_back({1.03f, -0.11f, 0.27f});
    pc.intensity.push_back(0.4f);
    in.points.push_back(pc);
    const SparseVoxelTensor<float> fv = model.voxel_features(nullptr, in);
    CHECK(fv.num_active() == 1);
    CHECK(fv.channels() == cfg.voxel_feature_width);
    CHECK(fv.spatial_shape == cfg.grid.dims);
  }
  SUBCASE("all points out of range raises the empty-scene error") {
    ModelInput in;
    PointCloud pc;
    pc.positions.push_back({-50.f, 0.f, 0.f});
    pc.intensity.push_back(0.f);
    in.points.push_back(pc);
    CHECK_THROWS_WITH_AS(model.voxel_features(nullptr, in),
                         doctest::Contains("empty scene"), std::runtime_error);
  }
}

TEST_CASE("forward shape ladder and aux heads") {
  const ModelConfig cfg = tiny_config();
  SscModel<float> model(cfg);
  const SceneSample scene = generate_synthetic_scene(4, cfg.grid);
  const ModelInput in = scene_input(scene);

  const ForwardOutput<float> out = model.forward(nullptr, in, true);

  SUBCASE("ssc logits cover the grid at C_n+1 classes") {
    CHECK(out.ssc_logits.shape == std::vector<int>{1, 5, 8, 16, 16});
  }
  SUBCASE("per-voxel softmax over classes sums to one") {
    const Tensor<float> probs = ops::softmax<float>(nullptr, out.ssc_logits, 1);
    const int64_t sp = 8 * 16 * 16;
    for (int64_t cell = 0; cell < sp; cell += 97) {
      float sum = 0;
      for (int c = 0; c < 5; ++c) sum += (*probs.data)[size_t(c * sp + cell)];
      CHECK(sum == doctest::Approx(1.f).epsilon(1e-5));
    }
  }
  SUBCASE("semantic stages sit on the half-resolution ladder") {
    CHECK(out.sem_aux[0].spatial_shape == std::array<int, 3>{8, 8, 4});
    CHECK(out.sem_aux[1].spatial_shape == std::array<int, 3>{4, 4, 2});
    CHECK(out.sem_aux[2].spatial_shape == std::array<int, 3>{2, 2, 1});
    for (int i = 0; i < 3; ++i) {
      CHECK(out.sem_aux[size_t(i)].channels() == cfg.num_classes);
      CHECK(out.sem_aux[size_t(i)].num_active() > 0);
    }
  }
  SUBCASE("completion stages sit on the same ladder") {
    CHECK(out.com_aux[0].shape == std::vector<int>{1, 1, 4, 8, 8});
    CHECK(out.com_aux[1].shape == std::vector<int>{1, 1, 2, 4, 4});
    CHECK(out.com_aux[2].shape == std::vector<int>{1, 1, 1, 2, 2});
  }
  SUBCASE("aux head removal leaves the prediction unchanged") {
    const ForwardOutput<float> infer = model.forward(nullptr, in, false);
    CHECK_FALSE(infer.has_aux);
    CHECK(*infer.ssc_logits.data == *out.ssc_logits.data);
  }
}

TEST_CASE("completion branch on empty occupancy produces zero aux logits") {
  ModelConfig cfg = tiny_config();
  cfg.use_semantic_branch = false;
  SscModel<float> model(cfg);
  ModelInput in;
  in.points.emplace_back();
  in.occupancy.push_back(BoolGrid::zeros(cfg.grid.dims));
  const ForwardOutput<float> out = model.forward(nullptr, in, true);
  // zero-initialized biases keep the linear chain at exactly zero
  for (int i = 0; i < 3; ++i)
    for (float v : *out.com_aux[size_t(i)].data) CHECK(v == 0.f);
  CHECK_FALSE(out.has_sem);
}

TEST_CASE("bev_project_sparse") {
  SUBCASE("single voxel lights a single BEV cell") {
    SparseVoxelTensor<float> x;
    x.spatial_shape = {4, 6, 3};
    x.coords = {{0, 2, 5, 1}};
    x.features = Tensor<float>::from({1, 2}, {0.5f, -2.f});
    const Tensor<float> bev = bev_project_sparse<float>(nullptr, x);
    CHECK(bev.shape == std::vector<int>{1, 2, 4, 6});
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 24; ++i) {
        const float v = (*bev.data)[size_t(c * 24 + i)];
        if (i == 2 * 6 + 5)
          CHECK(v == (*x.features.data)[size_t(c)]);
        else
          CHECK(v == 0.f);
      }
  }
  SUBCASE("two voxels in one column reduce elementwise max") {
    SparseVoxelTensor<float> x;
    x.spatial_shape = {4, 4, 4};
    x.coords = {{0, 1, 2, 0}, {0, 1, 2, 3}};
    x.features = Tensor<float>::from({2, 2}, {1.f, -5.f, -3.f, 4.f});
    const Tensor<float> bev = bev_project_sparse<float>(nullptr, x);
    CHECK((*bev.data)[size_t(0 * 16 + 1 * 4 + 2)] == 1.f);
    CHECK((*bev.data)[size_t(1 * 16 + 1 * 4 + 2)] == 4.f);
  }
  SUBCASE("random patterns match the densify-then-zmax oracle") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      SparseVoxelTensor<float> x;
      x.spatial_shape = {5, 6, 4};
      std::set<int64_t> keys;
      const int count = 1 + int(rng.uniform_int(30));
      while (int(keys.size()) < count) keys.insert(rng.uniform_int(5 * 6 * 4));
      for (int64_t k : keys) x.coords.push_back(key_to_coord(k, x.spatial_shape));
      x.features = rnd({count, 3}, rng);
      const Tensor<float> bev = bev_project_sparse<float>(nullptr, x);

      const Tensor<float> dense = ops::sparse_to_dense<float>(nullptr, x);
      std::vector<uint8_t> occupied(5 * 6 * 4, 0);
      for (const auto& c : x.coords)
        occupied[size_t((c[1] * 6 + c[2]) * 4 + c[3])] = 1;
      const auto oracle = ref::bev_zmax(*dense.data, 3, 5, 6, 4, occupied);
      REQUIRE(bev.numel() == int64_t(oracle.size()));
      for (size_t i = 0; i < oracle.size(); ++i)
        CHECK((*bev.data)[i] == doctest::Approx(oracle[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("bev_project_dense") {
  SUBCASE("identity 1x1 conv with matching width is a pure reshape") {
    Rng rng(10);
    Tensor<float> x = rnd({1, 2, 3, 4, 4}, rng);  // C=2, D=3
    Tensor<float> w = Tensor<float>::zeros({6, 6, 1, 1});
    for (int i = 0; i < 6; ++i) (*w.data)[size_t(i * 6 + i)] = 1.f;
    Tensor<float> b = Tensor<float>::zeros({6});
    const Tensor<float> y = bev_project_dense<float>(nullptr, x, w, b);
    CHECK(y.shape == std::vector<int>{1, 6, 4, 4});
    CHECK(*y.data == *x.data);
  }
  SUBCASE("D=1 reduces to a plain 1x1 convolution") {
    Rng rng(11);
    Tensor<float> x = rnd({2, 3, 1, 5, 5}, rng);
    Tensor<float> w = rnd({4, 3, 1, 1}, rng);
    Tensor<float> b = rnd({4}, rng);
    const Tensor<float> y = bev_project_dense<float>(nullptr, x, w, b);
    const Tensor<float> direct =
        ops::conv2d<float>(nullptr, reshape(x, {2, 3, 5, 5}), w, b, 1, 0);
    CHECK(*y.data == *direct.data);
  }
}

TEST_CASE("arf module") {
  ParamRegistry<float> reg;
  Rng init(12);
  ArfModule<float> arf;
  arf.init(reg, "arf", 4, 2, init);
  Rng rng(13);

  SUBCASE("zero squeeze MLP gives 0.5 attention everywhere") {
    for (const char* name : {"arf.mlp1.weight", "arf.mlp1.bias", "arf.mlp2.weight",
                             "arf.mlp2.bias"})
      std::fill(reg.at(name).data->begin(), reg.at(name).data->end(), 0.f);
    Tensor<float> a = rnd({1, 4, 3, 3}, rng), b = rnd({1, 4, 3, 3}, rng),
                  c = rnd({1, 4, 3, 3}, rng);
    const Tensor<float> fused = arf.forward(nullptr, {a, b, c});
    Tensor<float> half_sum(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i)
      (*half_sum.data)[size_t(i)] =
          0.5f * ((*a.data)[size_t(i)] + (*b.data)[size_t(i)] + (*c.data)[size_t(i)]);
    const Tensor<float> expect =
        ops::conv2d<float>(nullptr, half_sum, *arf.w_fuse, *arf.b_fuse, 1, 0);
    for (int64_t i = 0; i < fused.numel(); ++i)
      CHECK((*fused.data)[size_t(i)] ==
            doctest::Approx((*expect.data)[size_t(i)]).epsilon(1e-5));
  }
  SUBCASE("two zero inputs leave only the remaining weighted term") {
    Tensor<float> a = rnd({1, 4, 3, 3}, rng);
    Tensor<float> zero = Tensor<float>::zeros({1, 4, 3, 3});
    const Tensor<float> fused = arf.forward(nullptr, {a, zero, zero});
    const Tensor<float> attn = arf.attention(nullptr, a);
    const Tensor<float> expect = ops::conv2d<float>(
        nullptr, ops::channel_scale<float>(nullptr, a, attn), *arf.w_fuse, *arf.b_fuse, 1, 0);
    for (int64_t i = 0; i < fused.numel(); ++i)
      CHECK((*fused.data)[size_t(i)] ==
            doctest::Approx((*expect.data)[size_t(i)]).epsilon(1e-5));
  }
  SUBCASE("attention stays strictly inside (0,1) and equal inputs share it") {
    Tensor<float> a = rnd({2, 4, 3, 3}, rng);
    const Tensor<float> attn = arf.attention(nullptr, a);
    for (float v : *attn.data) {
      CHECK(v > 0.f);
      CHECK(v < 1.f);
    }
    // shared squeeze MLP: identical sources get identical channel weights
    const Tensor<float> again = arf.attention(nullptr, a.clone());
    CHECK(*attn.data == *again.data);
  }
  SUBCASE("shape mismatch is rejected") {
    Tensor<float> a = rnd({1, 4, 3, 3}, rng), b = rnd({1, 4, 2, 3}, rng);
    CHECK_THROWS(arf.forward(nullptr, {a, b}));
  }
}

TEST_CASE("prediction reshaping is lossless") {
  Rng rng(14);
  Tensor<float> flat = rnd({1, 5 * 8, 16, 16}, rng);
  const Tensor<float> shaped = reshape(flat, {1, 5, 8, 16, 16});
  const Tensor<float> back = reshape(shaped, {1, 5 * 8, 16, 16});
  CHECK(*back.data == *flat.data);
  CHECK(back.data == flat.data);
}

TEST_CASE("train and inference modes agree; batching is independent") {
  const ModelConfig cfg = tiny_config();
  SscModel<float> model(cfg);
  const SceneSample s1 = generate_synthetic_scene(15, cfg.grid);
  const SceneSample s2 = generate_synthetic_scene(16, cfg.grid);

  ModelInput both;
  both.points = {s1.points, s2.points};
  both.occupancy = {s1.input_occupancy, s2.input_occupancy};
  const ForwardOutput<float> batch = model.forward(nullptr, both, false);

  const ForwardOutput<float> a = model.forward(nullptr, scene_input(s1), false);
  const ForwardOutput<float> b = model.forward(nullptr, scene_input(s2), false);

  const int64_t per = a.ssc_logits.numel();
  REQUIRE(batch.ssc_logits.numel() == 2 * per);
  for (int64_t i = 0; i < per; ++i) {
    CHECK(std::abs((*batch.ssc_logits.data)[size_t(i)] - (*a.ssc_logits.data)[size_t(i)]) <=
          1e-6f);
    CHECK(std::abs((*batch.ssc_logits.data)[size_t(per + i)] -
                   (*b.ssc_logits.data)[size_t(i)]) <= 1e-6f);
  }
}

TEST_CASE("desk-scale grid walks the documented scale chain") {
  ModelConfig cfg;  // desk defaults: 64x64x8
  SscModel<float> model(cfg);
  const SceneSample scene = generate_synthetic_scene(21, cfg.grid);
  ModelInput in;
  in.points.push_back(scene.points);
  in.occupancy.push_back(scene.input_occupancy);
  const ForwardOutput<float> out = model.forward(nullptr, in, true);
  CHECK(out.ssc_logits.shape == std::vector<int>{1, 20, 8, 64, 64});
  CHECK(out.sem_aux[0].spatial_shape == std::array<int, 3>{32, 32, 4});
  CHECK(out.sem_aux[1].spatial_shape == std::array<int, 3>{16, 16, 2});
  CHECK(out.sem_aux[2].spatial_shape == std::array<int, 3>{8, 8, 1});
  CHECK(out.com_aux[2].shape == std::vector<int>{1, 1, 1, 8, 8});

  // per-stage loss terms sum to the branch losses
  const SceneTargets targets = build_scene_targets(scene.gt);
  const BatchLoss<float> loss = compute_losses<float>(nullptr, out, {&targets}, 3.f);
  CHECK(loss.report.sem ==
        doctest::Approx(loss.report.sem_stages[0] + loss.report.sem_stages[1] +
                        loss.report.sem_stages[2])
            .epsilon(1e-5));
  CHECK(loss.report.com ==
        doctest::Approx(loss.report.com_stages[0] + loss.report.com_stages[1] +
                        loss.report.com_stages[2])
            .epsilon(1e-5));
  CHECK(loss.report.total ==
        doctest::Approx(3.0 * loss.report.bev + loss.report.sem + loss.report.com));
}

TEST_CASE("full-scale configuration reports parameter counts") {
  ModelConfig cfg;  // default desk channel plan
  cfg.grid = VoxelGridSpec{{0.0, -25.6, -2.0}, 0.2, {256, 256, 32}};
  SscModel<float> model(cfg);
  const int64_t total = model.param_count();
  const int64_t sem = model.param_count("sem.");
  const int64_t com = model.param_count("com.");
  const int64_t bev = model.param_count("bev.");
  CHECK(total == sem + com + bev);
  CHECK(com > 0);
  MESSAGE("full-scale params: total ", total, " sem ", sem, " com ", com, " bev ", bev);
}

TEST_CASE("model config validation") {
  ModelConfig cfg = tiny_config();
  cfg.grid.dims = {12, 16, 8};  // not divisible by 8
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config();
  cfg.bev_widths = {7, 8, 8, 8};  // not divisible by arf_reduction
  CHECK_THROWS(cfg.validate());
}
