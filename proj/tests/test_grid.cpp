#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ssc/geometry.hpp"
#include "ssc/ref_kernels.hpp"
#include "ssc/rng.hpp"
#include "ssc/scatter.hpp"

using namespace ssc;

namespace {

VoxelGridSpec kitti_spec() {
  return VoxelGridSpec{{0.0, -25.6, -2.0}, 0.2, {256, 256, 32}};
}

PointCloud single_point(float x, float y, float z) {
  PointCloud pc;
  pc.positions.push_back({x, y, z});
  pc.intensity.push_back(0.5f);
  return pc;
}

}  // namespace

TEST_CASE("voxelize maps metric points to half-open bins") {
  const VoxelGridSpec spec = kitti_spec();
  const VoxelizeResult r = voxelize(single_point(10.0f, 3.0f, 1.0f), spec);
  REQUIRE(r.indices.size() == 1);
  CHECK(r.indices[0] == VoxelIndex{50, 143, 15});
}

TEST_CASE("voxelize puts the origin in voxel zero") {
  const VoxelGridSpec spec = kitti_spec();
  const VoxelizeResult r = voxelize(single_point(0.0f, -25.6f, -2.0f), spec);
  REQUIRE(r.indices.size() == 1);
  CHECK(r.indices[0] == VoxelIndex{0, 0, 0});
}

TEST_CASE("voxelize masks out the far corner") {
  const VoxelGridSpec spec = kitti_spec();
  const VoxelizeResult r = voxelize(single_point(51.2f, 25.6f, 4.4f), spec);
  CHECK(r.indices.empty());
  CHECK(r.in_range[0] == 0);
}

TEST_CASE("re-centering a voxel and re-voxelizing is the identity") {
  const VoxelGridSpec spec{{-3.0, 2.0, 0.5}, 0.25, {16, 12, 8}};
  Rng rng(42);
  for (int trial = 0; trial < 2000; ++trial) {
    PointCloud pc = single_point(
        float(spec.origin[0] + rng.uniform() * spec.extent(0)),
        float(spec.origin[1] + rng.uniform() * spec.extent(1)),
        float(spec.origin[2] + rng.uniform() * spec.extent(2)));
    const VoxelizeResult r = voxelize(pc, spec);
    REQUIRE(r.indices.size() == 1);
    const auto c = spec.voxel_center(r.indices[0].x, r.indices[0].y, r.indices[0].z);
    const VoxelizeResult r2 = voxelize(single_point(float(c[0]), float(c[1]), float(c[2])), spec);
    REQUIRE(r2.indices.size() == 1);
    CHECK(r2.indices[0] == r.indices[0]);
  }
}

TEST_CASE("point features carry the voxel-center offset") {
  const VoxelGridSpec spec = kitti_spec();

  SUBCASE("point at a voxel center has zero offset") {
    const auto f = build_point_features(single_point(0.1f, -25.5f, -1.9f), spec);
    REQUIRE(f.size() == 7);
    CHECK(f[3] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(f[4] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(f[5] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(f[6] == doctest::Approx(0.5));
  }

  SUBCASE("corner point has offset -s/2") {
    const auto f = build_point_features(single_point(0.0f, -25.6f, -2.0f), spec);
    REQUIRE(f.size() == 7);
    CHECK(f[3] == doctest::Approx(-0.1).epsilon(1e-5));
    CHECK(f[4] == doctest::Approx(-0.1).epsilon(1e-5));
    CHECK(f[5] == doctest::Approx(-0.1).epsilon(1e-5));
  }

  SUBCASE("offsets stay below half a voxel over random points") {
    Rng rng(7);
    PointCloud pc;
    for (int i = 0; i < 10000; ++i) {
      pc.positions.push_back({float(rng.uniform(0.0, 51.2)), float(rng.uniform(-25.6, 25.6)),
                              float(rng.uniform(-2.0, 4.4))});
      pc.intensity.push_back(0.f);
    }
    const auto f = build_point_features(pc, spec);
    const double half = spec.voxel_size / 2;
    for (size_t i = 0; i < f.size() / 7; ++i)
      for (int k = 3; k < 6; ++k)
        CHECK(std::abs(f[i * 7 + size_t(k)]) < half + 1e-6);
  }
}

TEST_CASE("scatter_reduce basics") {
  SUBCASE("two rows with one key reduce elementwise") {
    const std::vector<float> feats{1, 2, 3, 0};
    const auto r = scatter_reduce(feats, 2, {7, 7}, Reduce::kMax);
    REQUIRE(r.unique_keys == std::vector<int64_t>{7});
    CHECK(r.reduced == std::vector<float>{3, 2});
  }
  SUBCASE("a single row passes through for every mode") {
    const std::vector<float> feats{4, -1, 2};
    for (Reduce mode : {Reduce::kMax, Reduce::kMean, Reduce::kSum}) {
      const auto r = scatter_reduce(feats, 3, {5}, mode);
      CHECK(r.reduced == feats);
    }
  }
  SUBCASE("empty input gives empty output") {
    const auto r = scatter_reduce(std::vector<float>{}, 4, {}, Reduce::kSum);
    CHECK(r.unique_keys.empty());
    CHECK(r.reduced.empty());
  }
}

TEST_CASE("scatter_reduce matches the per-key loop oracle") {
  Rng rng(101);
  const int64_t m = 1000, c = 6;
  std::vector<float> feats(size_t(m * c));
  for (auto& v : feats) v = float(rng.uniform(-5.0, 5.0));
  std::vector<int64_t> keys(static_cast<size_t>(m));
  for (auto& k : keys) k = rng.uniform_int(50);
  for (auto mode : {Reduce::kMax, Reduce::kMean, Reduce::kSum}) {
    const auto fast = scatter_reduce(feats, c, keys, mode);
    std::vector<int64_t> uk;
    std::vector<float> red;
    ssc::ref::scatter_reduce(feats, c, keys,
                             mode == Reduce::kMax   ? ref::Reduce::kMax
                             : mode == Reduce::kMean ? ref::Reduce::kMean
                                                     : ref::Reduce::kSum,
                             &uk, &red);
    CHECK(fast.unique_keys == uk);
    REQUIRE(fast.reduced.size() == red.size());
    for (size_t i = 0; i < red.size(); ++i)
      CHECK(fast.reduced[i] == doctest::Approx(red[i]).epsilon(1e-6));
  }
}

TEST_CASE("scatter_reduce max is idempotent and permutation-invariant") {
  Rng rng(55);
  const int64_t m = 64, c = 3;
  std::vector<float> feats(size_t(m * c));
  for (auto& v : feats) v = float(rng.uniform(-2.0, 2.0));
  std::vector<int64_t> keys(static_cast<size_t>(m));
  for (auto& k : keys) k = rng.uniform_int(9);

  const auto once = scatter_reduce(feats, c, keys, Reduce::kMax);
  const auto twice = scatter_reduce(once.reduced, c, once.unique_keys, Reduce::kMax);
  CHECK(once.unique_keys == twice.unique_keys);
  CHECK(once.reduced == twice.reduced);

  std::vector<int64_t> perm(static_cast<size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  for (int64_t i = m - 1; i > 0; --i) std::swap(perm[size_t(i)], perm[size_t(rng.uniform_int(i + 1))]);
  std::vector<float> pf(size_t(m * c));
  std::vector<int64_t> pk(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    pk[size_t(i)] = keys[size_t(perm[size_t(i)])];
    for (int64_t j = 0; j < c; ++j) pf[size_t(i * c + j)] = feats[size_t(perm[size_t(i)] * c + j)];
  }
  const auto shuffled = scatter_reduce(pf, c, pk, Reduce::kMax);
  CHECK(shuffled.unique_keys == once.unique_keys);
  CHECK(shuffled.reduced == once.reduced);
}

TEST_CASE("downsample_labels majority vote and tie-breaks") {
  SUBCASE("a unique non-empty class wins") {
    LabelGrid g = LabelGrid::empty({2, 2, 2});
    g.labels[0] = g.labels[1] = g.labels[2] = 3;
    const LabelGrid d = downsample_labels(g, 2);
    CHECK(d.labels[0] == 3);
    CHECK(d.invalid[0] == 0);
  }
  SUBCASE("ties break to the smallest class id, exhaustively") {
    // every way of placing two classes with equal counts in a 2x2x2 block
    for (int count = 1; count <= 4; ++count) {
      LabelGrid g = LabelGrid::empty({2, 2, 2});
      for (int i = 0; i < count; ++i) g.labels[size_t(i)] = 5;
      for (int i = count; i < 2 * count; ++i) g.labels[size_t(i)] = 2;
      const LabelGrid d = downsample_labels(g, 2);
      CHECK(d.labels[0] == 2);
    }
  }
  SUBCASE("an all-empty block stays empty and valid") {
    const LabelGrid d = downsample_labels(LabelGrid::empty({4, 4, 4}), 2);
    for (auto v : d.labels) CHECK(v == 0);
    for (auto v : d.invalid) CHECK(v == 0);
  }
  SUBCASE("a block whose occupied voxels are all invalid is invalid") {
    LabelGrid g = LabelGrid::empty({2, 2, 2});
    g.labels[3] = 4;
    g.invalid[3] = 1;
    const LabelGrid d = downsample_labels(g, 2);
    CHECK(d.invalid[0] == 1);
  }
  SUBCASE("never invents a class missing from the block") {
    Rng rng(31);
    LabelGrid g = LabelGrid::empty({4, 4, 4});
    for (auto& v : g.labels) v = uint16_t(rng.uniform_int(5));
    const LabelGrid d = downsample_labels(g, 2);
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 2; ++y)
        for (int z = 0; z < 2; ++z) {
          const uint16_t label = d.labels[size_t(d.index(x, y, z))];
          if (label == 0) continue;
          bool found = false;
          for (int dx = 0; dx < 2; ++dx)
            for (int dy = 0; dy < 2; ++dy)
              for (int dz = 0; dz < 2; ++dz)
                found = found ||
                        g.labels[size_t(g.index(2 * x + dx, 2 * y + dy, 2 * z + dz))] == label;
          CHECK(found);
        }
  }
  SUBCASE("odd dims are rejected") {
    CHECK_THROWS(downsample_labels(LabelGrid::empty({3, 4, 4}), 2));
  }
}

TEST_CASE("downsample_occupancy is a logical OR over blocks") {
  SUBCASE("one occupied voxel lights the block") {
    BoolGrid g = BoolGrid::zeros({2, 2, 2});
    g.values[5] = 1;
    CHECK(downsample_occupancy(g, 2).values[0] == 1);
  }
  SUBCASE("an empty block stays empty") {
    CHECK(downsample_occupancy(BoolGrid::zeros({2, 2, 2}), 2).values[0] == 0);
  }
  SUBCASE("random 8-cubed grid matches the max-pool oracle") {
    Rng rng(77);
    BoolGrid g = BoolGrid::zeros({8, 8, 8});
    for (auto& v : g.values) v = uint8_t(rng.coin());
    const BoolGrid d = downsample_occupancy(g, 2);
    const std::vector<float> dense(g.values.begin(), g.values.end());
    const std::vector<float> pooled = ref::max_pool3d(dense, 1, 1, 8, 8, 8);
    for (size_t i = 0; i < d.values.size(); ++i)
      CHECK(double(d.values[i]) == doctest::Approx(double(pooled[i])));
  }
  SUBCASE("OR over the 8 children, exhaustively on 4-cubed grids") {
    Rng rng(78);
    for (int trial = 0; trial < 50; ++trial) {
      BoolGrid g = BoolGrid::zeros({4, 4, 4});
      for (auto& v : g.values) v = uint8_t(rng.coin());
      const BoolGrid d = downsample_occupancy(g, 2);
      for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 2; ++y)
          for (int z = 0; z < 2; ++z) {
            uint8_t expect = 0;
            for (int dx = 0; dx < 2; ++dx)
              for (int dy = 0; dy < 2; ++dy)
                for (int dz = 0; dz < 2; ++dz)
                  expect |= g.values[size_t(g.index(2 * x + dx, 2 * y + dy, 2 * z + dz))];
            CHECK(d.values[size_t(d.index(x, y, z))] == expect);
          }
    }
  }
}

TEST_CASE("bev_key drops z and is unique per column") {
  VoxelGridSpec spec;
  spec.dims = {8, 256, 4};
  CHECK(bev_key({0, 0, 0}, spec) == 0);
  CHECK(bev_key({0, 0, 3}, spec) == 0);
  CHECK(bev_key({1, 0, 5}, spec) == 256);

  VoxelGridSpec small;
  small.dims = {6, 5, 3};
  std::vector<int64_t> seen;
  for (int x = 0; x < 6; ++x)
    for (int y = 0; y < 5; ++y) {
      const int64_t k0 = bev_key({x, y, 0}, small);
      for (int z = 1; z < 3; ++z) CHECK(bev_key({x, y, z}, small) == k0);
      seen.push_back(k0);
    }
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("random_flip") {
  const VoxelGridSpec spec{{0.0, -6.4, -0.8}, 0.2, {64, 64, 8}};
  Rng rng(3);
  PointCloud pc;
  for (int i = 0; i < 500; ++i) {
    // jittered voxel-center points, never on a bin boundary
    const int x = int(rng.uniform_int(64)), y = int(rng.uniform_int(64)), z = int(rng.uniform_int(8));
    const auto c = spec.voxel_center(x, y, z);
    pc.positions.push_back({float(c[0] + rng.uniform(-0.09, 0.09)),
                            float(c[1] + rng.uniform(-0.09, 0.09)),
                            float(c[2] + rng.uniform(-0.09, 0.09))});
    pc.intensity.push_back(float(rng.uniform()));
  }
  LabelGrid grid = LabelGrid::empty(spec.dims);
  for (auto& v : grid.labels) v = uint16_t(rng.uniform_int(5));

  SUBCASE("a seed that draws no flip is the identity") {
    uint64_t seed = 0;
    for (; seed < 1000; ++seed) {
      Rng probe(seed);
      if (!probe.coin() && !probe.coin()) break;
    }
    const FlipResult r = random_flip(pc, {grid}, spec, seed);
    CHECK_FALSE(r.flipped_x);
    CHECK_FALSE(r.flipped_y);
    CHECK(r.points.positions == pc.positions);
    CHECK(r.grids[0].labels == grid.labels);
  }

  SUBCASE("applying the same flip twice is the identity") {
    const PointCloud once = flip_points(pc, spec, true, true);
    const PointCloud twice = flip_points(once, spec, true, true);
    for (size_t i = 0; i < pc.size(); ++i)
      for (int k = 0; k < 3; ++k)
        CHECK(twice.positions[i][size_t(k)] ==
              doctest::Approx(pc.positions[i][size_t(k)]).epsilon(1e-5));
    const LabelGrid g2 = flip_label_grid(flip_label_grid(grid, true, false), true, false);
    CHECK(g2.labels == grid.labels);
  }

  SUBCASE("flipped points re-voxelize to mirrored indices") {
    const VoxelizeResult before = voxelize(pc, spec);
    for (const bool fx : {false, true})
      for (const bool fy : {false, true}) {
        const PointCloud flipped = flip_points(pc, spec, fx, fy);
        const VoxelizeResult after = voxelize(flipped, spec);
        REQUIRE(after.indices.size() == before.indices.size());
        for (size_t i = 0; i < before.indices.size(); ++i) {
          const VoxelIndex& a = before.indices[i];
          const VoxelIndex& b = after.indices[i];
          CHECK(b.x == (fx ? spec.dims[0] - 1 - a.x : a.x));
          CHECK(b.y == (fy ? spec.dims[1] - 1 - a.y : a.y));
          CHECK(b.z == a.z);
        }
      }
  }
}
