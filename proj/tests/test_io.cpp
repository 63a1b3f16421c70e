#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <unistd.h>
#include <fstream>

#include "ssc/config.hpp"
#include "ssc/io.hpp"
#include "ssc/rng.hpp"
#include "ssc/synth.hpp"
#include "ssc/train.hpp"

using namespace ssc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ssc-test-" + std::to_string(::getpid()) + "-" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

}  // namespace

TEST_CASE("point files") {
  TempDir dir;
  SUBCASE("a 16-byte zero file is one point at the origin") {
    spit(dir.file("zero.bin"), std::vector<uint8_t>(16, 0));
    const PointCloud pc = read_points(dir.file("zero.bin"));
    REQUIRE(pc.size() == 1);
    CHECK(pc.positions[0] == std::array<float, 3>{0, 0, 0});
    CHECK(pc.intensity[0] == 0.f);
  }
  SUBCASE("write then read is bit exact") {
    Rng rng(1);
    PointCloud pc;
    for (int i = 0; i < 257; ++i) {
      pc.positions.push_back({float(rng.uniform(-50, 50)), float(rng.uniform(-50, 50)),
                              float(rng.uniform(-5, 5))});
      pc.intensity.push_back(float(rng.uniform()));
    }
    write_points(pc, dir.file("rt.bin"));
    const PointCloud back = read_points(dir.file("rt.bin"));
    CHECK(back.positions == pc.positions);
    CHECK(back.intensity == pc.intensity);
  }
  SUBCASE("an independent byte-level unpacking agrees") {
    const float values[4] = {1.5f, -2.25f, 3.0f, 0.5f};
    std::vector<uint8_t> bytes(16);
    std::memcpy(bytes.data(), values, 16);  // little-endian host
    spit(dir.file("ref.bin"), bytes);
    const PointCloud pc = read_points(dir.file("ref.bin"));
    REQUIRE(pc.size() == 1);
    CHECK(pc.positions[0] == std::array<float, 3>{1.5f, -2.25f, 3.0f});
    CHECK(pc.intensity[0] == 0.5f);
  }
  SUBCASE("a length not divisible by 16 is rejected") {
    spit(dir.file("bad.bin"), std::vector<uint8_t>(15, 0));
    CHECK_THROWS_AS(read_points(dir.file("bad.bin")), IoError);
  }
}

TEST_CASE("packed bitmasks") {
  TempDir dir;
  SUBCASE("0x80 decodes most-significant bit first") {
    spit(dir.file("one.bits"), {0x80});
    CHECK(read_packed_bits(dir.file("one.bits"), 8) ==
          std::vector<uint8_t>{1, 0, 0, 0, 0, 0, 0, 0});
  }
  SUBCASE("0xFF is all ones, 0x00 all zeros") {
    spit(dir.file("ff.bits"), {0xFF, 0x00});
    CHECK(read_packed_bits(dir.file("ff.bits"), 16) ==
          std::vector<uint8_t>{1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0});
  }
  SUBCASE("pack then unpack is the identity") {
    Rng rng(2);
    std::vector<uint8_t> bits(128);
    for (auto& b : bits) b = uint8_t(rng.coin());
    write_packed_bits(bits, dir.file("rt.bits"));
    CHECK(read_packed_bits(dir.file("rt.bits"), 128) == bits);
  }
  SUBCASE("size mismatch is rejected") {
    spit(dir.file("short.bits"), {0x00});
    CHECK_THROWS_AS(read_packed_bits(dir.file("short.bits"), 16), IoError);
  }
}

TEST_CASE("voxel label files") {
  TempDir dir;
  SUBCASE("an all-zero file is an all-empty grid") {
    spit(dir.file("zeros.label"), std::vector<uint8_t>(2 * 8, 0));
    const LabelGrid g = read_voxel_labels(dir.file("zeros.label"), {2, 2, 2}, {}, 4);
    for (auto v : g.labels) CHECK(v == 0);
    for (auto v : g.invalid) CHECK(v == 0);
  }
  SUBCASE("remap translates raw ids") {
    std::vector<uint8_t> bytes;
    for (int i = 0; i < 8; ++i) {
      bytes.push_back(10);
      bytes.push_back(0);
    }
    spit(dir.file("tens.label"), bytes);
    const LabelGrid g =
        read_voxel_labels(dir.file("tens.label"), {2, 2, 2}, {{0, 0}, {10, 1}}, 4);
    for (auto v : g.labels) CHECK(v == 1);
  }
  SUBCASE("unmapped ids are reported") {
    std::vector<uint8_t> bytes(16, 0);
    bytes[4] = 99;
    spit(dir.file("bad.label"), bytes);
    CHECK_THROWS_WITH_AS(
        read_voxel_labels(dir.file("bad.label"), {2, 2, 2}, {{0, 0}, {10, 1}}, 4),
        doctest::Contains("99"), IoError);
  }
  SUBCASE("write then read round trips bit-exactly, with the invalid mask") {
    Rng rng(3);
    LabelGrid g = LabelGrid::empty({4, 2, 4});
    for (auto& v : g.labels) v = uint16_t(rng.uniform_int(5));
    for (auto& v : g.invalid) v = uint8_t(rng.uniform_int(4) == 0);
    write_predictions(g, dir.file("rt.label"), {});
    write_packed_bits(g.invalid, dir.file("rt.invalid"));
    const LabelGrid back = read_voxel_labels(dir.file("rt.label"), {4, 2, 4}, {}, 4);
    CHECK(back.labels == g.labels);
    CHECK(back.invalid == g.invalid);

    write_predictions(back, dir.file("rt2.label"), {});
    CHECK(slurp(dir.file("rt.label")) == slurp(dir.file("rt2.label")));
  }
  SUBCASE("a class without inverse mapping is rejected") {
    LabelGrid g = LabelGrid::empty({2, 2, 2});
    g.labels[0] = 3;
    CHECK_THROWS_AS(write_predictions(g, dir.file("noinv.label"), {{7, 1}}), IoError);
  }
}

TEST_CASE("checkpoints") {
  TempDir dir;
  SUBCASE("an empty table is a 12-byte header") {
    checkpoint_write({}, dir.file("empty.sscr"));
    CHECK(slurp(dir.file("empty.sscr")).size() == 12);
    CHECK(checkpoint_read(dir.file("empty.sscr")).empty());
  }
  SUBCASE("registry round trip is bit identical") {
    Rng rng(4);
    ParamRegistry<float> reg;
    Tensor<float> a(std::vector<int>{3, 4});
    Tensor<float> b(std::vector<int>{2, 2, 2});
    for (auto& v : *a.data) v = float(rng.uniform(-2, 2));
    for (auto& v : *b.data) v = float(rng.uniform(-2, 2));
    reg.add("alpha.weight", a.clone());
    reg.add("beta.bias", b.clone());
    checkpoint_write(registry_to_tensors(reg), dir.file("reg.sscr"));

    ParamRegistry<float> loaded;
    loaded.add("alpha.weight", Tensor<float>::zeros({3, 4}));
    loaded.add("beta.bias", Tensor<float>::zeros({2, 2, 2}));
    tensors_to_registry(checkpoint_read(dir.file("reg.sscr")), loaded);
    CHECK(*loaded.at("alpha.weight").data == *a.data);
    CHECK(*loaded.at("beta.bias").data == *b.data);

    checkpoint_write(registry_to_tensors(loaded), dir.file("reg2.sscr"));
    CHECK(slurp(dir.file("reg.sscr")) == slurp(dir.file("reg2.sscr")));
  }
  SUBCASE("corrupted header and truncated payload are rejected") {
    checkpoint_write({{"t", {2}, {1.f, 2.f}}}, dir.file("ok.sscr"));
    auto bytes = slurp(dir.file("ok.sscr"));
    auto corrupt = bytes;
    corrupt[0] = 'X';
    spit(dir.file("badmagic.sscr"), corrupt);
    CHECK_THROWS_AS(checkpoint_read(dir.file("badmagic.sscr")), IoError);

    corrupt = bytes;
    corrupt[4] = 9;  // version
    spit(dir.file("badver.sscr"), corrupt);
    CHECK_THROWS_AS(checkpoint_read(dir.file("badver.sscr")), IoError);

    corrupt = bytes;
    corrupt.pop_back();
    spit(dir.file("trunc.sscr"), corrupt);
    CHECK_THROWS_AS(checkpoint_read(dir.file("trunc.sscr")), IoError);
  }
  SUBCASE("shape mismatches name the offending tensor") {
    checkpoint_write({{"p.weight", {3}, {1.f, 2.f, 3.f}}}, dir.file("shape.sscr"));
    ParamRegistry<float> reg;
    reg.add("p.weight", Tensor<float>::zeros({4}));
    CHECK_THROWS_WITH_AS(tensors_to_registry(checkpoint_read(dir.file("shape.sscr")), reg),
                         doctest::Contains("p.weight"), IoError);
  }
}

TEST_CASE("synthetic scenes") {
  const VoxelGridSpec spec{{0.0, -6.4, -0.8}, 0.2, {64, 64, 8}};
  SUBCASE("generation is deterministic per seed") {
    const SceneSample a = generate_synthetic_scene(42, spec);
    const SceneSample b = generate_synthetic_scene(42, spec);
    CHECK(a.points.positions == b.points.positions);
    CHECK(a.points.intensity == b.points.intensity);
    CHECK(a.gt.labels == b.gt.labels);
    CHECK(a.input_occupancy.values == b.input_occupancy.values);
    const SceneSample c = generate_synthetic_scene(43, spec);
    CHECK(a.points.positions != c.points.positions);
  }
  SUBCASE("every sampled point lies on an occupied ground-truth voxel") {
    const SceneSample s = generate_synthetic_scene(7, spec);
    const VoxelizeResult vox = voxelize(s.points, spec);
    REQUIRE(vox.indices.size() == s.points.size());
    for (const VoxelIndex& v : vox.indices)
      CHECK(s.gt.labels[size_t(s.gt.index(v.x, v.y, v.z))] != 0);
  }
  SUBCASE("input occupancy is exactly the voxelization footprint") {
    const SceneSample s = generate_synthetic_scene(8, spec);
    BoolGrid expect = BoolGrid::zeros(spec.dims);
    for (const VoxelIndex& v : voxelize(s.points, spec).indices)
      expect.values[size_t(expect.index(v.x, v.y, v.z))] = 1;
    CHECK(s.input_occupancy.values == expect.values);
  }
  SUBCASE("occluded structure exists and matches the visibility recount") {
    const SceneSample s = generate_synthetic_scene(9, spec);
    BoolGrid gt_occ = BoolGrid::zeros(spec.dims);
    for (int64_t i = 0; i < s.gt.num_voxels(); ++i)
      gt_occ.values[size_t(i)] = s.gt.labels[size_t(i)] != 0;
    const auto sensor = default_sensor_position(spec);
    int64_t occluded_occupied = 0;
    for (int x = 0; x < spec.dims[0]; ++x)
      for (int y = 0; y < spec.dims[1]; ++y)
        for (int z = 0; z < spec.dims[2]; ++z) {
          const int64_t i = gt_occ.index(x, y, z);
          if (!gt_occ.values[size_t(i)]) {
            CHECK(s.input_occupancy.values[size_t(i)] == 0);
            continue;
          }
          const bool visible = voxel_visible(gt_occ, sensor, {x, y, z}, spec);
          if (!visible) {
            ++occluded_occupied;
            // occluded voxels receive no points
            CHECK(s.input_occupancy.values[size_t(i)] == 0);
          }
        }
    CHECK(occluded_occupied > 0);  // the completion signal exists
    CHECK(s.input_occupancy.count() < gt_occ.count());
  }
  SUBCASE("ground truth has no invalid voxels") {
    const SceneSample s = generate_synthetic_scene(10, spec);
    for (uint8_t v : s.gt.invalid) CHECK(v == 0);
  }
}

TEST_CASE("run configuration") {
  SUBCASE("defaults follow the training protocol") {
    const RunConfig cfg;
    CHECK(cfg.lr == 0.001);
    CHECK(cfg.beta1 == 0.9);
    CHECK(cfg.beta2 == 0.999);
    CHECK(cfg.loss_weight_bev == 3.0);
    CHECK(cfg.batch_size == 2);
  }
  SUBCASE("keys parse and unknown keys are rejected") {
    const RunConfig cfg = RunConfig::from_string(
        "# comment\n"
        "grid.l = 16\ngrid.w = 16\ngrid.h = 8\n"
        "grid.voxel_size = 0.1\n"
        "grid.origin = 0,-0.8,-0.4\n"
        "model.num_classes = 4\n"
        "model.sem_widths = 6,8,8\n"
        "train.lr = 0.01\n"
        "train.epochs = 3\n"
        "train.flip = false\n"
        "data.remap = 0:0,10:1,44:2\n");
    CHECK(cfg.model.grid.dims == std::array<int, 3>{16, 16, 8});
    CHECK(cfg.model.num_classes == 4);
    CHECK(cfg.model.sem_widths == std::array<int, 3>{6, 8, 8});
    CHECK(cfg.lr == 0.01);
    CHECK(cfg.epochs == 3);
    CHECK_FALSE(cfg.flip_augmentation);
    CHECK(cfg.remap.at(44) == 2);
    CHECK_THROWS_WITH_AS(RunConfig::from_string("train.typo = 1\n"),
                         doctest::Contains("train.typo"), std::invalid_argument);
    CHECK_THROWS(RunConfig::from_string("train.lr 0.1\n"));
  }
}

TEST_CASE("dataset round trip") {
  TempDir dir;
  RunConfig cfg;
  cfg.model.grid = VoxelGridSpec{{0.0, -1.6, -0.8}, 0.2, {16, 16, 8}};
  cfg.model.num_classes = 4;
  Dataset ds;
  ds.grid = cfg.model.grid;
  for (int i = 0; i < 3; ++i)
    ds.samples.push_back(generate_synthetic_scene(100 + uint64_t(i), ds.grid));
  write_dataset(dir.path.string(), ds, cfg.remap);
  const Dataset back = load_dataset(dir.path.string(), cfg);
  REQUIRE(back.samples.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back.samples[i].points.positions == ds.samples[i].points.positions);
    CHECK(back.samples[i].gt.labels == ds.samples[i].gt.labels);
    CHECK(back.samples[i].input_occupancy.values == ds.samples[i].input_occupancy.values);
  }
  // mismatched grid is rejected before any training could start
  RunConfig other = cfg;
  other.model.grid.dims = {32, 32, 8};
  CHECK_THROWS(load_dataset(dir.path.string(), other));
}
