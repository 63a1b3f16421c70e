#pragma once
#include <array>
#include <cstdint>
#include <vector>

namespace ssc {

// Metric-to-index mapping of a voxel grid: minimum corner, cell size and
// integer dimensions (L, W, H). Axis 0 is x, axis 1 is y, axis 2 is the
// vertical z axis.
struct VoxelGridSpec {
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  double voxel_size = 0.2;
  std::array<int, 3> dims{1, 1, 1};  // (L, W, H)

  void validate() const;
  int64_t num_voxels() const {
    return int64_t(dims[0]) * dims[1] * dims[2];
  }
  double extent(int axis) const { return dims[axis] * voxel_size; }
  std::array<double, 3> voxel_center(int x, int y, int z) const {
    return {origin[0] + (x + 0.5) * voxel_size,
            origin[1] + (y + 0.5) * voxel_size,
            origin[2] + (z + 0.5) * voxel_size};
  }
};

struct PointCloud {
  std::vector<std::array<float, 3>> positions;  // meters
  std::vector<float> intensity;                 // [0, 1]

  size_t size() const { return positions.size(); }
};

struct VoxelIndex {
  int x = 0, y = 0, z = 0;
  bool operator==(const VoxelIndex&) const = default;
};

// Per-voxel class ids (0 = empty, 1..C = semantic) plus an invalid mask of
// voxels excluded from losses and evaluation. Linear order is x-major:
// index = (x*W + y)*H + z.
struct LabelGrid {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<uint16_t> labels;
  std::vector<uint8_t> invalid;

  static LabelGrid empty(std::array<int, 3> dims);
  int64_t index(int x, int y, int z) const {
    return (int64_t(x) * dims[1] + y) * dims[2] + z;
  }
  int64_t num_voxels() const {
    return int64_t(dims[0]) * dims[1] * dims[2];
  }
};

// Dense boolean grid sharing LabelGrid's linear order; used for occupancy.
struct BoolGrid {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<uint8_t> values;

  static BoolGrid zeros(std::array<int, 3> dims);
  int64_t index(int x, int y, int z) const {
    return (int64_t(x) * dims[1] + y) * dims[2] + z;
  }
  int64_t count() const;
};

struct VoxelizeResult {
  std::vector<VoxelIndex> indices;   // one entry per in-range point, in order
  std::vector<uint8_t> in_range;     // mask over all N input points
};

// Half-open binning: index = floor((p - origin) / s); points at or beyond
// origin + dims*s are masked out.
VoxelizeResult voxelize(const PointCloud& points, const VoxelGridSpec& spec);

// Per in-range point: [x, y, z, dx, dy, dz, intensity] where d* is the
// offset from the center of the point's voxel, each in [-s/2, s/2).
// Rows align with VoxelizeResult::indices.
std::vector<float> build_point_features(const PointCloud& points,
                                        const VoxelGridSpec& spec);

// BEV column key; z is dropped. Bijective with (x, y).
inline int64_t bev_key(const VoxelIndex& v, const VoxelGridSpec& spec) {
  return int64_t(v.x) * spec.dims[1] + v.y;
}

// Majority vote over each factor^3 block among labels that are non-empty and
// not invalid; ties go to the smallest class id; all-empty blocks stay 0.
// The output voxel is invalid iff the block has non-empty voxels and all of
// them are invalid.
LabelGrid downsample_labels(const LabelGrid& grid, int factor);

// Logical OR over each factor^3 block.
BoolGrid downsample_occupancy(const BoolGrid& occ, int factor);

PointCloud flip_points(const PointCloud& points, const VoxelGridSpec& spec,
                       bool flip_x, bool flip_y);
LabelGrid flip_label_grid(const LabelGrid& grid, bool flip_x, bool flip_y);
BoolGrid flip_bool_grid(const BoolGrid& grid, bool flip_x, bool flip_y);

struct FlipResult {
  PointCloud points;
  std::vector<LabelGrid> grids;
  bool flipped_x = false;
  bool flipped_y = false;
};

// Independently reflects x and/or y (probability 0.5 each, seeded) about the
// grid midplanes; points and grids are transformed consistently.
FlipResult random_flip(const PointCloud& points,
                       const std::vector<LabelGrid>& grids,
                       const VoxelGridSpec& spec, uint64_t seed);

}  // namespace ssc
