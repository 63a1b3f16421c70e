#include "ssc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "ssc/rng.hpp"

namespace ssc {

void VoxelGridSpec::validate() const {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("voxel_size must be > 0");
  for (int k = 0; k < 3; ++k) {
    if (dims[k] < 1) throw std::invalid_argument("grid dims must be >= 1");
    if (!std::isfinite(origin[k])) throw std::invalid_argument("grid origin must be finite");
  }
}

LabelGrid LabelGrid::empty(std::array<int, 3> dims) {
  LabelGrid g;
  g.dims = dims;
  g.labels.assign(size_t(g.num_voxels()), 0);
  g.invalid.assign(size_t(g.num_voxels()), 0);
  return g;
}

BoolGrid BoolGrid::zeros(std::array<int, 3> dims) {
  BoolGrid g;
  g.dims = dims;
  g.values.assign(size_t(int64_t(dims[0]) * dims[1] * dims[2]), 0);
  return g;
}

int64_t BoolGrid::count() const {
  int64_t n = 0;
  for (uint8_t v : values) n += v != 0;
  return n;
}

namespace {

// Coordinates that are meant to sit exactly on a bin boundary arrive a few
// ulps off after float storage; snap them back before flooring so the
// half-open rule applies to the intended value. 1e-4 of a voxel is tens of
// micrometers, far below any physical point precision.
constexpr double kBinGuard = 1e-4;

inline bool bin_index(double p, double origin, double s, int dim, int* out) {
  double t = (p - origin) / s;
  const double r = std::round(t);
  if (std::abs(t - r) < kBinGuard) t = r;
  const double f = std::floor(t);
  if (f < 0.0 || f >= double(dim)) return false;
  *out = int(f);
  return true;
}

}  // namespace

VoxelizeResult voxelize(const PointCloud& points, const VoxelGridSpec& spec) {
  spec.validate();
  const size_t n = points.size();
  VoxelizeResult result;
  result.in_range.assign(n, 0);
  result.indices.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const auto& p = points.positions[i];
    VoxelIndex v;
    if (bin_index(p[0], spec.origin[0], spec.voxel_size, spec.dims[0], &v.x) &&
        bin_index(p[1], spec.origin[1], spec.voxel_size, spec.dims[1], &v.y) &&
        bin_index(p[2], spec.origin[2], spec.voxel_size, spec.dims[2], &v.z)) {
      result.in_range[i] = 1;
      result.indices.push_back(v);
    }
  }
  return result;
}

std::vector<float> build_point_features(const PointCloud& points,
                                        const VoxelGridSpec& spec) {
  const VoxelizeResult vox = voxelize(points, spec);
  std::vector<float> features;
  features.reserve(vox.indices.size() * 7);
  size_t row = 0;
  for (size_t i = 0; i < points.size(); ++i) {
    if (!vox.in_range[i]) continue;
    const auto& p = points.positions[i];
    const VoxelIndex v = vox.indices[row++];
    const auto c = spec.voxel_center(v.x, v.y, v.z);
    features.push_back(p[0]);
    features.push_back(p[1]);
    features.push_back(p[2]);
    features.push_back(float(p[0] - c[0]));
    features.push_back(float(p[1] - c[1]));
    features.push_back(float(p[2] - c[2]));
    features.push_back(points.intensity.empty() ? 0.f : points.intensity[i]);
  }
  return features;
}

LabelGrid downsample_labels(const LabelGrid& grid, int factor) {
  if (factor < 1) throw std::invalid_argument("factor must be >= 1");
  for (int k = 0; k < 3; ++k)
    if (grid.dims[k] % factor != 0)
      throw std::invalid_argument("grid dims not divisible by downsample factor");

  LabelGrid out = LabelGrid::empty(
      {grid.dims[0] / factor, grid.dims[1] / factor, grid.dims[2] / factor});

  for (int x = 0; x < out.dims[0]; ++x) {
    for (int y = 0; y < out.dims[1]; ++y) {
      for (int z = 0; z < out.dims[2]; ++z) {
        std::map<uint16_t, int> votes;  // ordered: ties resolve to smallest id
        int occupied = 0, occupied_invalid = 0;
        for (int dx = 0; dx < factor; ++dx)
          for (int dy = 0; dy < factor; ++dy)
            for (int dz = 0; dz < factor; ++dz) {
              const int64_t i =
                  grid.index(x * factor + dx, y * factor + dy, z * factor + dz);
              const uint16_t label = grid.labels[i];
              if (label == 0) continue;
              ++occupied;
              if (grid.invalid[i]) {
                ++occupied_invalid;
                continue;
              }
              ++votes[label];
            }
        const int64_t o = out.index(x, y, z);
        if (!votes.empty()) {
          uint16_t best = 0;
          int best_count = -1;
          for (const auto& [label, count] : votes) {
            if (count > best_count) {  // strict: first (smallest) id wins ties
              best = label;
              best_count = count;
            }
          }
          out.labels[o] = best;
        }
        out.invalid[o] = (occupied > 0 && occupied_invalid == occupied) ? 1 : 0;
      }
    }
  }
  return out;
}

BoolGrid downsample_occupancy(const BoolGrid& occ, int factor) {
  if (factor < 1) throw std::invalid_argument("factor must be >= 1");
  for (int k = 0; k < 3; ++k)
    if (occ.dims[k] % factor != 0)
      throw std::invalid_argument("grid dims not divisible by downsample factor");

  BoolGrid out = BoolGrid::zeros(
      {occ.dims[0] / factor, occ.dims[1] / factor, occ.dims[2] / factor});
  for (int x = 0; x < occ.dims[0]; ++x)
    for (int y = 0; y < occ.dims[1]; ++y)
      for (int z = 0; z < occ.dims[2]; ++z)
        if (occ.values[occ.index(x, y, z)])
          out.values[out.index(x / factor, y / factor, z / factor)] = 1;
  return out;
}

PointCloud flip_points(const PointCloud& points, const VoxelGridSpec& spec,
                       bool flip_x, bool flip_y) {
  PointCloud out = points;
  const double mx = 2.0 * spec.origin[0] + spec.extent(0);  // 2 * midplane
  const double my = 2.0 * spec.origin[1] + spec.extent(1);
  for (auto& p : out.positions) {
    if (flip_x) p[0] = float(mx - p[0]);
    if (flip_y) p[1] = float(my - p[1]);
  }
  return out;
}

LabelGrid flip_label_grid(const LabelGrid& grid, bool flip_x, bool flip_y) {
  LabelGrid out = LabelGrid::empty(grid.dims);
  for (int x = 0; x < grid.dims[0]; ++x) {
    const int sx = flip_x ? grid.dims[0] - 1 - x : x;
    for (int y = 0; y < grid.dims[1]; ++y) {
      const int sy = flip_y ? grid.dims[1] - 1 - y : y;
      for (int z = 0; z < grid.dims[2]; ++z) {
        out.labels[out.index(x, y, z)] = grid.labels[grid.index(sx, sy, z)];
        out.invalid[out.index(x, y, z)] = grid.invalid[grid.index(sx, sy, z)];
      }
    }
  }
  return out;
}

BoolGrid flip_bool_grid(const BoolGrid& grid, bool flip_x, bool flip_y) {
  BoolGrid out = BoolGrid::zeros(grid.dims);
  for (int x = 0; x < grid.dims[0]; ++x) {
    const int sx = flip_x ? grid.dims[0] - 1 - x : x;
    for (int y = 0; y < grid.dims[1]; ++y) {
      const int sy = flip_y ? grid.dims[1] - 1 - y : y;
      for (int z = 0; z < grid.dims[2]; ++z)
        out.values[out.index(x, y, z)] = grid.values[grid.index(sx, sy, z)];
    }
  }
  return out;
}

FlipResult random_flip(const PointCloud& points,
                       const std::vector<LabelGrid>& grids,
                       const VoxelGridSpec& spec, uint64_t seed) {
  Rng rng(seed);
  FlipResult result;
  result.flipped_x = rng.coin();
  result.flipped_y = rng.coin();
  result.points = flip_points(points, spec, result.flipped_x, result.flipped_y);
  result.grids.reserve(grids.size());
  for (const auto& g : grids)
    result.grids.push_back(flip_label_grid(g, result.flipped_x, result.flipped_y));
  return result;
}

}  // namespace ssc
