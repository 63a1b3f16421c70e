#include "ssc/synth.hpp"

#include <algorithm>
#include <cmath>

#include "ssc/rng.hpp"

namespace ssc {

std::array<double, 3> default_sensor_position(const VoxelGridSpec& spec) {
  // centered in the plane, near the top of the grid
  return spec.voxel_center(spec.dims[0] / 2, spec.dims[1] / 2,
                           std::max(spec.dims[2] - 2, 0));
}

namespace {

bool probe_visible(const BoolGrid& occupancy, const std::array<double, 3>& sensor,
                   const VoxelIndex& target, const VoxelGridSpec& spec,
                   const std::array<double, 3>& goal) {
  // Amanatides-Woo traversal from the sensor towards the probe point
  double dir[3], pos[3];
  double len = 0.0;
  for (int k = 0; k < 3; ++k) {
    pos[k] = sensor[size_t(k)];
    dir[k] = goal[size_t(k)] - sensor[size_t(k)];
    len += dir[k] * dir[k];
  }
  len = std::sqrt(len);
  if (len == 0.0) return true;
  for (double& d : dir) d /= len;

  int cell[3];
  for (int k = 0; k < 3; ++k) {
    cell[k] = int(std::floor((pos[k] - spec.origin[size_t(k)]) / spec.voxel_size));
    cell[k] = std::clamp(cell[k], 0, spec.dims[size_t(k)] - 1);
  }
  int step[3];
  double t_max[3], t_delta[3];
  for (int k = 0; k < 3; ++k) {
    if (dir[k] > 0) {
      step[k] = 1;
      const double edge = spec.origin[size_t(k)] + (cell[k] + 1) * spec.voxel_size;
      t_max[k] = (edge - pos[k]) / dir[k];
      t_delta[k] = spec.voxel_size / dir[k];
    } else if (dir[k] < 0) {
      step[k] = -1;
      const double edge = spec.origin[size_t(k)] + cell[k] * spec.voxel_size;
      t_max[k] = (edge - pos[k]) / dir[k];
      t_delta[k] = -spec.voxel_size / dir[k];
    } else {
      step[k] = 0;
      t_max[k] = std::numeric_limits<double>::infinity();
      t_delta[k] = std::numeric_limits<double>::infinity();
    }
  }

  while (true) {
    if (cell[0] == target.x && cell[1] == target.y && cell[2] == target.z) return true;
    const int axis = t_max[0] <= t_max[1] ? (t_max[0] <= t_max[2] ? 0 : 2)
                                          : (t_max[1] <= t_max[2] ? 1 : 2);
    if (t_max[axis] > len) return true;  // ran past the target without blockers
    cell[axis] += step[axis];
    t_max[axis] += t_delta[axis];
    if (cell[axis] < 0 || cell[axis] >= spec.dims[size_t(axis)]) return true;
    if (cell[0] == target.x && cell[1] == target.y && cell[2] == target.z) return true;
    if (occupancy.values[size_t(occupancy.index(cell[0], cell[1], cell[2]))])
      return false;
  }
}

}  // namespace

bool voxel_visible(const BoolGrid& occupancy, const std::array<double, 3>& sensor,
                   const VoxelIndex& target, const VoxelGridSpec& spec) {
  // Probe the center and the near-top of the voxel: grazing rays reach the
  // upper face of flat structure (ground) long after the center line is
  // shadowed by the neighboring cell.
  auto goal = spec.voxel_center(target.x, target.y, target.z);
  if (probe_visible(occupancy, sensor, target, spec, goal)) return true;
  goal[2] += 0.49 * spec.voxel_size;
  return probe_visible(occupancy, sensor, target, spec, goal);
}

namespace {

struct Box {
  int x0, y0, z0, x1, y1, z1;  // half-open
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

}  // namespace

SceneSample generate_synthetic_scene(uint64_t seed, const VoxelGridSpec& spec) {
  spec.validate();
  Rng rng(seed);
  const int l = spec.dims[0], w = spec.dims[1], h = spec.dims[2];

  SceneSample sample;
  sample.id = "scene-" + std::to_string(seed);
  sample.gt = LabelGrid::empty(spec.dims);

  // ground layer
  for (int x = 0; x < l; ++x)
    for (int y = 0; y < w; ++y)
      sample.gt.labels[size_t(sample.gt.index(x, y, 0))] = kGround;

  // keep the sensor column free of structure
  const int cx = l / 2, cy = w / 2;

  const int num_boxes = 1 + int(rng.uniform_int(6));
  std::vector<Box> boxes;
  for (int b = 0; b < num_boxes; ++b) {
    for (int attempt = 0; attempt < 10; ++attempt) {
      const int sx = 2 + int(rng.uniform_int(std::max(2, l / 8)));
      const int sy = 2 + int(rng.uniform_int(std::max(2, w / 8)));
      const int sz = 2 + int(rng.uniform_int(std::max(1, h - 3)));
      const int x0 = int(rng.uniform_int(std::max(1, l - sx)));
      const int y0 = int(rng.uniform_int(std::max(1, w - sy)));
      Box box{x0, y0, 1, std::min(x0 + sx, l), std::min(y0 + sy, w),
              std::min(1 + sz, h - 1)};
      if (box.contains(cx, cy)) continue;
      const uint16_t cls = rng.coin() ? kBoxA : kBoxB;
      for (int x = box.x0; x < box.x1; ++x)
        for (int y = box.y0; y < box.y1; ++y)
          for (int z = box.z0; z < box.z1; ++z)
            sample.gt.labels[size_t(sample.gt.index(x, y, z))] = cls;
      boxes.push_back(box);
      break;
    }
  }

  const int num_poles = int(rng.uniform_int(5));
  for (int p = 0; p < num_poles; ++p) {
    for (int attempt = 0; attempt < 10; ++attempt) {
      const int x = int(rng.uniform_int(l));
      const int y = int(rng.uniform_int(w));
      if (x == cx && y == cy) continue;
      const int top = 2 + int(rng.uniform_int(std::max(1, h - 2)));
      bool blocked = false;
      for (int z = 1; z < std::min(top, h); ++z)
        if (sample.gt.labels[size_t(sample.gt.index(x, y, z))] != kEmpty) blocked = true;
      if (blocked) continue;
      for (int z = 1; z < std::min(top, h); ++z)
        sample.gt.labels[size_t(sample.gt.index(x, y, z))] = kPole;
      break;
    }
  }

  // occupancy of the full ground truth, used for the visibility walk
  BoolGrid gt_occ = BoolGrid::zeros(spec.dims);
  for (int64_t i = 0; i < sample.gt.num_voxels(); ++i)
    gt_occ.values[size_t(i)] = sample.gt.labels[size_t(i)] != kEmpty;

  const std::array<double, 3> sensor = default_sensor_position(spec);
  for (int x = 0; x < l; ++x)
    for (int y = 0; y < w; ++y)
      for (int z = 0; z < h; ++z) {
        if (!gt_occ.values[size_t(gt_occ.index(x, y, z))]) continue;
        if (!voxel_visible(gt_occ, sensor, {x, y, z}, spec)) continue;
        const auto center = spec.voxel_center(x, y, z);
        const uint16_t cls = sample.gt.labels[size_t(sample.gt.index(x, y, z))];
        const int npts = 1 + int(rng.uniform_int(2));
        for (int p = 0; p < npts; ++p) {
          std::array<float, 3> pos;
          for (int k = 0; k < 3; ++k)
            pos[size_t(k)] = float(center[size_t(k)] +
                                   rng.uniform(-0.45, 0.45) * spec.voxel_size);
          sample.points.positions.push_back(pos);
          const double base = 0.2 * double(cls) - 0.1;
          sample.points.intensity.push_back(
              float(std::clamp(base + 0.05 * rng.uniform(), 0.0, 1.0)));
        }
      }

  sample.input_occupancy = BoolGrid::zeros(spec.dims);
  const VoxelizeResult vox = voxelize(sample.points, spec);
  for (const VoxelIndex& v : vox.indices)
    sample.input_occupancy.values[size_t(sample.input_occupancy.index(v.x, v.y, v.z))] = 1;

  return sample;
}

}  // namespace ssc
