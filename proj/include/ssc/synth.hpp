#pragma once
#include <string>

#include "ssc/geometry.hpp"

namespace ssc {

// Synthetic class ids used by the generator.
enum SynthClass : uint16_t {
  kEmpty = 0,
  kGround = 1,
  kBoxA = 2,
  kBoxB = 3,
  kPole = 4,
};
constexpr int kSynthClassCount = 4;

struct SceneSample {
  PointCloud points;
  BoolGrid input_occupancy;  // voxelization footprint of points
  LabelGrid gt;
  std::string id;
};

std::array<double, 3> default_sensor_position(const VoxelGridSpec& spec);

// True when no occupied voxel lies strictly between the sensor and the
// target voxel center (3D DDA walk).
bool voxel_visible(const BoolGrid& occupancy, const std::array<double, 3>& sensor,
                   const VoxelIndex& target, const VoxelGridSpec& spec);

// Procedural scene: a ground layer, 1..6 solid boxes of two classes and
// 0..4 poles. Points are sampled only on voxels visible from the sensor,
// with per-point jitter below half a voxel, so occluded structure exists in
// the ground truth but not in the input.
SceneSample generate_synthetic_scene(uint64_t seed, const VoxelGridSpec& spec);

}  // namespace ssc
