#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssc/geometry.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

// Raised for malformed or inconsistent files.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Point file: consecutive little-endian float32 quadruples (x, y, z,
// intensity).
PointCloud read_points(const std::string& path);
void write_points(const PointCloud& points, const std::string& path);

// Packed bitmask: each byte expands to 8 voxels, most-significant bit first.
std::vector<uint8_t> read_packed_bits(const std::string& path, int64_t expected_count);
void write_packed_bits(const std::vector<uint8_t>& bits, const std::string& path);

// Voxel labels: little-endian uint16 per voxel in x-major order
// ((x*W + y)*H + z), remapped through `remap` (empty = identity, ids must
// stay within 0..max_class). A companion "<stem>.invalid" packed-bit file is
// attached when present.
LabelGrid read_voxel_labels(const std::string& path, std::array<int, 3> dims,
                            const std::map<uint16_t, uint16_t>& remap, int max_class);
// Inverse of read_voxel_labels under the inverse remap.
void write_predictions(const LabelGrid& grid, const std::string& path,
                       const std::map<uint16_t, uint16_t>& remap);

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

// Checkpoint layout, all integers little-endian: magic "SSCR", version
// u32 = 1, tensor count u32; per tensor: name length u16, UTF-8 name, rank
// u8, dims u64 each, float32 payload.
void checkpoint_write(const std::vector<NamedTensor>& tensors, const std::string& path);
std::vector<NamedTensor> checkpoint_read(const std::string& path);

// Serializes a registry (and optional Adam state under "opt.") to the
// checkpoint table.
std::vector<NamedTensor> registry_to_tensors(const ParamRegistry<float>& params);
void tensors_to_registry(const std::vector<NamedTensor>& tensors,
                         ParamRegistry<float>& params);

std::vector<NamedTensor> adam_to_tensors(const AdamState<float>& state);
void tensors_to_adam(const std::vector<NamedTensor>& tensors, AdamState<float>& state);

}  // namespace ssc
