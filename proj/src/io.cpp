#include "ssc/io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace ssc {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  if (!out) throw IoError("short write: " + path);
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v & 0xFF));
  out.push_back(uint8_t(v >> 8));
}
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t((v >> (8 * i)) & 0xFF));
}
void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t((v >> (8 * i)) & 0xFF));
}
void put_f32(std::vector<uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > bytes.size()) throw IoError("truncated file: " + path);
  }
  uint16_t u16() {
    need(2);
    const uint16_t v = uint16_t(bytes[pos] | (uint16_t(bytes[pos + 1]) << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(bytes[pos + size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(bytes[pos + size_t(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
};

}  // namespace

PointCloud read_points(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  if (bytes.size() % 16 != 0)
    throw IoError("point file length not divisible by 16 bytes: " + path);
  Reader r{bytes, 0, path};
  PointCloud pc;
  const size_t n = bytes.size() / 16;
  pc.positions.reserve(n);
  pc.intensity.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    std::array<float, 3> p{r.f32(), r.f32(), r.f32()};
    pc.positions.push_back(p);
    pc.intensity.push_back(r.f32());
  }
  return pc;
}

void write_points(const PointCloud& points, const std::string& path) {
  std::vector<uint8_t> bytes;
  bytes.reserve(points.size() * 16);
  for (size_t i = 0; i < points.size(); ++i) {
    put_f32(bytes, points.positions[i][0]);
    put_f32(bytes, points.positions[i][1]);
    put_f32(bytes, points.positions[i][2]);
    put_f32(bytes, points.intensity.empty() ? 0.f : points.intensity[i]);
  }
  write_file(path, bytes);
}

std::vector<uint8_t> read_packed_bits(const std::string& path, int64_t expected_count) {
  const std::vector<uint8_t> bytes = read_file(path);
  if (expected_count % 8 != 0)
    throw IoError("packed bit count must be divisible by 8: " + path);
  if (int64_t(bytes.size()) != expected_count / 8)
    throw IoError("packed bit file size mismatch: " + path + " (expected " +
                  std::to_string(expected_count / 8) + " bytes, got " +
                  std::to_string(bytes.size()) + ")");
  std::vector<uint8_t> bits(static_cast<size_t>(expected_count), 0);
  for (int64_t i = 0; i < expected_count; ++i)
    bits[size_t(i)] = (bytes[size_t(i / 8)] >> (7 - i % 8)) & 1;
  return bits;
}

void write_packed_bits(const std::vector<uint8_t>& bits, const std::string& path) {
  if (bits.size() % 8 != 0)
    throw IoError("packed bit count must be divisible by 8: " + path);
  std::vector<uint8_t> bytes(bits.size() / 8, 0);
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) bytes[i / 8] |= uint8_t(1u << (7 - i % 8));
  write_file(path, bytes);
}

namespace {
std::string invalid_companion_path(const std::string& path) {
  const std::string ext = ".label";
  if (path.size() > ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0)
    return path.substr(0, path.size() - ext.size()) + ".invalid";
  return path + ".invalid";
}
}  // namespace

LabelGrid read_voxel_labels(const std::string& path, std::array<int, 3> dims,
                            const std::map<uint16_t, uint16_t>& remap, int max_class) {
  const std::vector<uint8_t> bytes = read_file(path);
  LabelGrid grid = LabelGrid::empty(dims);
  if (int64_t(bytes.size()) != grid.num_voxels() * 2)
    throw IoError("label file size mismatch: " + path);
  Reader r{bytes, 0, path};
  for (int64_t i = 0; i < grid.num_voxels(); ++i) {
    const uint16_t raw = r.u16();
    uint16_t mapped;
    if (remap.empty()) {
      mapped = raw;
    } else {
      auto it = remap.find(raw);
      if (it == remap.end())
        throw IoError("unmapped label id " + std::to_string(raw) + " in " + path);
      mapped = it->second;
    }
    if (int(mapped) > max_class)
      throw IoError("label id " + std::to_string(mapped) + " exceeds class count in " + path);
    grid.labels[size_t(i)] = mapped;
  }
  const std::string inv_path = invalid_companion_path(path);
  if (std::filesystem::exists(inv_path))
    grid.invalid = read_packed_bits(inv_path, grid.num_voxels());
  return grid;
}

void write_predictions(const LabelGrid& grid, const std::string& path,
                       const std::map<uint16_t, uint16_t>& remap) {
  std::map<uint16_t, uint16_t> inverse;
  for (const auto& [raw, mapped] : remap) {
    if (!inverse.emplace(mapped, raw).second)
      throw IoError("remap table is not invertible at id " + std::to_string(mapped));
  }
  std::vector<uint8_t> bytes;
  bytes.reserve(size_t(grid.num_voxels()) * 2);
  for (int64_t i = 0; i < grid.num_voxels(); ++i) {
    uint16_t out = grid.labels[size_t(i)];
    if (!inverse.empty()) {
      auto it = inverse.find(out);
      if (it == inverse.end())
        throw IoError("class id " + std::to_string(out) + " has no inverse mapping");
      out = it->second;
    }
    put_u16(bytes, out);
  }
  write_file(path, bytes);
}

void checkpoint_write(const std::vector<NamedTensor>& tensors, const std::string& path) {
  std::vector<uint8_t> bytes;
  bytes.push_back('S');
  bytes.push_back('S');
  bytes.push_back('C');
  bytes.push_back('R');
  put_u32(bytes, 1);
  put_u32(bytes, uint32_t(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw IoError("tensor name too long: " + t.name);
    put_u16(bytes, uint16_t(t.name.size()));
    for (char c : t.name) bytes.push_back(uint8_t(c));
    bytes.push_back(uint8_t(t.shape.size()));
    int64_t numel = 1;
    for (int d : t.shape) {
      put_u64(bytes, uint64_t(d));
      numel *= d;
    }
    if (numel != int64_t(t.values.size()))
      throw IoError("tensor payload does not match shape: " + t.name);
    for (float v : t.values) put_f32(bytes, v);
  }
  write_file(path, bytes);
}

std::vector<NamedTensor> checkpoint_read(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  Reader r{bytes, 0, path};
  r.need(4);
  if (bytes[0] != 'S' || bytes[1] != 'S' || bytes[2] != 'C' || bytes[3] != 'R')
    throw IoError("bad checkpoint magic: " + path);
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != 1)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  const uint32_t count = r.u32();
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const uint16_t name_len = r.u16();
    r.need(name_len);
    t.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
    r.pos += name_len;
    const uint8_t rank = r.u8();
    int64_t numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      const uint64_t dim = r.u64();
      if (dim == 0 || dim > (1ull << 32)) throw IoError("bad tensor dim in " + path);
      t.shape.push_back(int(dim));
      numel *= int64_t(dim);
    }
    t.values.resize(size_t(numel));
    for (int64_t v = 0; v < numel; ++v) t.values[size_t(v)] = r.f32();
    tensors.push_back(std::move(t));
  }
  if (r.pos != bytes.size()) throw IoError("trailing bytes in checkpoint: " + path);
  return tensors;
}

std::vector<NamedTensor> registry_to_tensors(const ParamRegistry<float>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.params.size());
  for (const auto& [name, t] : params.params)
    out.push_back({name, t.shape, *t.data});
  return out;
}

void tensors_to_registry(const std::vector<NamedTensor>& tensors,
                         ParamRegistry<float>& params) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors)
    if (t.name.rfind("opt.", 0) != 0) by_name[t.name] = &t;
  // lexicographic walk so the first offending tensor is deterministic
  for (auto& [name, p] : params.params) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw IoError("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape != p.shape)
      throw IoError("checkpoint shape mismatch for tensor '" + name + "'");
    *p.data = it->second->values;
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw IoError("checkpoint has unknown tensor '" + by_name.begin()->first + "'");
}

std::vector<NamedTensor> adam_to_tensors(const AdamState<float>& state) {
  std::vector<NamedTensor> out;
  out.push_back({"opt.step", {1}, {float(state.step_count)}});
  for (const auto& [name, m] : state.m)
    out.push_back({"opt.adam.m." + name, {int(m.size())}, m});
  for (const auto& [name, v] : state.v)
    out.push_back({"opt.adam.v." + name, {int(v.size())}, v});
  return out;
}

void tensors_to_adam(const std::vector<NamedTensor>& tensors, AdamState<float>& state) {
  state = AdamState<float>{};
  for (const auto& t : tensors) {
    if (t.name == "opt.step") state.step_count = int64_t(t.values.at(0));
    else if (t.name.rfind("opt.adam.m.", 0) == 0) state.m[t.name.substr(11)] = t.values;
    else if (t.name.rfind("opt.adam.v.", 0) == 0) state.v[t.name.substr(11)] = t.values;
  }
}

}  // namespace ssc
