#include "ssc/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssc {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (...) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(trim(item));
  return parts;
}

template <size_t N>
void parse_int_list(const std::string& key, const std::string& v, std::array<int, N>* out) {
  const auto parts = split(v, ',');
  if (parts.size() != N)
    throw std::invalid_argument("config: " + key + " needs " + std::to_string(N) +
                                " comma-separated values");
  for (size_t i = 0; i < N; ++i) (*out)[i] = int(parse_int(key, parts[i]));
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "grid.l") model.grid.dims[0] = int(parse_int(key, value));
  else if (key == "grid.w") model.grid.dims[1] = int(parse_int(key, value));
  else if (key == "grid.h") model.grid.dims[2] = int(parse_int(key, value));
  else if (key == "grid.voxel_size") model.grid.voxel_size = parse_double(key, value);
  else if (key == "grid.origin") {
    const auto parts = split(value, ',');
    if (parts.size() != 3) throw std::invalid_argument("config: grid.origin needs 3 values");
    for (size_t i = 0; i < 3; ++i) model.grid.origin[i] = parse_double(key, parts[i]);
  } else if (key == "model.num_classes") model.num_classes = int(parse_int(key, value));
  else if (key == "model.voxel_feature_width") model.voxel_feature_width = int(parse_int(key, value));
  else if (key == "model.sem_widths") parse_int_list(key, value, &model.sem_widths);
  else if (key == "model.com_widths") parse_int_list(key, value, &model.com_widths);
  else if (key == "model.bev_widths") parse_int_list(key, value, &model.bev_widths);
  else if (key == "model.decoder_widths") parse_int_list(key, value, &model.decoder_widths);
  else if (key == "model.arf_reduction") model.arf_reduction = int(parse_int(key, value));
  else if (key == "model.use_semantic_branch") model.use_semantic_branch = parse_bool(key, value);
  else if (key == "train.lr") lr = parse_double(key, value);
  else if (key == "train.beta1") beta1 = parse_double(key, value);
  else if (key == "train.beta2") beta2 = parse_double(key, value);
  else if (key == "train.epsilon") epsilon = parse_double(key, value);
  else if (key == "train.epochs") epochs = int(parse_int(key, value));
  else if (key == "train.batch_size") batch_size = int(parse_int(key, value));
  else if (key == "train.seed") {
    seed = uint64_t(parse_int(key, value));
    model.init_seed = seed;
  } else if (key == "train.flip") flip_augmentation = parse_bool(key, value);
  else if (key == "train.multi_scale_supervision") multi_scale_supervision = parse_bool(key, value);
  else if (key == "train.loss_weight_bev") loss_weight_bev = parse_double(key, value);
  else if (key == "data.remap") {
    remap.clear();
    if (trim(value).empty()) return;
    for (const auto& pair : split(value, ',')) {
      const auto kv = split(pair, ':');
      if (kv.size() != 2)
        throw std::invalid_argument("config: data.remap entries must be raw:mapped");
      remap[uint16_t(parse_int(key, kv[0]))] = uint16_t(parse_int(key, kv[1]));
    }
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

RunConfig RunConfig::from_string(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not 'key = value'");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  cfg.model.validate();
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

std::string RunConfig::to_string() const {
  std::ostringstream out;
  out << "grid.l = " << model.grid.dims[0] << "\n";
  out << "grid.w = " << model.grid.dims[1] << "\n";
  out << "grid.h = " << model.grid.dims[2] << "\n";
  out << "grid.voxel_size = " << model.grid.voxel_size << "\n";
  out << "grid.origin = " << model.grid.origin[0] << "," << model.grid.origin[1] << ","
      << model.grid.origin[2] << "\n";
  out << "model.num_classes = " << model.num_classes << "\n";
  out << "train.lr = " << lr << "\n";
  out << "train.epochs = " << epochs << "\n";
  out << "train.batch_size = " << batch_size << "\n";
  out << "train.seed = " << seed << "\n";
  return out.str();
}

}  // namespace ssc
