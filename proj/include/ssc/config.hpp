#pragma once
#include <cstdint>
#include <map>
#include <string>

#include "ssc/network.hpp"

namespace ssc {

// Flat dotted-key configuration; unknown keys are rejected so typos cannot
// silently fall back to defaults.
struct RunConfig {
  ModelConfig model;

  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 10;
  int batch_size = 2;
  uint64_t seed = 1;
  bool flip_augmentation = true;
  bool multi_scale_supervision = true;
  double loss_weight_bev = 3.0;
  std::map<uint16_t, uint16_t> remap;  // empty = identity

  static RunConfig from_file(const std::string& path);
  static RunConfig from_string(const std::string& text);
  void set(const std::string& key, const std::string& value);
  std::string to_string() const;
};

}  // namespace ssc
