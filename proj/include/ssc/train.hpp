#pragma once
#include <map>
#include <string>

#include "ssc/config.hpp"
#include "ssc/losses.hpp"
#include "ssc/metrics.hpp"
#include "ssc/network.hpp"
#include "ssc/synth.hpp"

namespace ssc {

struct Dataset {
  VoxelGridSpec grid;
  std::vector<SceneSample> samples;
};

// On-disk dataset: per sample <id>.bin / <id>.label / <id>.invalid / <id>.occ
// plus manifest.txt carrying the grid and the sample ids.
void write_dataset(const std::string& dir, const Dataset& dataset,
                   const std::map<uint16_t, uint16_t>& remap);
Dataset load_dataset(const std::string& dir, const RunConfig& cfg);

// Stable sorted-key text report.
using MetricsReport = std::map<std::string, double>;
std::string metrics_to_text(const MetricsReport& report);

struct TrainResult {
  std::string final_checkpoint;  // <out_dir>/model.sscr
  std::string log_path;
  LossReport last_epoch;
};

// Deterministic Adam training with optional x-y flip augmentation; per-epoch
// loss lines go to <out_dir>/train.log, checkpoints to
// <out_dir>/ckpt-<epoch>.sscr and <out_dir>/model.sscr.
TrainResult train_model(const RunConfig& cfg, const Dataset& dataset,
                        const std::string& out_dir, const std::string& resume_path = "");

void load_checkpoint_into(SscModel<float>& model, const std::string& path,
                          AdamState<float>* adam = nullptr, int* epoch = nullptr);

// Aggregated metrics over the dataset plus mean losses and parameter counts.
MetricsReport evaluate_model(SscModel<float>& model, const RunConfig& cfg,
                             const Dataset& dataset);

LabelGrid infer_points(SscModel<float>& model, const PointCloud& points);

}  // namespace ssc
