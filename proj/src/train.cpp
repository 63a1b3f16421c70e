#include "ssc/train.hpp"

#include <cmath>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ssc/io.hpp"
#include "ssc/supervision.hpp"

namespace fs = std::filesystem;

namespace ssc {

namespace {

std::string sample_stem(int index) {
  std::ostringstream s;
  s << std::setw(4) << std::setfill('0') << index;
  return s.str();
}

std::string format_value(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

void write_dataset(const std::string& dir, const Dataset& dataset,
                   const std::map<uint16_t, uint16_t>& remap) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw IoError("cannot write manifest in " + dir);
  manifest << std::setprecision(17);
  manifest << "grid " << dataset.grid.dims[0] << " " << dataset.grid.dims[1] << " "
           << dataset.grid.dims[2] << " " << dataset.grid.voxel_size << " "
           << dataset.grid.origin[0] << " " << dataset.grid.origin[1] << " "
           << dataset.grid.origin[2] << "\n";
  manifest << "count " << dataset.samples.size() << "\n";
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    const std::string stem = sample_stem(int(i));
    const SceneSample& s = dataset.samples[i];
    const fs::path base = fs::path(dir) / stem;
    write_points(s.points, (base.string() + ".bin"));
    write_predictions(s.gt, base.string() + ".label", remap);
    write_packed_bits(s.gt.invalid, base.string() + ".invalid");
    write_packed_bits(s.input_occupancy.values, base.string() + ".occ");
    manifest << "sample " << stem << "\n";
  }
}

Dataset load_dataset(const std::string& dir, const RunConfig& cfg) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw IoError("cannot open manifest in " + dir);
  Dataset dataset;
  std::string line;
  std::vector<std::string> stems;
  size_t expected = 0;
  while (std::getline(manifest, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "grid") {
      ss >> dataset.grid.dims[0] >> dataset.grid.dims[1] >> dataset.grid.dims[2] >>
          dataset.grid.voxel_size >> dataset.grid.origin[0] >> dataset.grid.origin[1] >>
          dataset.grid.origin[2];
    } else if (tag == "count") {
      ss >> expected;
    } else if (tag == "sample") {
      std::string stem;
      ss >> stem;
      stems.push_back(stem);
    }
  }
  if (stems.size() != expected)
    throw IoError("manifest count does not match sample list in " + dir);
  if (dataset.grid.dims != cfg.model.grid.dims ||
      dataset.grid.voxel_size != cfg.model.grid.voxel_size)
    throw IoError("dataset grid does not match configured grid");
  for (int k = 0; k < 3; ++k)
    if (std::abs(dataset.grid.origin[size_t(k)] - cfg.model.grid.origin[size_t(k)]) > 1e-9)
      throw IoError("dataset grid origin does not match configured origin");

  for (const std::string& stem : stems) {
    const fs::path base = fs::path(dir) / stem;
    SceneSample s;
    s.id = stem;
    s.points = read_points(base.string() + ".bin");
    s.gt = read_voxel_labels(base.string() + ".label", dataset.grid.dims, cfg.remap,
                             cfg.model.num_classes);
    s.input_occupancy.dims = dataset.grid.dims;
    s.input_occupancy.values =
        read_packed_bits(base.string() + ".occ", s.gt.num_voxels());
    dataset.samples.push_back(std::move(s));
  }
  return dataset;
}

std::string metrics_to_text(const MetricsReport& report) {
  std::ostringstream out;
  for (const auto& [key, value] : report) out << key << " = " << format_value(value) << "\n";
  return out.str();
}

void load_checkpoint_into(SscModel<float>& model, const std::string& path,
                          AdamState<float>* adam, int* epoch) {
  const std::vector<NamedTensor> tensors = checkpoint_read(path);
  tensors_to_registry(tensors, model.params);
  if (adam) tensors_to_adam(tensors, *adam);
  if (epoch) {
    *epoch = 0;
    for (const auto& t : tensors)
      if (t.name == "opt.epoch") *epoch = int(t.values.at(0));
  }
}

namespace {

void save_checkpoint(const SscModel<float>& model, const AdamState<float>& adam,
                     int epoch, const std::string& path) {
  std::vector<NamedTensor> tensors = registry_to_tensors(model.params);
  const std::vector<NamedTensor> opt = adam_to_tensors(adam);
  tensors.insert(tensors.end(), opt.begin(), opt.end());
  tensors.push_back({"opt.epoch", {1}, {float(epoch)}});
  checkpoint_write(tensors, path);
}

struct PreparedScene {
  PointCloud points;
  BoolGrid occupancy;
  SceneTargets targets;
};

PreparedScene prepare_scene(const SceneSample& sample, const VoxelGridSpec& grid,
                            bool flip_x, bool flip_y) {
  PreparedScene p;
  p.points = flip_points(sample.points, grid, flip_x, flip_y);
  p.occupancy = flip_bool_grid(sample.input_occupancy, flip_x, flip_y);
  p.targets = build_scene_targets(flip_label_grid(sample.gt, flip_x, flip_y));
  return p;
}

}  // namespace

TrainResult train_model(const RunConfig& cfg, const Dataset& dataset,
                        const std::string& out_dir, const std::string& resume_path) {
  if (dataset.samples.empty()) throw std::invalid_argument("training dataset is empty");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  cfg.model.validate();
  for (const SceneSample& s : dataset.samples)
    if (s.gt.dims != cfg.model.grid.dims)
      throw std::invalid_argument("sample grid does not match model grid");

  fs::create_directories(out_dir);
  SscModel<float> model(cfg.model);
  AdamState<float> adam;
  int start_epoch = 0;
  if (!resume_path.empty()) load_checkpoint_into(model, resume_path, &adam, &start_epoch);

  AdamConfig<float> adam_cfg;
  adam_cfg.lr = float(cfg.lr);
  adam_cfg.beta1 = float(cfg.beta1);
  adam_cfg.beta2 = float(cfg.beta2);
  adam_cfg.eps = float(cfg.epsilon);

  const std::string log_path = (fs::path(out_dir) / "train.log").string();
  std::ofstream log(log_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write training log: " + log_path);

  TrainResult result;
  result.log_path = log_path;

  const int n = int(dataset.samples.size());
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng aug(cfg.seed * 0x9E3779B97F4A7C15ULL + uint64_t(epoch) + 1);
    double sum_bev = 0, sum_sem = 0, sum_com = 0;
    int steps = 0;
    for (int begin = 0; begin < n; begin += cfg.batch_size) {
      const int end = std::min(begin + cfg.batch_size, n);
      ModelInput input;
      std::vector<SceneTargets> targets;
      for (int i = begin; i < end; ++i) {
        const bool fx = cfg.flip_augmentation && aug.coin();
        const bool fy = cfg.flip_augmentation && aug.coin();
        PreparedScene p = prepare_scene(dataset.samples[size_t(i)], cfg.model.grid, fx, fy);
        input.points.push_back(std::move(p.points));
        input.occupancy.push_back(std::move(p.occupancy));
        targets.push_back(std::move(p.targets));
      }
      Tape<float> tape;
      model.params.track_all(tape);
      ForwardOutput<float> out =
          model.forward(&tape, input, cfg.multi_scale_supervision);
      std::vector<const SceneTargets*> target_ptrs;
      for (const auto& t : targets) target_ptrs.push_back(&t);
      BatchLoss<float> loss =
          compute_losses(&tape, out, target_ptrs, float(cfg.loss_weight_bev));
      tape.backward(loss.total);
      adam_step(model.params, adam, adam_cfg);
      sum_bev += loss.report.bev;
      sum_sem += loss.report.sem;
      sum_com += loss.report.com;
      ++steps;
    }
    LossReport epoch_report;
    epoch_report.bev = sum_bev / steps;
    epoch_report.sem = sum_sem / steps;
    epoch_report.com = sum_com / steps;
    epoch_report.total =
        cfg.loss_weight_bev * epoch_report.bev + epoch_report.sem + epoch_report.com;
    log << "epoch " << epoch << " bev " << format_value(epoch_report.bev) << " sem "
        << format_value(epoch_report.sem) << " com " << format_value(epoch_report.com)
        << " total " << format_value(epoch_report.total) << "\n";
    log.flush();
    result.last_epoch = epoch_report;
    save_checkpoint(model, adam, epoch + 1,
                    (fs::path(out_dir) / ("ckpt-" + std::to_string(epoch) + ".sscr")).string());
  }
  result.final_checkpoint = (fs::path(out_dir) / "model.sscr").string();
  save_checkpoint(model, adam, cfg.epochs, result.final_checkpoint);
  return result;
}

MetricsReport evaluate_model(SscModel<float>& model, const RunConfig& cfg,
                             const Dataset& dataset) {
  if (dataset.samples.empty()) throw std::invalid_argument("evaluation dataset is empty");
  ConfusionMatrix cm(cfg.model.num_classes + 1);
  double sum_bev = 0, sum_sem = 0, sum_com = 0, sum_total = 0;
  for (const SceneSample& sample : dataset.samples) {
    ModelInput input;
    input.points.push_back(sample.points);
    input.occupancy.push_back(sample.input_occupancy);
    const SceneTargets targets = build_scene_targets(sample.gt);
    ForwardOutput<float> out = model.forward(nullptr, input, true);
    BatchLoss<float> loss =
        compute_losses<float>(nullptr, out, {&targets}, float(cfg.loss_weight_bev));
    sum_bev += loss.report.bev;
    sum_sem += loss.report.sem;
    sum_com += loss.report.com;
    sum_total += loss.report.total;
    const LabelGrid pred = logits_to_labels(out.ssc_logits, 0, cfg.model.grid);
    cm.merge(accumulate_confusion(pred, sample.gt, cfg.model.num_classes));
  }
  const double n = double(dataset.samples.size());
  const EvalResult all = evaluate(cm, MeanMode::kAllClasses);
  const EvalResult present = evaluate(cm, MeanMode::kPresentOnly);

  MetricsReport report;
  report["iou"] = all.iou;
  report["miou"] = all.miou;
  report["miou_present"] = present.miou;
  report["precision"] = all.precision;
  report["recall"] = all.recall;
  for (size_t c = 0; c < all.per_class_iou.size(); ++c) {
    std::ostringstream key;
    key << "iou.class." << std::setw(2) << std::setfill('0') << (c + 1);
    report[key.str()] = all.per_class_iou[c];
  }
  report["loss.bev"] = sum_bev / n;
  report["loss.sem"] = sum_sem / n;
  report["loss.com"] = sum_com / n;
  report["loss.total"] = sum_total / n;
  report["params.total"] = double(model.param_count());
  report["params.semantic_branch"] = double(model.param_count("sem."));
  report["params.completion_branch"] = double(model.param_count("com."));
  report["params.bev_net"] = double(model.param_count("bev."));
  report["scenes"] = n;
  return report;
}

LabelGrid infer_points(SscModel<float>& model, const PointCloud& points) {
  ModelInput input;
  input.points.push_back(points);
  BoolGrid occ = BoolGrid::zeros(model.cfg.grid.dims);
  const VoxelizeResult vox = voxelize(points, model.cfg.grid);
  for (const VoxelIndex& v : vox.indices)
    occ.values[size_t(occ.index(v.x, v.y, v.z))] = 1;
  input.occupancy.push_back(std::move(occ));
  ForwardOutput<float> out = model.forward(nullptr, input, false);
  return logits_to_labels(out.ssc_logits, 0, model.cfg.grid);
}

}  // namespace ssc
