#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "ssc/gradcheck.hpp"
#include "ssc/io.hpp"
#include "ssc/synth.hpp"
#include "ssc/train.hpp"

namespace fs = std::filesystem;

namespace {

// exit codes: 0 success, 1 usage error, 2 data error, 3 numerical-check failure
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct GridArg {
  int l = 64, w = 64, h = 8;
};

bool parse_grid(const std::string& text, GridArg* out) {
  return std::sscanf(text.c_str(), "%d,%d,%d", &out->l, &out->w, &out->h) == 3;
}

int cmd_synth(const std::string& out_dir, int count, uint64_t seed, const GridArg& grid,
              double voxel_size, const std::string& origin_text) {
  ssc::VoxelGridSpec spec;
  spec.dims = {grid.l, grid.w, grid.h};
  spec.voxel_size = voxel_size;
  spec.origin = {0.0, -0.5 * grid.w * voxel_size, -0.5 * grid.h * voxel_size};
  if (!origin_text.empty()) {
    if (std::sscanf(origin_text.c_str(), "%lf,%lf,%lf", &spec.origin[0], &spec.origin[1],
                    &spec.origin[2]) != 3) {
      std::cerr << "bad --origin, expected x,y,z\n";
      return kExitUsage;
    }
  }
  spec.validate();
  ssc::Dataset dataset;
  dataset.grid = spec;
  for (int i = 0; i < count; ++i)
    dataset.samples.push_back(ssc::generate_synthetic_scene(seed + uint64_t(i), spec));
  ssc::write_dataset(out_dir, dataset, {});
  std::cout << "wrote " << count << " scenes to " << out_dir << "\n";
  return kExitOk;
}

ssc::RunConfig load_config(const std::string& path) {
  if (path.empty()) return ssc::RunConfig{};
  return ssc::RunConfig::from_file(path);
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume) {
  const ssc::RunConfig cfg = load_config(config_path);
  const ssc::Dataset dataset = ssc::load_dataset(data_dir, cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const ssc::TrainResult result = ssc::train_model(cfg, dataset, out_dir, resume);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "trained " << cfg.epochs << " epochs in " << std::fixed
            << std::setprecision(1) << secs << "s, final total loss "
            << std::setprecision(6) << result.last_epoch.total << "\n"
            << "checkpoint: " << result.final_checkpoint << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt,
             const std::string& data_dir, const std::string& out_file) {
  const ssc::RunConfig cfg = load_config(config_path);
  const ssc::Dataset dataset = ssc::load_dataset(data_dir, cfg);
  ssc::SscModel<float> model(cfg.model);
  ssc::load_checkpoint_into(model, ckpt);
  const auto t0 = std::chrono::steady_clock::now();
  const ssc::MetricsReport report = ssc::evaluate_model(model, cfg, dataset);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream out(out_file, std::ios::trunc);
  if (!out) {
    std::cerr << "cannot write " << out_file << "\n";
    return kExitData;
  }
  out << ssc::metrics_to_text(report);
  std::cout << "evaluated " << dataset.samples.size() << " scenes in " << std::fixed
            << std::setprecision(1) << secs << "s (report: " << out_file << ")\n";
  return kExitOk;
}

int cmd_infer(const std::string& config_path, const std::string& ckpt,
              const std::string& points_path, const std::string& out_file,
              const std::string& csv_path) {
  const ssc::RunConfig cfg = load_config(config_path);
  ssc::SscModel<float> model(cfg.model);
  ssc::load_checkpoint_into(model, ckpt);
  const ssc::PointCloud points = ssc::read_points(points_path);
  const ssc::LabelGrid pred = ssc::infer_points(model, points);
  ssc::write_predictions(pred, out_file, cfg.remap);
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) {
      std::cerr << "cannot write " << csv_path << "\n";
      return kExitData;
    }
    csv << "x,y,z,class\n";
    for (int x = 0; x < pred.dims[0]; ++x)
      for (int y = 0; y < pred.dims[1]; ++y)
        for (int z = 0; z < pred.dims[2]; ++z) {
          const uint16_t c = pred.labels[size_t(pred.index(x, y, z))];
          if (c != 0) csv << x << "," << y << "," << z << "," << c << "\n";
        }
  }
  std::cout << "wrote predictions to " << out_file << "\n";
  return kExitOk;
}

int cmd_gradcheck(const std::string& scale) {
  if (scale != "tiny") {
    std::cerr << "only --scale tiny is available\n";
    return kExitUsage;
  }
  const double tolerance = 1e-5;
  const std::vector<ssc::GradCheckCase> results = ssc::run_gradcheck_suite(tolerance);
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << "op " << std::left << std::setw(24) << r.name << " rel_err "
              << std::scientific << std::setprecision(3) << r.rel_err << " "
              << (r.pass ? "PASS" : "FAIL") << "\n";
    all_pass = all_pass && r.pass;
  }
  std::cout << (all_pass ? "gradcheck: all passed" : "gradcheck: FAILURES") << "\n";
  return all_pass ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic scene completion: separated sparse/dense branches fused in BEV"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out, synth_grid = "64,64,8", synth_origin;
  int synth_count = 1;
  uint64_t synth_seed = 1;
  double synth_voxel = 0.2;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "number of scenes");
  synth->add_option("--seed", synth_seed, "base seed");
  synth->add_option("--grid", synth_grid, "dims as L,W,H");
  synth->add_option("--voxel-size", synth_voxel, "voxel edge length in meters");
  synth->add_option("--origin", synth_origin, "grid origin as x,y,z");

  auto* train = app.add_subcommand("train", "train a model");
  std::string train_config, train_data, train_out, train_resume;
  train->add_option("--config", train_config, "run configuration file");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_config, eval_ckpt, eval_data, eval_out;
  eval->add_option("--config", eval_config, "run configuration file");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--out", eval_out, "metrics report file")->required();

  auto* infer = app.add_subcommand("infer", "predict one scene from a point file");
  std::string infer_config, infer_ckpt, infer_points, infer_out, infer_csv;
  infer->add_option("--config", infer_config, "run configuration file");
  infer->add_option("--ckpt", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--points", infer_points, "input point file")->required();
  infer->add_option("--out", infer_out, "prediction label file")->required();
  infer->add_option("--export-csv", infer_csv, "also write occupied voxels as CSV");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::string gc_scale = "tiny";
  gradcheck->add_option("--scale", gc_scale, "suite scale (tiny)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      GridArg grid;
      if (!parse_grid(synth_grid, &grid)) {
        std::cerr << "bad --grid, expected L,W,H\n";
        return kExitUsage;
      }
      return cmd_synth(synth_out, synth_count, synth_seed, grid, synth_voxel, synth_origin);
    }
    if (train->parsed()) return cmd_train(train_config, train_data, train_out, train_resume);
    if (eval->parsed()) return cmd_eval(eval_config, eval_ckpt, eval_data, eval_out);
    if (infer->parsed())
      return cmd_infer(infer_config, infer_ckpt, infer_points, infer_out, infer_csv);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_scale);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
