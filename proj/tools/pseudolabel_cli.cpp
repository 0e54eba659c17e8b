// pseudolabel: synthetic sequence generation, pseudo-label refinement,
// evaluation and velocity-profile export.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "pseudolabel/pseudolabel.hpp"

namespace fs = std::filesystem;
using namespace pseudolabel;

namespace {

void warn_unused(const ConfigFile& file) {
  for (const auto& key : file.unused()) std::cerr << "warning: unknown config key '" << key << "'\n";
}

ScenarioConfig scenario_from(const ConfigFile& file, ScenarioConfig cfg) {
  file.get("scenario.frames", cfg.frame_count);
  file.get("scenario.frame_rate", cfg.frame_rate);
  file.get("scenario.sigma_t", cfg.noise.sigma_t);
  file.get("scenario.sigma_yaw", cfg.noise.sigma_yaw);
  file.get("scenario.false_negative_rate", cfg.noise.false_negative_rate);
  if (file.has("scenario.schedule")) {
    std::string s;
    file.get("scenario.schedule", s);
    if (s == "halving") {
      cfg.schedule = NoiseSchedule::Halving;
    } else if (s == "constant") {
      cfg.schedule = NoiseSchedule::Constant;
    } else {
      throw Error(ErrorCode::ConfigInvalid, "scenario.schedule must be halving or constant");
    }
  }
  file.get("scenario.lidar_noise", cfg.lidar.noise);
  file.get("scenario.lidar_dropout", cfg.lidar.dropout);
  file.get("scenario.lidar_max_range", cfg.lidar.max_range);
  file.get("scenario.ground_points", cfg.lidar.ground_points);
  file.get("scenario.ego_speed", cfg.ego.speed);
  file.get("scenario.ego_yaw_rate", cfg.ego.yaw_rate);
  return cfg;
}

FrameBoxes read_any_label_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::InputMissing, "missing label directory " + dir.string());
  int last = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".txt") continue;
    try {
      last = std::max(last, std::stoi(entry.path().stem().string()));
    } catch (const std::logic_error&) {
    }
  }
  return read_label_dir(dir, last + 1);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Refine noisy 3D vehicle detections into pseudo-labels with lidar and temporal consistency"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::string motion_model;
  bool no_temporal = false;
  int threads = 0;

  auto* gen = app.add_subcommand("generate", "write a synthetic sequence directory");
  std::string gen_out;
  gen->add_option("-o,--output", gen_out, "sequence directory to create")->required();
  gen->add_option("--seed", seed, "scenario seed");
  gen->add_option("--iterations", iterations, "number of detection sets (one per iteration)");
  gen->add_option("--config", config_path, "key = value config file");

  auto* ref = app.add_subcommand("refine", "run the pseudo-label loop on a sequence");
  std::string seq_dir;
  std::string out_dir;
  ref->add_option("-s,--sequence", seq_dir, "input sequence directory");
  ref->add_option("-o,--output", out_dir, "output directory");
  ref->add_option("--iterations", iterations, "pseudo-label iterations");
  ref->add_flag("--no-temporal", no_temporal, "Chamfer-only baseline (no temporal terms)");
  ref->add_option("--motion-model", motion_model, "piecewise_linear or global_linear");
  ref->add_option("--seed", seed, "RANSAC seed");
  ref->add_option("--threads", threads, "worker threads (0 = all cores)");
  ref->add_option("--config", config_path, "key = value config file");

  auto* ev = app.add_subcommand("eval", "average precision of a label directory against ground truth");
  std::string labels_dir;
  std::string gt_dir;
  std::string csv_path;
  double iou = 0.5;
  ev->add_option("-l,--labels", labels_dir, "label directory to score")->required();
  ev->add_option("-g,--gt", gt_dir, "ground-truth label directory")->required();
  ev->add_option("--iou", iou, "IoU threshold");
  ev->add_option("--csv", csv_path, "also write the report as CSV");

  auto* prof = app.add_subcommand("profile", "export global tracks and velocity profiles as CSV");
  std::string prof_out;
  int prof_iteration = 1;
  prof->add_option("-s,--sequence", seq_dir, "input sequence directory");
  prof->add_option("-o,--output", prof_out, "CSV file (stdout if omitted)");
  prof->add_option("--iteration", prof_iteration, "which detection set to profile");
  prof->add_option("--seed", seed, "RANSAC seed");
  prof->add_option("--config", config_path, "key = value config file");

  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<ConfigFile> file;
    if (!config_path.empty()) file = ConfigFile::load(config_path);

    if (gen->parsed()) {
      const ShapeSpace space = default_car_shape_space();
      std::uint64_t s = 1;
      if (file) file->get("scenario.seed", s);
      if (seed) s = *seed;
      ScenarioConfig cfg = default_scenario_config(space, s);
      int n = 3;
      if (file) {
        cfg = scenario_from(*file, cfg);
        file->get("iterations", n);
        warn_unused(*file);
      }
      if (iterations) n = *iterations;
      const Scenario sc = generate(cfg, space);
      write_sequence(gen_out, sc, n);
      std::cout << "wrote " << sc.truth.size() << " frames to " << gen_out << '\n';
      return 0;
    }

    PipelineConfig cfg;
    if (file) cfg = apply_config(*file, cfg);
    if (!seq_dir.empty()) cfg.sequence = seq_dir;
    if (seed) cfg.motion.ransac_seed = *seed;

    if (ref->parsed()) {
      if (!out_dir.empty()) cfg.output = out_dir;
      if (iterations) cfg.iterations = *iterations;
      if (!motion_model.empty()) cfg.motion_model = parse_motion_model(motion_model);
      if (no_temporal) cfg.temporal = false;
      if (threads > 0) cfg.threads = threads;
      if (file) warn_unused(*file);
      if (cfg.sequence.empty()) throw Error(ErrorCode::ConfigInvalid, "no sequence directory given");
      const PipelineResult result = run(cfg);
      for (const auto& it : result.iterations) {
        if (it.metrics.empty()) {
          std::cout << "iteration " << it.iteration << ": no ground truth\n";
          continue;
        }
        std::cout << "iteration " << it.iteration << ": detections AP_R40 bev "
                  << metric_value(it.detection_metrics, IouMode::Bev, Interpolation::R40) << ", pseudo-labels AP_R40 bev "
                  << metric_value(it.metrics, IouMode::Bev, Interpolation::R40) << " 3d "
                  << metric_value(it.metrics, IouMode::ThreeD, Interpolation::R40) << '\n';
      }
      return 0;
    }

    if (ev->parsed()) {
      const FrameBoxes gt = read_any_label_dir(gt_dir);
      FrameBoxes dets = read_any_label_dir(labels_dir);
      const auto rows = evaluate_all(dets, gt, iou);
      write_text_report(std::cout, rows);
      if (!csv_path.empty()) {
        auto os = open_output(csv_path);
        write_csv_report(os, rows);
      }
      return 0;
    }

    if (prof->parsed()) {
      if (file) warn_unused(*file);
      if (cfg.sequence.empty()) throw Error(ErrorCode::ConfigInvalid, "no sequence directory given");
      require(cfg.sequence / "poses.txt");
      EgoTrajectory ego = read_poses(cfg.sequence / "poses.txt");
      const ShapeSpace space = fs::exists(cfg.sequence / "shape_space.bin")
                                   ? load_shape_space((cfg.sequence / "shape_space.bin").string())
                                   : default_car_shape_space();
      const auto dets = to_observations(
          load_detections(cfg.sequence, prof_iteration, static_cast<int>(ego.size())), space);
      const auto tracklets = associate(dets, ego, cfg.tracker);
      std::ofstream file_out;
      if (!prof_out.empty()) file_out = open_output(prof_out);
      std::ostream& os = prof_out.empty() ? std::cout : file_out;
      bool header = true;
      for (const auto& tr : tracklets) {
        const GlobalTrack g = build_global_track(tr, ego, cfg.frame_rate);
        write_profile_csv(os, tr.track_id, g, classify_motion(g, cfg.motion), header);
        header = false;
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
