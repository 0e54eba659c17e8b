#include "pseudolabel/pipeline.hpp"

#include <filesystem>
#include <functional>
#include <set>

#include <gtest/gtest.h>

namespace pseudolabel {
namespace {

namespace fs = std::filesystem;

const ShapeSpace& space() {
  static const ShapeSpace s = default_car_shape_space(512);
  return s;
}

// Two parked cars and one car pulling away ahead, no noise anywhere, nothing
// occluded and no ground returns.
ScenarioConfig clean_config() {
  ScenarioConfig cfg;
  cfg.frame_count = 10;
  cfg.noise = {0.0, 0.0, 0.0};
  cfg.lidar.ground_points = 0;
  CarSpec left;
  left.start = Vec2(-4.5, 14.0);
  CarSpec right;
  right.start = Vec2(4.5, 20.0);
  right.heading = kPi / 2.0;
  CarSpec lead;
  lead.state = MotionState::Moving;
  lead.start = Vec2(0.0, 12.0);
  lead.speed = 7.0;
  cfg.cars = {left, right, lead};
  return cfg;
}

fs::path write_clean(const std::string& name, int iterations = 1) {
  const fs::path dir = fs::temp_directory_path() / "pseudolabel_pipeline_test" / name;
  fs::remove_all(dir);
  write_sequence(dir, generate(clean_config(), space()), iterations);
  return dir;
}

Error error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "no error thrown";
  return Error(ErrorCode::FormatError, "none");
}

TEST(Pipeline, CleanInputReproducesGroundTruth) {
  PipelineConfig cfg;
  cfg.sequence = write_clean("clean");
  cfg.iterations = 1;
  const auto result = run(cfg);
  ASSERT_EQ(result.iterations.size(), 1u);
  const auto& it = result.iterations[0];
  EXPECT_EQ(metric_value(it.metrics, IouMode::Bev, Interpolation::R40), 100.0);
  EXPECT_EQ(metric_value(it.metrics, IouMode::ThreeD, Interpolation::R40), 100.0);

  const FrameBoxes gt = read_label_dir(cfg.sequence / "label_gt", 10);
  for (const auto& lf : it.labels) {
    const auto& truth = gt.at(lf.frame_index);
    ASSERT_EQ(lf.boxes.size(), truth.size()) << "frame " << lf.frame_index;
    for (const auto& b : lf.boxes) {
      double best = 1e9;
      const Box3D* match = nullptr;
      for (const Box3D& g : truth) {
        const double d = (g.center - b.box.center).norm();
        if (d < best) {
          best = d;
          match = &g;
        }
      }
      // Scans pass through single precision on disk.
      EXPECT_LT(best, 1e-3);
      EXPECT_LT(std::abs(wrap_angle(match->yaw - b.box.yaw)), 1e-3);
      EXPECT_NEAR(match->length, b.box.length, 1e-9);
    }
  }
  std::map<int, MotionState> states;
  for (const auto& t : it.tracklets) states[t.track_id] = t.motion_state;
  EXPECT_EQ(it.tracklets.size(), 3u);
  EXPECT_EQ(std::count_if(states.begin(), states.end(), [](auto& s) { return s.second == MotionState::Moving; }), 1);
  EXPECT_EQ(std::count_if(states.begin(), states.end(), [](auto& s) { return s.second == MotionState::Static; }), 2);
}

TEST(Pipeline, TrackIdsUniquePerFrameAndPropagationStaysInSpan) {
  ScenarioConfig sc_cfg = clean_config();
  sc_cfg.noise = {0.05, 0.01, 0.3};
  const fs::path dir = fs::temp_directory_path() / "pseudolabel_pipeline_test" / "gaps";
  fs::remove_all(dir);
  const Scenario sc = generate(sc_cfg, space());
  write_sequence(dir, sc, 1);
  PipelineConfig cfg;
  cfg.sequence = dir;
  cfg.iterations = 1;
  const auto result = run(cfg);
  const auto& it = result.iterations[0];
  for (const auto& lf : it.labels) {
    std::set<int> ids;
    for (const auto& b : lf.boxes) EXPECT_TRUE(ids.insert(b.track_id).second) << "frame " << lf.frame_index;
  }
  int propagated = 0;
  for (const auto& t : it.tracklets) {
    int first = 1 << 30;
    int last = -1;
    for (const auto& o : t.observations) {
      if (!o.detected) continue;
      first = std::min(first, o.frame_index);
      last = std::max(last, o.frame_index);
    }
    for (const auto& o : t.observations) {
      if (o.detected) continue;
      ++propagated;
      EXPECT_EQ(t.motion_state, MotionState::Static);
      EXPECT_GT(o.frame_index, first);
      EXPECT_LT(o.frame_index, last);
    }
  }
  EXPECT_GT(propagated, 0);
}

TEST(Pipeline, NoTemporalEqualsZeroWeights) {
  PipelineConfig a;
  a.sequence = write_clean("baseline");
  a.iterations = 1;
  a.temporal = false;
  PipelineConfig b = a;
  b.temporal = true;
  b.refine.lambda_t = 0.0;
  b.refine.lambda_r = 0.0;
  const auto ra = run(a);
  const auto rb = run(b);
  const auto& la = ra.iterations[0].labels;
  const auto& lb = rb.iterations[0].labels;
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t f = 0; f < la.size(); ++f) {
    ASSERT_EQ(la[f].boxes.size(), lb[f].boxes.size());
    for (std::size_t i = 0; i < la[f].boxes.size(); ++i) {
      EXPECT_EQ(format_label({"Car", la[f].boxes[i].box, {}}), format_label({"Car", lb[f].boxes[i].box, {}}));
    }
  }
}

TEST(Pipeline, ThreadCountDoesNotChangeOutput) {
  ScenarioConfig sc_cfg = clean_config();
  sc_cfg.noise = {0.3, 0.1, 0.1};
  sc_cfg.lidar.noise = 0.02;
  const fs::path dir = fs::temp_directory_path() / "pseudolabel_pipeline_test" / "threads";
  fs::remove_all(dir);
  write_sequence(dir, generate(sc_cfg, space()), 1);
  std::vector<std::string> outputs;
  for (int threads : {1, 3}) {
    PipelineConfig cfg;
    cfg.sequence = dir;
    cfg.iterations = 1;
    cfg.threads = threads;
    const PipelineResult result = run(cfg);
    std::string text;
    for (const auto& lf : result.iterations[0].labels) {
      for (const auto& b : lf.boxes) text += format_label({"Car", b.box, {}}) + "\n";
    }
    outputs.push_back(text);
  }
  EXPECT_FALSE(outputs[0].empty());
  EXPECT_EQ(outputs[0], outputs[1]);
}

TEST(Pipeline, LaterIterationsFallBackToEarlierDetections) {
  const fs::path dir = write_clean("fallback", 1);
  const auto first = load_detections(dir, 1, 10);
  const auto third = load_detections(dir, 3, 10);
  ASSERT_EQ(first.size(), third.size());
  for (std::size_t f = 0; f < first.size(); ++f) ASSERT_EQ(first[f].size(), third[f].size());
  fs::remove_all(dir / "detections");
  EXPECT_EQ(error_of([&] { load_detections(dir, 2, 10); }).code(), ErrorCode::InputMissing);
}

TEST(Pipeline, WritesLabelsAndReports) {
  PipelineConfig cfg;
  cfg.sequence = write_clean("outputs", 2);
  cfg.output = fs::temp_directory_path() / "pseudolabel_pipeline_test" / "outputs_run";
  fs::remove_all(cfg.output);
  cfg.iterations = 2;
  run(cfg);
  for (const char* it : {"iter_1", "iter_2"}) {
    EXPECT_TRUE(fs::exists(cfg.output / it / "labels" / "000009.txt"));
    EXPECT_TRUE(fs::exists(cfg.output / it / "eval.csv"));
    EXPECT_TRUE(fs::exists(cfg.output / it / "tracks.csv"));
  }
  EXPECT_TRUE(fs::exists(cfg.output / "summary.csv"));
  EXPECT_FALSE(read_labels(cfg.output / "iter_2" / "labels" / "000000.txt").empty());
}

TEST(Pipeline, MissingAndInvalidInputsNameTheFile) {
  PipelineConfig cfg;
  cfg.sequence = write_clean("broken");
  fs::remove(cfg.sequence / "poses.txt");
  Error e = error_of([&] { run(cfg); });
  EXPECT_EQ(e.code(), ErrorCode::InputMissing);
  EXPECT_NE(std::string(e.what()).find("poses.txt"), std::string::npos) << e.what();

  cfg.sequence = write_clean("broken_calib");
  {
    std::ofstream os(cfg.sequence / "calib.txt");
    os << "P2: 700 0 600 0 0 700 170 0 0 0 1 0\n";
  }
  e = error_of([&] { run(cfg); });
  EXPECT_EQ(e.code(), ErrorCode::CalibrationInvalid);
  EXPECT_NE(std::string(e.what()).find("calib.txt"), std::string::npos) << e.what();

  cfg.sequence = write_clean("broken_scan");
  fs::remove(cfg.sequence / "velodyne" / "000004.bin");
  e = error_of([&] { run(cfg); });
  EXPECT_EQ(e.code(), ErrorCode::InputMissing);
  EXPECT_NE(std::string(e.what()).find("000004.bin"), std::string::npos) << e.what();

  cfg.iterations = 0;
  EXPECT_EQ(error_of([&] { run(cfg); }).code(), ErrorCode::ConfigInvalid);
}

TEST(Pipeline, ApplyConfigOverlaysKeys) {
  const auto file = ConfigFile::parse(
      "iterations = 5\n"
      "motion_model = global_linear\n"
      "temporal = false\n"
      "pose_frame = imu\n"
      "refine.lambda_t = 0.75\n"
      "motion.crossing_axes = either\n"
      "tracker.max_age = 1\n");
  PipelineConfig base;
  base.refine.lambda_r = 3.0;
  const PipelineConfig cfg = apply_config(file, base);
  EXPECT_EQ(cfg.iterations, 5);
  EXPECT_EQ(cfg.motion_model, MotionModel::GlobalLinear);
  EXPECT_FALSE(cfg.temporal);
  EXPECT_EQ(cfg.pose_frame, PoseFrame::Imu);
  EXPECT_EQ(cfg.refine.lambda_t, 0.75);
  EXPECT_EQ(cfg.refine.lambda_r, 3.0);
  EXPECT_EQ(cfg.motion.crossing_axes, CrossingAxes::Either);
  EXPECT_EQ(cfg.tracker.max_age, 1);
  EXPECT_TRUE(file.unused().empty());

  EXPECT_EQ(error_of([] { apply_config(ConfigFile::parse("pose_frame = lidar\n"), {}); }).code(),
            ErrorCode::ConfigInvalid);
  EXPECT_EQ(error_of([] { apply_config(ConfigFile::parse("motion_model = spline\n"), {}); }).code(),
            ErrorCode::ConfigInvalid);
}

TEST(Pipeline, ImuPosesAreConjugatedIntoTheCameraFrame) {
  const fs::path dir = write_clean("imu");
  PipelineConfig cam;
  cam.sequence = dir;
  const SequenceData reference = load_sequence(cam);
  // Re-express the camera poses in the IMU frame and read them back.
  const RigidTransform c = reference.calibration.imu_to_rect();
  EgoTrajectory imu;
  for (const auto& t : reference.ego) imu.push_back(c.inverse() * t * c);
  write_poses(dir / "poses.txt", imu);
  PipelineConfig imu_cfg = cam;
  imu_cfg.pose_frame = PoseFrame::Imu;
  const SequenceData back = load_sequence(imu_cfg);
  for (std::size_t i = 0; i < back.ego.size(); ++i) {
    EXPECT_LT((back.ego[i].rotation() - reference.ego[i].rotation()).norm(), 1e-12);
    EXPECT_LT((back.ego[i].translation() - reference.ego[i].translation()).norm(), 1e-9);
  }
}

TEST(GatePoints, KeepsPointsNearTheBox) {
  Box3D box;
  box.center = Vec3(0, 1, 10);
  box.length = 4;
  box.width = 2;
  const double r = std::hypot(4.0, 2.0) / 2;
  const std::vector<Vec3> pts = {Vec3(0, 1, 10), Vec3(r + 0.9, -5, 10), Vec3(r + 1.1, 1, 10), Vec3(0, 1, 10 - r - 0.5)};
  const auto kept = gate_points(pts, box, 1.0);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept[1], pts[1]);
  EXPECT_EQ(kept[2], pts[3]);
}

TEST(MatchMasks, PairsDetectionsWithTheirInstances) {
  ScenarioConfig sc_cfg = clean_config();
  sc_cfg.frame_count = 3;
  const Scenario sc = generate(sc_cfg, space());
  const auto dets = make_detections(sc, {0.0, 0.0, 0.0}, 1);
  const CameraIntrinsics k = sc.calibration.intrinsics();
  for (std::size_t f = 0; f < dets.size(); ++f) {
    std::vector<ObjectObservation> obs;
    for (const auto& d : dets[f]) obs.push_back(d.observation);
    // Present the detections in reverse so the pairing cannot lean on order.
    std::reverse(obs.begin(), obs.end());
    const auto m = match_masks(obs, space(), sc.masks[f], k, 0.3);
    for (std::size_t i = 0; i < obs.size(); ++i) {
      EXPECT_EQ(m[i], dets[f][obs.size() - 1 - i].truth_index) << "frame " << f;
    }
  }
  // A detection far from every instance stays unmatched.
  ObjectObservation stray;
  stray.pose = Pose4DoF{Vec3(15, 0.9, 40), 0.0};
  stray.shape_code = ShapeCode::Zero(space().latent_dim());
  EXPECT_EQ(match_masks({stray}, space(), sc.masks[0], k, 0.3)[0], -1);
}

}  // namespace
}  // namespace pseudolabel
