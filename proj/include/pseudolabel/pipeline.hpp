#pragma once

// Pseudo-label generation loop over one sequence directory:
// detections -> tracking -> global tracks -> motion state -> temporal targets
// -> per-observation refinement -> static propagation -> labels -> AP.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pseudolabel/car_models.hpp"
#include "pseudolabel/chamfer.hpp"
#include "pseudolabel/config.hpp"
#include "pseudolabel/error.hpp"
#include "pseudolabel/eval.hpp"
#include "pseudolabel/geometry.hpp"
#include "pseudolabel/kitti_io.hpp"
#include "pseudolabel/motion.hpp"
#include "pseudolabel/parallel.hpp"
#include "pseudolabel/refine.hpp"
#include "pseudolabel/scenario.hpp"
#include "pseudolabel/shapespace.hpp"
#include "pseudolabel/tracker.hpp"

namespace pseudolabel {

enum class MotionModel { PiecewiseLinear, GlobalLinear };
// Frame the odometry poses are expressed in; IMU poses are conjugated into
// the camera frame with the calibration.
enum class PoseFrame { Camera, Imu };

inline const char* to_string(MotionModel m) {
  return m == MotionModel::PiecewiseLinear ? "piecewise_linear" : "global_linear";
}

inline MotionModel parse_motion_model(const std::string& s) {
  if (s == "piecewise_linear" || s == "piecewise") return MotionModel::PiecewiseLinear;
  if (s == "global_linear" || s == "linear") return MotionModel::GlobalLinear;
  throw Error(ErrorCode::ConfigInvalid, "unknown motion model '" + s + "'");
}

struct PipelineConfig {
  std::filesystem::path sequence;
  std::filesystem::path output;
  std::filesystem::path shape_space;  // empty: <sequence>/shape_space.bin, else the built-in family
  int iterations = 3;
  MotionModel motion_model = MotionModel::PiecewiseLinear;
  bool temporal = true;  // false runs the Chamfer-only baseline (lambda_t = lambda_r = 0)
  int threads = 0;       // 0: hardware concurrency
  double frame_rate = 10.0;
  PoseFrame pose_frame = PoseFrame::Camera;
  double mask_min_iou = 0.3;  // 2D box IoU needed to pair a detection with a mask instance
  // Mask-filtered points farther than this from the detected box center (on
  // the ground plane, beyond the box's half diagonal) are dropped; mask
  // frusta leak background returns. Negative disables the gate.
  double scan_gate = 2.0;
  double eval_iou_threshold = 0.5;

  TrackerConfig tracker;
  MotionConfig motion;
  RefinementConfig refine;
  PropagationConfig propagation;

  int worker_count() const {
    if (threads > 0) return threads;
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  }
};

// Overlays the keys present in `file` onto `cfg`.
inline PipelineConfig apply_config(const ConfigFile& file, PipelineConfig cfg) {
  std::string s;
  if (file.has("sequence")) {
    file.get("sequence", s);
    cfg.sequence = s;
  }
  if (file.has("output")) {
    file.get("output", s);
    cfg.output = s;
  }
  if (file.has("shape_space")) {
    file.get("shape_space", s);
    cfg.shape_space = s;
  }
  file.get("iterations", cfg.iterations);
  if (file.has("motion_model")) {
    file.get("motion_model", s);
    cfg.motion_model = parse_motion_model(s);
  }
  file.get("temporal", cfg.temporal);
  file.get("threads", cfg.threads);
  file.get("frame_rate", cfg.frame_rate);
  if (file.has("pose_frame")) {
    file.get("pose_frame", s);
    if (s == "camera") {
      cfg.pose_frame = PoseFrame::Camera;
    } else if (s == "imu") {
      cfg.pose_frame = PoseFrame::Imu;
    } else {
      throw Error(ErrorCode::ConfigInvalid, file.source() + ": pose_frame must be camera or imu");
    }
  }
  file.get("mask_min_iou", cfg.mask_min_iou);
  file.get("scan_gate", cfg.scan_gate);
  file.get("eval.iou_threshold", cfg.eval_iou_threshold);

  file.get("tracker.gate_radius", cfg.tracker.gate_radius);
  file.get("tracker.max_age", cfg.tracker.max_age);

  auto& m = cfg.motion;
  file.get("motion.min_frames", m.min_frames);
  file.get("motion.distance_threshold", m.distance_threshold);
  file.get("motion.zero_crossing_ratio", m.zero_crossing_ratio);
  file.get("motion.velocity_deadband", m.velocity_deadband);
  file.get("motion.per_axis_threshold", m.per_axis_threshold);
  file.get("motion.crossings_per_observation", m.crossings_per_observation);
  if (file.has("motion.crossing_axes")) {
    file.get("motion.crossing_axes", s);
    if (s == "travel") {
      m.crossing_axes = CrossingAxes::TravelDirection;
    } else if (s == "either") {
      m.crossing_axes = CrossingAxes::Either;
    } else {
      throw Error(ErrorCode::ConfigInvalid, file.source() + ": motion.crossing_axes must be travel or either");
    }
  }
  file.get("motion.histogram_bins", m.histogram_bins);
  file.get("motion.segment_length", m.segment_length);
  file.get("motion.min_segment_length", m.min_segment_length);
  file.get("motion.ransac_threshold", m.ransac_threshold);
  file.get("motion.ransac_iterations", m.ransac_iterations);
  file.get("motion.ransac_seed", m.ransac_seed);

  auto& r = cfg.refine;
  file.get("refine.lambda_t", r.lambda_t);
  file.get("refine.lambda_r", r.lambda_r);
  file.get("refine.steps", r.steps);
  file.get("refine.step_size_translation", r.step_size_translation);
  file.get("refine.step_size_yaw", r.step_size_yaw);
  file.get("refine.max_halvings", r.max_halvings);
  file.get("refine.step_growth", r.step_growth);
  file.get("refine.step_shrink", r.step_shrink);
  file.get("refine.max_step_translation", r.max_step_translation);
  file.get("refine.max_step_yaw", r.max_step_yaw);
  file.get("refine.normalized_chamfer", r.normalized_chamfer);
  file.get("refine.visible_model_only", r.visible_model_only);
  file.get("refine.mask_model_points", r.mask_model_points);

  file.get("propagate.min_depth", cfg.propagation.min_depth);
  file.get("propagate.confidence", cfg.propagation.confidence);
  return cfg;
}

inline void validate(const PipelineConfig& cfg) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigInvalid, what); };
  if (cfg.iterations < 1) fail("iterations must be >= 1");
  if (!(cfg.frame_rate > 0.0)) fail("frame_rate must be positive");
  if (!(cfg.tracker.gate_radius > 0.0) || cfg.tracker.max_age < 0) fail("invalid tracker parameters");
  if (cfg.motion.min_frames < 2 || cfg.motion.histogram_bins < 1 || cfg.motion.segment_length < 2 ||
      !(cfg.motion.ransac_threshold > 0.0) || cfg.motion.ransac_iterations < 1) {
    fail("invalid motion parameters");
  }
  const auto& r = cfg.refine;
  if (r.lambda_t < 0.0 || r.lambda_r < 0.0 || r.steps < 0 || !(r.step_size_translation > 0.0) ||
      !(r.step_size_yaw > 0.0) || r.max_halvings < 0) {
    fail("invalid refinement parameters");
  }
}

// ---- input ----

struct SequenceData {
  Calibration calibration;
  EgoTrajectory ego;  // camera frame i -> camera frame 0
  ShapeSpace shapes;
  std::vector<std::vector<Vec3>> scans;  // rectified camera frame
  std::vector<LabelImage> masks;
  std::optional<FrameBoxes> ground_truth;

  int frame_count() const { return static_cast<int>(ego.size()); }
};

inline void require(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw Error(ErrorCode::InputMissing, "missing input " + p.string());
}

inline FrameBoxes read_label_dir(const std::filesystem::path& dir, int frame_count) {
  FrameBoxes out;
  for (int f = 0; f < frame_count; ++f) {
    const auto path = dir / frame_file_name(f, ".txt");
    auto& boxes = out[f];
    if (!std::filesystem::exists(path)) continue;
    for (const auto& rec : read_labels(path)) {
      if (rec.type == "Car") boxes.push_back(rec.box);
    }
  }
  return out;
}

inline SequenceData load_sequence(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path& dir = cfg.sequence;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::InputMissing, "missing sequence directory " + dir.string());
  SequenceData seq;
  require(dir / "calib.txt");
  seq.calibration = read_calibration(dir / "calib.txt");
  require(dir / "poses.txt");
  seq.ego = read_poses(dir / "poses.txt");
  for (std::size_t i = 0; i < seq.ego.size(); ++i) {
    if (!seq.ego[i].is_valid(kCalibrationTolerance)) {
      throw Error(ErrorCode::CalibrationInvalid,
                  (dir / "poses.txt").string() + ":" + std::to_string(i + 1) + ": pose is not rigid");
    }
  }
  if (cfg.pose_frame == PoseFrame::Imu) {
    const RigidTransform c = seq.calibration.imu_to_rect();
    const RigidTransform c_inv = c.inverse();
    for (auto& t : seq.ego) t = c * t * c_inv;
  }

  if (!cfg.shape_space.empty()) {
    require(cfg.shape_space);
    seq.shapes = load_shape_space(cfg.shape_space.string());
  } else if (fs::exists(dir / "shape_space.bin")) {
    seq.shapes = load_shape_space((dir / "shape_space.bin").string());
  } else {
    seq.shapes = default_car_shape_space();
  }

  const RigidTransform velo_to_rect = seq.calibration.velo_to_rect();
  const CameraIntrinsics k = seq.calibration.intrinsics();
  for (int f = 0; f < seq.frame_count(); ++f) {
    const auto scan_path = dir / "velodyne" / frame_file_name(f, ".bin");
    require(scan_path);
    auto points = read_velodyne(scan_path);
    for (Vec3& p : points) p = velo_to_rect.apply(p);
    seq.scans.push_back(std::move(points));
    const auto mask_path = dir / "masks" / frame_file_name(f, ".pgm");
    require(mask_path);
    seq.masks.push_back(read_pgm(mask_path));
    if (seq.masks.back().width != k.image_width || seq.masks.back().height != k.image_height) {
      throw Error(ErrorCode::CalibrationInvalid, mask_path.string() + ": mask size differs from the calibrated image size");
    }
  }
  if (fs::is_directory(dir / "label_gt")) seq.ground_truth = read_label_dir(dir / "label_gt", seq.frame_count());
  return seq;
}

// Detections of iteration k come from detections_k/ (detections/ for k = 1);
// a missing directory falls back to the latest earlier one.
inline std::vector<std::vector<LabelRecord>> load_detections(const std::filesystem::path& dir, int iteration,
                                                             int frame_count) {
  namespace fs = std::filesystem;
  fs::path det_dir;
  for (int k = iteration; k >= 1 && det_dir.empty(); --k) {
    if (fs::is_directory(dir / detections_dir_name(k))) det_dir = dir / detections_dir_name(k);
  }
  if (det_dir.empty()) throw Error(ErrorCode::InputMissing, "missing input " + (dir / "detections").string());
  std::vector<std::vector<LabelRecord>> out(static_cast<std::size_t>(frame_count));
  for (int f = 0; f < frame_count; ++f) {
    const auto path = det_dir / frame_file_name(f, ".txt");
    require(path);
    for (auto& rec : read_labels(path)) {
      if (rec.type == "Car") out[static_cast<std::size_t>(f)].push_back(std::move(rec));
    }
  }
  return out;
}

inline std::vector<std::vector<ObjectObservation>> to_observations(const std::vector<std::vector<LabelRecord>>& dets,
                                                                   const ShapeSpace& shapes) {
  std::vector<std::vector<ObjectObservation>> frames(dets.size());
  for (std::size_t f = 0; f < dets.size(); ++f) {
    for (std::size_t i = 0; i < dets[f].size(); ++i) {
      const LabelRecord& rec = dets[f][i];
      ObjectObservation obs;
      obs.frame_index = static_cast<int>(f);
      obs.shape_code = rec.shape_code.size() == shapes.latent_dim() ? rec.shape_code
                                                                     : ShapeCode::Zero(shapes.latent_dim());
      const auto shape = to_points(shapes.decode(obs.shape_code));
      obs.pose = pose_from_box(rec.box, shape_extent(shape));
      obs.confidence = rec.box.score;
      obs.detection_index = static_cast<int>(i);
      frames[f].push_back(std::move(obs));
    }
  }
  return frames;
}

// ---- mask association ----

struct PixelRect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
};

inline double rect_iou(const PixelRect& a, const PixelRect& b) {
  const PixelRect i{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  const double inter = (i.x1 > i.x0 && i.y1 > i.y0) ? i.area() : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Bounding rectangle per instance value (index = value - 1).
inline std::vector<std::optional<PixelRect>> instance_rects(const LabelImage& img) {
  std::vector<std::optional<PixelRect>> out(static_cast<std::size_t>(img.instance_count()));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int v = img.at(x, y);
      if (v == 0) continue;
      auto& r = out[static_cast<std::size_t>(v - 1)];
      if (!r) r = PixelRect{double(x), double(y), x + 1.0, y + 1.0};
      r->x0 = std::min(r->x0, double(x));
      r->y0 = std::min(r->y0, double(y));
      r->x1 = std::max(r->x1, x + 1.0);
      r->y1 = std::max(r->y1, y + 1.0);
    }
  }
  return out;
}

// Greedy one-to-one pairing of detections with mask instances by the IoU of
// the detection's projected box rectangle and the instance's rectangle.
// Returns the instance index per detection, or -1.
inline std::vector<int> match_masks(const std::vector<ObjectObservation>& dets, const ShapeSpace& shapes,
                                    const LabelImage& img, const CameraIntrinsics& k, double min_iou) {
  const auto rects = instance_rects(img);
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t d = 0; d < dets.size(); ++d) {
    const auto shape = to_points(shapes.decode(dets[d].shape_code));
    const auto hull = projected_box_hull(box_from_shape(shape_extent(shape), dets[d].pose), k);
    if (hull.size() < 3) continue;
    PixelRect r{hull[0].x(), hull[0].y(), hull[0].x(), hull[0].y()};
    for (const Vec2& p : hull) {
      r.x0 = std::min(r.x0, p.x());
      r.y0 = std::min(r.y0, p.y());
      r.x1 = std::max(r.x1, p.x());
      r.y1 = std::max(r.y1, p.y());
    }
    r.x0 = std::clamp(r.x0, 0.0, double(img.width));
    r.x1 = std::clamp(r.x1, 0.0, double(img.width));
    r.y0 = std::clamp(r.y0, 0.0, double(img.height));
    r.y1 = std::clamp(r.y1, 0.0, double(img.height));
    for (std::size_t m = 0; m < rects.size(); ++m) {
      if (!rects[m]) continue;
      const double iou = rect_iou(r, *rects[m]);
      if (iou >= min_iou) pairs.emplace_back(-iou, d, m);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<int> out(dets.size(), -1);
  std::vector<bool> taken(rects.size(), false);
  for (const auto& [neg_iou, d, m] : pairs) {
    if (out[d] >= 0 || taken[m]) continue;
    out[d] = static_cast<int>(m);
    taken[m] = true;
  }
  return out;
}

// ---- one iteration ----

inline std::vector<Vec3> gate_points(const std::vector<Vec3>& points, const Box3D& box, double margin) {
  const double radius = std::hypot(box.length, box.width) / 2.0 + margin;
  std::vector<Vec3> out;
  for (const Vec3& p : points) {
    if (std::hypot(p.x() - box.center.x(), p.z() - box.center.z()) <= radius) out.push_back(p);
  }
  return out;
}

struct LabeledBox {
  Box3D box;
  int track_id = 0;
  bool detected = true;
  MotionState state = MotionState::Undecided;
};

struct LabeledFrame {
  int frame_index = 0;
  std::vector<LabeledBox> boxes;
};

struct IterationResult {
  int iteration = 1;
  std::vector<Tracklet> tracklets;  // refined, including propagated observations
  std::vector<LabeledFrame> labels;
  std::vector<MetricRow> metrics;            // pseudo-labels vs ground truth
  std::vector<MetricRow> detection_metrics;  // raw detections vs ground truth
};

inline TemporalTargets compute_targets(const Tracklet& t, const GlobalTrack& g, const EgoTrajectory& ego,
                                       const PipelineConfig& cfg) {
  TemporalTargets none;
  try {
    if (t.motion_state == MotionState::Static) return static_targets(g, ego, cfg.motion);
    if (t.motion_state == MotionState::Moving) {
      return cfg.motion_model == MotionModel::PiecewiseLinear ? moving_targets(g, ego, cfg.motion)
                                                              : global_linear_targets(g, ego, cfg.motion);
    }
  } catch (const Error&) {
    // No usable yaw or line: leave the tracklet unregularized.
  }
  return none;
}

inline FrameBoxes to_frame_boxes(const std::vector<LabeledFrame>& frames) {
  FrameBoxes out;
  for (const auto& f : frames) {
    auto& boxes = out[f.frame_index];
    for (const auto& b : f.boxes) boxes.push_back(b.box);
  }
  return out;
}

inline IterationResult run_iteration(const SequenceData& seq, const std::vector<std::vector<ObjectObservation>>& dets,
                                     const PipelineConfig& cfg, int iteration) {
  IterationResult result;
  result.iteration = iteration;
  const CameraIntrinsics k = seq.calibration.intrinsics();
  const Vec3 sensor = seq.calibration.velo_to_rect().translation();

  std::vector<Tracklet> tracklets = associate(dets, seq.ego, cfg.tracker);
  std::vector<TemporalTargets> targets(tracklets.size());
  for (std::size_t t = 0; t < tracklets.size(); ++t) {
    const GlobalTrack g = build_global_track(tracklets[t], seq.ego, cfg.frame_rate);
    tracklets[t].motion_state = classify_motion(g, cfg.motion);
    targets[t] = compute_targets(tracklets[t], g, seq.ego, cfg);
    if (!targets[t].has_targets()) tracklets[t].motion_state = MotionState::Undecided;
  }

  std::vector<std::vector<int>> mask_of(dets.size());
  for (std::size_t f = 0; f < dets.size(); ++f) {
    mask_of[f] = match_masks(dets[f], seq.shapes, seq.masks[f], k, cfg.mask_min_iou);
  }

  struct Job {
    std::size_t tracklet;
    std::size_t obs;
  };
  std::vector<Job> jobs;
  for (std::size_t t = 0; t < tracklets.size(); ++t) {
    for (std::size_t i = 0; i < tracklets[t].observations.size(); ++i) jobs.push_back({t, i});
  }
  std::vector<ObjectObservation> refined(jobs.size());
  parallel_for(jobs.size(), cfg.worker_count(), [&](std::size_t j) {
    const Tracklet& tr = tracklets[jobs[j].tracklet];
    const ObjectObservation& obs = tr.observations[jobs[j].obs];
    const auto f = static_cast<std::size_t>(obs.frame_index);
    ObservationScene scene;
    scene.shape = to_points(seq.shapes.decode(obs.shape_code));
    scene.normals = seq.shapes.normals();
    scene.intrinsics = k;
    scene.sensor_origin = sensor;
    scene.target = target_entry(targets[jobs[j].tracklet], jobs[j].obs);
    const int m = mask_of[f][static_cast<std::size_t>(obs.detection_index)];
    if (m >= 0) {
      auto mask = std::make_shared<const InstanceMask>(seq.masks[f].instance(m));
      try {
        PointCloud filtered = filter_by_mask(PointCloud{seq.scans[f], Frame::Camera}, *mask, k);
        if (cfg.scan_gate >= 0.0) {
          const Box3D box = box_from_shape(shape_extent(scene.shape), obs.pose);
          filtered.points = gate_points(filtered.points, box, cfg.scan_gate);
        }
        if (!filtered.empty()) {
          scene.scan = std::make_shared<const KdTree>(filtered.points);
          scene.mask = std::move(mask);
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyResult) throw;
      }
    }
    refined[j] = refine_observation(obs, scene, cfg.refine);
  });
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    tracklets[jobs[j].tracklet].observations[jobs[j].obs] = refined[j];
  }

  const bool temporal = cfg.refine.lambda_t > 0.0 || cfg.refine.lambda_r > 0.0;
  if (temporal) {
    for (auto& tr : tracklets) {
      if (tr.motion_state != MotionState::Static) continue;
      const GlobalTrack g = build_global_track(tr, seq.ego, cfg.frame_rate);
      TemporalTargets st;
      try {
        st = static_targets(g, seq.ego, cfg.motion);
      } catch (const Error&) {
        continue;
      }
      const Pose4DoF global{st.global_translation.front(), st.global_yaw.front()};
      auto extra = propagate_static(tr, global, seq.ego, k, cfg.propagation);
      if (extra.empty()) continue;
      tr.observations.insert(tr.observations.end(), extra.begin(), extra.end());
      std::sort(tr.observations.begin(), tr.observations.end(),
                [](const ObjectObservation& a, const ObjectObservation& b) { return a.frame_index < b.frame_index; });
    }
  }

  result.labels.resize(static_cast<std::size_t>(seq.frame_count()));
  for (int f = 0; f < seq.frame_count(); ++f) result.labels[static_cast<std::size_t>(f)].frame_index = f;
  for (const auto& tr : tracklets) {
    for (const auto& obs : tr.observations) {
      const auto shape = to_points(seq.shapes.decode(obs.shape_code));
      result.labels[static_cast<std::size_t>(obs.frame_index)].boxes.push_back(
          {box_from_shape(shape_extent(shape), obs.pose, obs.confidence), tr.track_id, obs.detected, tr.motion_state});
    }
  }
  for (auto& lf : result.labels) {
    std::stable_sort(lf.boxes.begin(), lf.boxes.end(),
                     [](const LabeledBox& a, const LabeledBox& b) { return a.track_id < b.track_id; });
  }
  result.tracklets = std::move(tracklets);

  if (seq.ground_truth) {
    result.metrics = evaluate_all(to_frame_boxes(result.labels), *seq.ground_truth, cfg.eval_iou_threshold);
    FrameBoxes raw;
    for (std::size_t f = 0; f < dets.size(); ++f) {
      auto& boxes = raw[static_cast<int>(f)];
      for (const auto& d : dets[f]) {
        const auto shape = to_points(seq.shapes.decode(d.shape_code));
        boxes.push_back(box_from_shape(shape_extent(shape), d.pose, d.confidence));
      }
    }
    result.detection_metrics = evaluate_all(raw, *seq.ground_truth, cfg.eval_iou_threshold);
  }
  return result;
}

// ---- output ----

inline void write_iteration(const std::filesystem::path& dir, const IterationResult& r) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "labels");
  for (const auto& lf : r.labels) {
    std::vector<LabelRecord> recs;
    for (const auto& b : lf.boxes) recs.push_back({"Car", b.box, {}});
    write_labels(dir / "labels" / frame_file_name(lf.frame_index, ".txt"), recs);
  }
  auto tracks = open_output(dir / "tracks.csv");
  tracks << "frame,index,track,detected,state\n";
  for (const auto& lf : r.labels) {
    for (std::size_t i = 0; i < lf.boxes.size(); ++i) {
      const auto& b = lf.boxes[i];
      tracks << lf.frame_index << ',' << i << ',' << b.track_id << ',' << (b.detected ? 1 : 0) << ','
             << to_string(b.state) << '\n';
    }
  }
  if (!r.metrics.empty()) {
    auto txt = open_output(dir / "eval.txt");
    write_text_report(txt, r.metrics);
    auto csv = open_output(dir / "eval.csv");
    write_csv_report(csv, r.metrics);
  }
}

inline double metric_value(const std::vector<MetricRow>& rows, IouMode mode, Interpolation interp) {
  for (const auto& r : rows) {
    if (r.mode == mode && r.interpolation == interp) return r.value;
  }
  return 0.0;
}

struct PipelineResult {
  std::vector<IterationResult> iterations;
};

inline PipelineResult run(PipelineConfig cfg) {
  validate(cfg);
  if (!cfg.temporal) {
    cfg.refine.lambda_t = 0.0;
    cfg.refine.lambda_r = 0.0;
  }
  const SequenceData seq = load_sequence(cfg);
  PipelineResult result;
  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto records = load_detections(cfg.sequence, it, seq.frame_count());
    const auto dets = to_observations(records, seq.shapes);
    result.iterations.push_back(run_iteration(seq, dets, cfg, it));
    if (!cfg.output.empty()) {
      write_iteration(cfg.output / ("iter_" + std::to_string(it)), result.iterations.back());
    }
  }
  if (!cfg.output.empty() && seq.ground_truth) {
    auto os = open_output(cfg.output / "summary.csv");
    os << "iteration,source,mode,metric,value\n";
    for (const auto& r : result.iterations) {
      for (const auto* rows : {&r.detection_metrics, &r.metrics}) {
        const char* source = rows == &r.metrics ? "pseudo_labels" : "detections";
        for (const auto& m : *rows) {
          os << r.iteration << ',' << source << ',' << to_string(m.mode) << ',' << m.metric << ',' << m.value << '\n';
        }
      }
    }
  }
  return result;
}

}  // namespace pseudolabel
