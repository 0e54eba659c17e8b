#pragma once

// Synthetic driving sequences with full ground truth: an ego vehicle moving
// on a flat ground plane, parked and moving procedural cars, lidar returns
// from the sensor-facing car surfaces (occluded by nearer cars' boxes) plus
// ground clutter, per-frame instance masks, and noisy detections.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "pseudolabel/car_models.hpp"
#include "pseudolabel/chamfer.hpp"
#include "pseudolabel/error.hpp"
#include "pseudolabel/eval.hpp"
#include "pseudolabel/geometry.hpp"
#include "pseudolabel/kitti_io.hpp"
#include "pseudolabel/shapespace.hpp"
#include "pseudolabel/tracker.hpp"

namespace pseudolabel {

struct CarSpec {
  MotionState state = MotionState::Static;
  Vec2 start = Vec2(0.0, 10.0);  // global (x, z) of the shape origin at frame 0
  double heading = -kPi / 2.0;   // global yaw at frame 0; -pi/2 drives along +z
  double speed = 0.0;            // m/s
  double yaw_rate = 0.0;         // rad/s, applied on frames [turn_start, turn_end)
  int turn_start = 0;
  int turn_end = 0;
  ShapeCode shape_code;  // empty means the mean shape
};

struct EgoSpec {
  double speed = 5.0;  // m/s along the camera's +z
  double yaw_rate = 0.0;
};

struct DetectionNoise {
  double sigma_t = 0.3;    // per axis, meters
  double sigma_yaw = 0.05;  // radians
  double false_negative_rate = 0.0;
};

enum class NoiseSchedule { Halving, Constant };

// Noise of the stand-in detector at pipeline iteration `iteration` (1-based).
// Halving: sigmas * 0.5^(k-1) and false-negative rate * 0.7^(k-1).
inline DetectionNoise detection_provider(int iteration, const DetectionNoise& base, NoiseSchedule schedule) {
  if (iteration < 1) throw Error(ErrorCode::ConfigInvalid, "iteration must be >= 1");
  if (schedule == NoiseSchedule::Constant) return base;
  const double k = iteration - 1;
  DetectionNoise out = base;
  out.sigma_t *= std::pow(0.5, k);
  out.sigma_yaw *= std::pow(0.5, k);
  out.false_negative_rate *= std::pow(0.7, k);
  return out;
}

struct LidarSpec {
  double max_range = 70.0;
  double dropout = 0.0;  // probability of dropping a surface return
  double noise = 0.0;    // isotropic Gaussian sigma, meters
  int ground_points = 300;
  double ground_half_width = 20.0;
  double ground_depth = 45.0;
};

struct ScenarioConfig {
  int frame_count = 40;
  double frame_rate = 10.0;
  std::vector<CarSpec> cars;
  EgoSpec ego;
  DetectionNoise noise;
  NoiseSchedule schedule = NoiseSchedule::Halving;
  LidarSpec lidar;
  std::uint64_t seed = 1;
  double camera_height = 1.65;  // ground plane at y = camera_height
  double min_depth = 4.0;       // objects count as in view inside this depth window
  double max_depth = 45.0;
};

inline Calibration default_calibration() {
  Calibration c;
  const CameraIntrinsics k;
  c.p2 << k.fx, 0, k.cx, 0, 0, k.fy, k.cy, 0, 0, 0, 1, 0;
  c.image_width = k.image_width;
  c.image_height = k.image_height;
  Mat3 r;
  r << 0, -1, 0, 0, 0, -1, 1, 0, 0;  // lidar x forward, y left, z up
  c.velo_to_cam = RigidTransform(r, Vec3(0.0, -0.08, -0.27));
  c.imu_to_velo = RigidTransform::from_translation(Vec3(-0.81, 0.32, -0.8));
  return c;
}

struct TruthObject {
  int track_id = 0;
  MotionState state = MotionState::Static;
  Pose4DoF pose;  // local camera frame
  Box3D box;
};

struct Scenario {
  ScenarioConfig config;
  ShapeSpace shape_space;
  Calibration calibration;
  EgoTrajectory ego;
  std::vector<std::vector<Vec3>> car_shapes;  // decoded, object frame
  std::vector<ShapeExtent> car_extents;
  std::vector<std::vector<Pose4DoF>> car_global;  // [car][frame]
  std::vector<std::vector<TruthObject>> truth;    // [frame], objects in view
  std::vector<std::vector<Vec3>> scans;           // [frame], camera frame
  std::vector<LabelImage> masks;  // value i + 1 marks truth[frame][i]

  const ShapeCode& shape_code(int track_id) const { return config.cars.at(static_cast<std::size_t>(track_id)).shape_code; }
};

namespace detail {

inline void validate(const ScenarioConfig& cfg, const ShapeSpace& space) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigInvalid, what); };
  if (cfg.frame_count < 1) fail("frame_count must be >= 1");
  if (!(cfg.frame_rate >= 10.0)) fail("frame_rate must be >= 10 Hz");
  if (cfg.noise.sigma_t < 0.0 || cfg.noise.sigma_yaw < 0.0) fail("noise sigmas must be >= 0");
  if (cfg.noise.false_negative_rate < 0.0 || cfg.noise.false_negative_rate > 1.0) fail("false_negative_rate out of [0,1]");
  if (cfg.lidar.dropout < 0.0 || cfg.lidar.dropout > 1.0) fail("lidar dropout out of [0,1]");
  if (cfg.lidar.noise < 0.0 || cfg.lidar.ground_points < 0) fail("lidar noise and ground_points must be >= 0");
  if (!(cfg.max_depth > cfg.min_depth)) fail("max_depth must exceed min_depth");
  for (const auto& car : cfg.cars) {
    if (car.shape_code.size() != 0 && car.shape_code.size() != space.latent_dim()) fail("car shape code has wrong size");
    if (car.speed < 0.0) fail("car speed must be >= 0");
  }
}

// Slab test of the segment o + s (p - o), s in [0, 1], against an oriented
// box; `s_enter` receives the entry parameter on a hit.
inline bool segment_hits_box(const Vec3& o, const Vec3& p, const Box3D& box, double& s_enter) {
  const Mat3 rt = yaw_rotation(box.yaw).transpose();
  const Vec3 a = rt * (o - box.center);
  const Vec3 d = rt * (p - o);
  const Vec3 half(box.length / 2.0, box.height / 2.0, box.width / 2.0);
  double lo = 0.0;
  double hi = 1.0;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d(k)) < 1e-15) {
      if (std::abs(a(k)) > half(k)) return false;
      continue;
    }
    double t0 = (-half(k) - a(k)) / d(k);
    double t1 = (half(k) - a(k)) / d(k);
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
    if (lo > hi) return false;
  }
  s_enter = lo;
  return true;
}

inline bool occluded(const Vec3& o, const Vec3& p, std::span<const Box3D> boxes, int skip) {
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    if (static_cast<int>(b) == skip) continue;
    double s = 0.0;
    if (segment_hits_box(o, p, boxes[b], s) && s < 1.0 - 1e-9) return true;
  }
  return false;
}

inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (pts.size() < 3) return pts;
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace detail

// Pixel hull of the projected box corners lying in front of the camera.
inline std::vector<Vec2> projected_box_hull(const Box3D& box, const CameraIntrinsics& k) {
  std::vector<Vec2> pix;
  for (const Vec3& c : box_corners(box)) {
    if (c.z() > 0.5) pix.emplace_back(k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy);
  }
  return detail::convex_hull(std::move(pix));
}

// Sensor-facing points of a posed shape, in the scene frame.
inline std::vector<Vec3> visible_surface(std::span<const Vec3> shape, std::span<const Vec3> normals,
                                         const Pose4DoF& pose, const Vec3& sensor_origin) {
  const Mat3 r = yaw_rotation(pose.yaw);
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const Vec3 p = r * shape[i] + pose.translation;
    if ((r * normals[i]).dot(p - sensor_origin) < 0.0) out.push_back(p);
  }
  return out;
}

inline Scenario generate(const ScenarioConfig& cfg, const ShapeSpace& space) {
  if (!space.has_normals()) throw Error(ErrorCode::ConfigInvalid, "shape space needs per-point normals");
  detail::validate(cfg, space);
  Scenario sc;
  sc.config = cfg;
  sc.shape_space = space;
  sc.calibration = default_calibration();
  const CameraIntrinsics k = sc.calibration.intrinsics();
  const Vec3 sensor = sc.calibration.velo_to_rect().translation();
  const double dt = 1.0 / cfg.frame_rate;
  const auto frames = static_cast<std::size_t>(cfg.frame_count);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Ego: camera forward is +z, so the heading vector for yaw psi is R(psi) z.
  {
    Vec3 pos = Vec3::Zero();
    double psi = 0.0;
    for (std::size_t f = 0; f < frames; ++f) {
      sc.ego.push_back(RigidTransform::from_yaw(psi, pos));
      pos += cfg.ego.speed * dt * (yaw_rotation(psi) * Vec3::UnitZ());
      psi = wrap_angle(psi + cfg.ego.yaw_rate * dt);
    }
  }

  for (auto& car : sc.config.cars) {
    if (car.shape_code.size() == 0) car.shape_code = ShapeCode::Zero(space.latent_dim());
    const auto shape = to_points(space.decode(car.shape_code));
    const ShapeExtent extent = shape_extent(shape);
    // Rest the lowest point (largest y) on the ground.
    double bottom = -std::numeric_limits<double>::infinity();
    for (const Vec3& p : shape) bottom = std::max(bottom, p.y());
    std::vector<Pose4DoF> poses;
    Vec3 pos(car.start.x(), cfg.camera_height - bottom, car.start.y());
    double yaw = car.heading;
    for (std::size_t f = 0; f < frames; ++f) {
      poses.push_back({pos, wrap_angle(yaw)});
      if (car.state == MotionState::Moving) {
        pos += car.speed * dt * (yaw_rotation(yaw) * Vec3::UnitX());
        const int fi = static_cast<int>(f);
        if (fi >= car.turn_start && fi < car.turn_end) yaw += car.yaw_rate * dt;
      }
    }
    sc.car_shapes.push_back(shape);
    sc.car_extents.push_back(extent);
    sc.car_global.push_back(std::move(poses));
  }

  const auto& normals = space.normals();
  for (std::size_t f = 0; f < frames; ++f) {
    const RigidTransform& t = sc.ego[f];
    std::vector<Pose4DoF> local(sc.config.cars.size());
    std::vector<Box3D> boxes(sc.config.cars.size());
    std::vector<TruthObject> in_view;
    for (std::size_t c = 0; c < sc.config.cars.size(); ++c) {
      local[c] = {to_local_translation(sc.car_global[c][f].translation, t),
                  to_local_yaw(sc.car_global[c][f].yaw, t)};
      boxes[c] = box_from_shape(sc.car_extents[c], local[c]);
      const double depth = boxes[c].center.z();
      if (depth >= cfg.min_depth && depth <= cfg.max_depth && project_point(boxes[c].center, k).valid) {
        in_view.push_back({static_cast<int>(c), sc.config.cars[c].state, local[c], boxes[c]});
      }
    }

    std::vector<Vec3> scan;
    for (std::size_t c = 0; c < sc.config.cars.size(); ++c) {
      if ((boxes[c].center - sensor).norm() > cfg.lidar.max_range + boxes[c].length) continue;
      const Mat3 r = yaw_rotation(local[c].yaw);
      for (std::size_t i = 0; i < sc.car_shapes[c].size(); ++i) {
        const Vec3 p = r * sc.car_shapes[c][i] + local[c].translation;
        if ((r * normals[i]).dot(p - sensor) >= 0.0) continue;
        if ((p - sensor).norm() > cfg.lidar.max_range) continue;
        if (detail::occluded(sensor, p, boxes, static_cast<int>(c))) continue;
        if (cfg.lidar.dropout > 0.0 && unit(rng) < cfg.lidar.dropout) continue;
        Vec3 q = p;
        if (cfg.lidar.noise > 0.0) q += cfg.lidar.noise * Vec3(gauss(rng), gauss(rng), gauss(rng));
        scan.push_back(q);
      }
    }
    for (int g = 0; g < cfg.lidar.ground_points; ++g) {
      const double x = (2.0 * unit(rng) - 1.0) * cfg.lidar.ground_half_width;
      const double z = 1.0 + unit(rng) * (cfg.lidar.ground_depth - 1.0);
      const Vec3 p(x, cfg.camera_height, z);
      if (detail::occluded(sensor, p, boxes, -1)) continue;
      Vec3 q = p;
      if (cfg.lidar.noise > 0.0) q += cfg.lidar.noise * Vec3(gauss(rng), gauss(rng), gauss(rng));
      scan.push_back(q);
    }
    sc.scans.push_back(std::move(scan));

    // Far to near, so nearer instances paint over farther ones.
    LabelImage img{k.image_width, k.image_height,
                   std::vector<std::uint8_t>(static_cast<std::size_t>(k.image_width) * k.image_height, 0)};
    std::vector<std::size_t> order(in_view.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return in_view[a].box.center.norm() > in_view[b].box.center.norm();
    });
    for (std::size_t i : order) {
      const auto hull = projected_box_hull(in_view[i].box, k);
      const InstanceMask m = InstanceMask::from_polygon(k.image_width, k.image_height, hull);
      for (int y = 0; y < k.image_height; ++y) {
        for (int x = 0; x < k.image_width; ++x) {
          if (m.at(x, y)) img.pixels[static_cast<std::size_t>(y) * k.image_width + x] = static_cast<std::uint8_t>(i + 1);
        }
      }
    }
    sc.masks.push_back(std::move(img));
    sc.truth.push_back(std::move(in_view));
  }
  return sc;
}

struct SyntheticDetection {
  ObjectObservation observation;
  int truth_index = -1;  // into Scenario::truth[frame]
};

// True poses plus Gaussian noise, with false negatives. Scores are drawn
// uniformly from [0.5, 1).
inline std::vector<std::vector<SyntheticDetection>> make_detections(const Scenario& sc, const DetectionNoise& noise,
                                                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<SyntheticDetection>> out(sc.truth.size());
  for (std::size_t f = 0; f < sc.truth.size(); ++f) {
    for (std::size_t i = 0; i < sc.truth[f].size(); ++i) {
      const TruthObject& obj = sc.truth[f][i];
      // Draw every variate so the stream does not depend on the outcome.
      const bool missed = unit(rng) < noise.false_negative_rate;
      const Vec3 dt(gauss(rng), gauss(rng), gauss(rng));
      const double dyaw = gauss(rng);
      const double score = 0.5 + 0.5 * unit(rng);
      if (missed) continue;
      SyntheticDetection det;
      det.truth_index = static_cast<int>(i);
      det.observation.frame_index = static_cast<int>(f);
      det.observation.pose.translation = obj.pose.translation + noise.sigma_t * dt;
      det.observation.pose.yaw = wrap_angle(obj.pose.yaw + noise.sigma_yaw * dyaw);
      det.observation.shape_code = sc.shape_code(obj.track_id);
      det.observation.confidence = score;
      det.observation.detection_index = static_cast<int>(out[f].size());
      out[f].push_back(std::move(det));
    }
  }
  return out;
}

inline std::uint64_t detection_seed(std::uint64_t seed, int iteration) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(iteration);
}

inline std::string detections_dir_name(int iteration) {
  return iteration == 1 ? "detections" : "detections_" + std::to_string(iteration);
}

// Writes the pipeline input layout: detections[_k]/ for iterations 1..n,
// velodyne/, masks/, poses.txt, calib.txt, label_gt/, shape_space.bin.
inline void write_sequence(const std::filesystem::path& dir, const Scenario& sc, int iterations) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const char* sub : {"velodyne", "masks", "label_gt"}) fs::create_directories(dir / sub);
  write_poses(dir / "poses.txt", sc.ego);
  write_calibration(dir / "calib.txt", sc.calibration);
  save_shape_space(sc.shape_space, (dir / "shape_space.bin").string());
  const RigidTransform cam_to_velo = sc.calibration.velo_to_rect().inverse();
  for (std::size_t f = 0; f < sc.truth.size(); ++f) {
    const int frame = static_cast<int>(f);
    std::vector<Vec3> velo;
    velo.reserve(sc.scans[f].size());
    for (const Vec3& p : sc.scans[f]) velo.push_back(cam_to_velo.apply(p));
    write_velodyne(dir / "velodyne" / frame_file_name(frame, ".bin"), velo);
    write_pgm(dir / "masks" / frame_file_name(frame, ".pgm"), sc.masks[f]);
    std::vector<LabelRecord> gt;
    for (const auto& obj : sc.truth[f]) gt.push_back({"Car", obj.box, {}});
    write_labels(dir / "label_gt" / frame_file_name(frame, ".txt"), gt);
  }
  for (int it = 1; it <= iterations; ++it) {
    const fs::path det_dir = dir / detections_dir_name(it);
    fs::create_directories(det_dir);
    const auto dets = make_detections(sc, detection_provider(it, sc.config.noise, sc.config.schedule),
                                      detection_seed(sc.config.seed, it));
    for (std::size_t f = 0; f < dets.size(); ++f) {
      std::vector<LabelRecord> recs;
      for (const auto& d : dets[f]) {
        const auto shape = to_points(sc.shape_space.decode(d.observation.shape_code));
        recs.push_back({"Car", box_from_shape(shape_extent(shape), d.observation.pose, d.observation.confidence),
                        d.observation.shape_code});
      }
      write_labels(det_dir / frame_file_name(static_cast<int>(f), ".txt"), recs);
    }
  }
}

// Street scene: parked cars along both curbs, a lead car, an oncoming car
// and a car turning off the road ahead.
inline ScenarioConfig default_scenario_config(const ShapeSpace& space, std::uint64_t seed = 1) {
  ScenarioConfig cfg;
  cfg.seed = seed;
  cfg.noise = {0.5, 0.15, 0.3};
  cfg.lidar.noise = 0.02;
  cfg.lidar.dropout = 0.1;
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto random_code = [&]() {
    ShapeCode code(space.latent_dim());
    for (int i = 0; i < space.latent_dim(); ++i) {
      const double sd = space.eigenvalues().size() > i ? std::sqrt(space.eigenvalues()(i)) : 0.0;
      code(i) = sd * std::clamp(gauss(rng), -2.0, 2.0);
    }
    return code;
  };
  for (double z : {8.0, 15.0, 22.0, 29.0, 36.0}) {
    CarSpec c;
    c.start = Vec2(-4.5 + 0.3 * (unit(rng) - 0.5), z + 2.0 * (unit(rng) - 0.5));
    c.heading = -kPi / 2.0 + 0.1 * (unit(rng) - 0.5);
    c.shape_code = random_code();
    cfg.cars.push_back(c);
  }
  for (double z : {10.0, 18.0, 26.0, 34.0}) {
    CarSpec c;
    c.start = Vec2(4.5 + 0.3 * (unit(rng) - 0.5), z + 2.0 * (unit(rng) - 0.5));
    c.heading = kPi / 2.0 + 0.1 * (unit(rng) - 0.5);
    c.shape_code = random_code();
    cfg.cars.push_back(c);
  }
  CarSpec lead;
  lead.state = MotionState::Moving;
  lead.start = Vec2(0.0, 12.0);
  lead.speed = 7.0;
  lead.shape_code = random_code();
  cfg.cars.push_back(lead);
  CarSpec oncoming;
  oncoming.state = MotionState::Moving;
  oncoming.start = Vec2(-2.0, 40.0);
  oncoming.heading = kPi / 2.0;
  oncoming.speed = 8.0;
  oncoming.shape_code = random_code();
  cfg.cars.push_back(oncoming);
  CarSpec turning;
  turning.state = MotionState::Moving;
  turning.start = Vec2(2.2, 38.0);
  turning.speed = 6.0;
  turning.yaw_rate = -1.0;
  turning.turn_start = 5;
  turning.turn_end = 20;
  turning.shape_code = random_code();
  cfg.cars.push_back(turning);
  return cfg;
}

}  // namespace pseudolabel
