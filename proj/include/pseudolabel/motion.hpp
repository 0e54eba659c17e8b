#pragma once

// Motion-state classification and temporal regularization targets. Ground
// plane quantities use the global x and z axes (the frame-0 camera frame has
// y pointing down).

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>

#include "pseudolabel/error.hpp"
#include "pseudolabel/geometry.hpp"
#include "pseudolabel/tracker.hpp"

namespace pseudolabel {

enum class CrossingAxes {
  // Sign flips of the velocity component along the net displacement.
  TravelDirection,
  // Sign flips on either ground-plane axis.
  Either,
};

struct MotionConfig {
  int min_frames = 6;
  double distance_threshold = 3.0;  // meters of net ground-plane displacement
  double zero_crossing_ratio = 0.40;
  double velocity_deadband = 0.05;  // m/s; smaller speeds count as zero
  // Compare each axis against the threshold instead of the combined norm.
  bool per_axis_threshold = false;
  // Divide crossing events by the observation count instead of (samples - 1).
  bool crossings_per_observation = false;
  CrossingAxes crossing_axes = CrossingAxes::TravelDirection;

  int histogram_bins = 32;
  int segment_length = 10;
  int min_segment_length = 4;  // shorter trailing segments merge into their predecessor
  double ransac_threshold = 0.3;
  int ransac_iterations = 100;
  std::uint64_t ransac_seed = 1234;
};

struct GlobalTrack {
  std::vector<int> frames;
  std::vector<double> timestamps;  // seconds
  std::vector<Vec3> positions;     // frame-0 camera frame
  std::vector<double> yaws;
  std::vector<bool> yaw_valid;  // false when the heading was degenerate

  std::size_t size() const { return positions.size(); }
};

inline GlobalTrack build_global_track(const Tracklet& tracklet, const EgoTrajectory& ego, double frame_rate = 10.0) {
  GlobalTrack g;
  for (const auto& obs : tracklet.observations) {
    const auto& t = ego.at(static_cast<std::size_t>(obs.frame_index));
    g.frames.push_back(obs.frame_index);
    g.timestamps.push_back(obs.frame_index / frame_rate);
    g.positions.push_back(to_global_translation(obs.pose.translation, t));
    try {
      g.yaws.push_back(to_global_yaw(obs.pose.yaw, t));
      g.yaw_valid.push_back(true);
    } catch (const Error&) {
      g.yaws.push_back(0.0);
      g.yaw_valid.push_back(false);
    }
  }
  return g;
}

struct VelocityProfile {
  std::vector<double> vx;  // global x, m/s
  std::vector<double> vz;  // global z, m/s
  std::vector<double> dt;  // seconds between consecutive observations

  std::size_t size() const { return vx.size(); }
};

inline VelocityProfile velocity_profile(const GlobalTrack& track) {
  if (track.size() < 2) throw Error(ErrorCode::TooShort, "velocity profile needs at least 2 observations");
  VelocityProfile v;
  for (std::size_t k = 0; k + 1 < track.size(); ++k) {
    const double dt = track.timestamps[k + 1] - track.timestamps[k];
    if (!(dt > 0.0)) throw Error(ErrorCode::TooShort, "timestamps must be strictly increasing");
    v.dt.push_back(dt);
    v.vx.push_back((track.positions[k + 1].x() - track.positions[k].x()) / dt);
    v.vz.push_back((track.positions[k + 1].z() - track.positions[k].z()) / dt);
  }
  return v;
}

namespace detail {

inline int deadband_sign(double v, double deadband) {
  if (std::abs(v) < deadband) return 0;
  return v > 0.0 ? 1 : -1;
}

}  // namespace detail

// Number of steps k at which the velocity flips sign on either ground-plane
// axis. Samples inside the deadband never flip.
inline int count_zero_crossings(const VelocityProfile& v, double deadband) {
  int events = 0;
  for (std::size_t k = 0; k + 1 < v.size(); ++k) {
    bool crossed = false;
    for (const auto* axis : {&v.vx, &v.vz}) {
      const int a = detail::deadband_sign((*axis)[k], deadband);
      const int b = detail::deadband_sign((*axis)[k + 1], deadband);
      crossed = crossed || (a != 0 && b != 0 && a != b);
    }
    events += crossed ? 1 : 0;
  }
  return events;
}

// Same count for the velocity component along the unit ground-plane
// direction (ux, uz).
inline int count_zero_crossings_along(const VelocityProfile& v, double ux, double uz, double deadband) {
  int events = 0;
  for (std::size_t k = 0; k + 1 < v.size(); ++k) {
    const int a = detail::deadband_sign(v.vx[k] * ux + v.vz[k] * uz, deadband);
    const int b = detail::deadband_sign(v.vx[k + 1] * ux + v.vz[k + 1] * uz, deadband);
    events += (a != 0 && b != 0 && a != b) ? 1 : 0;
  }
  return events;
}

inline MotionState classify_motion(const GlobalTrack& track, const MotionConfig& cfg = {}) {
  if (static_cast<int>(track.size()) < cfg.min_frames || track.size() < 2) return MotionState::Undecided;
  const VelocityProfile v = velocity_profile(track);

  double dx = 0.0;
  double dz = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    dx += v.vx[k] * v.dt[k];
    dz += v.vz[k] * v.dt[k];
  }
  const bool small = cfg.per_axis_threshold
                         ? (std::abs(dx) < cfg.distance_threshold && std::abs(dz) < cfg.distance_threshold)
                         : std::hypot(dx, dz) < cfg.distance_threshold;
  if (small) return MotionState::Static;

  const double net = std::hypot(dx, dz);
  const int events = cfg.crossing_axes == CrossingAxes::Either
                         ? count_zero_crossings(v, cfg.velocity_deadband)
                         : count_zero_crossings_along(v, dx / net, dz / net, cfg.velocity_deadband);
  const double denom = cfg.crossings_per_observation ? static_cast<double>(track.size())
                                                     : static_cast<double>(v.size()) - 1.0;
  if (denom > 0.0 && events / denom >= cfg.zero_crossing_ratio) return MotionState::Static;
  return MotionState::Moving;
}

struct TemporalTargets {
  MotionState state = MotionState::Undecided;
  // Per observation, in that observation's local frame. Empty when Undecided.
  std::vector<Vec3> translation;
  std::vector<double> yaw;
  // The same targets in the global frame.
  std::vector<Vec3> global_translation;
  std::vector<double> global_yaw;

  bool has_targets() const { return state != MotionState::Undecided && !translation.empty(); }
};

inline double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::TooShort, "median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

inline Vec3 coordinate_median(const std::vector<Vec3>& points) {
  Vec3 out;
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<double> values;
    values.reserve(points.size());
    for (const Vec3& p : points) values.push_back(p(axis));
    out(axis) = median(std::move(values));
  }
  return out;
}

// Circular mean of the angles in the most populated of `bins` equal bins
// over [-pi, pi). Ties go to the lowest bin.
inline double histogram_mode_yaw(const std::vector<double>& yaws, const std::vector<bool>& valid, int bins = 32) {
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  auto bin_of = [&](double yaw) {
    const int b = static_cast<int>(std::floor((wrap_angle(yaw) + kPi) / kTwoPi * bins));
    return std::clamp(b, 0, bins - 1);
  };
  bool any = false;
  for (std::size_t i = 0; i < yaws.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    ++counts[static_cast<std::size_t>(bin_of(yaws[i]))];
    any = true;
  }
  if (!any) throw Error(ErrorCode::NoValidYaw, "no valid heading observation");
  const int mode = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  double s = 0.0;
  double c = 0.0;
  for (std::size_t i = 0; i < yaws.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    if (bin_of(yaws[i]) != mode) continue;
    s += std::sin(yaws[i]);
    c += std::cos(yaws[i]);
  }
  return wrap_angle(std::atan2(s, c));
}

namespace detail {

inline void project_targets_to_local(TemporalTargets& out, const GlobalTrack& track, const EgoTrajectory& ego) {
  out.translation.clear();
  out.yaw.clear();
  for (std::size_t i = 0; i < track.size(); ++i) {
    const auto& t = ego.at(static_cast<std::size_t>(track.frames[i]));
    out.translation.push_back(to_local_translation(out.global_translation[i], t));
    out.yaw.push_back(to_local_yaw(out.global_yaw[i], t));
  }
}

}  // namespace detail

inline TemporalTargets static_targets(const GlobalTrack& track, const EgoTrajectory& ego, const MotionConfig& cfg = {}) {
  if (track.size() == 0) throw Error(ErrorCode::TooShort, "static targets of an empty track");
  const Vec3 center = coordinate_median(track.positions);
  const double yaw = histogram_mode_yaw(track.yaws, track.yaw_valid, cfg.histogram_bins);
  TemporalTargets out;
  out.state = MotionState::Static;
  out.global_translation.assign(track.size(), center);
  out.global_yaw.assign(track.size(), yaw);
  detail::project_targets_to_local(out, track, ego);
  return out;
}

struct RansacLine {
  Vec2 point = Vec2::Zero();
  Vec2 direction = Vec2::UnitX();  // unit length
  std::vector<bool> inliers;
  int inlier_count = 0;

  Vec2 project(const Vec2& p) const { return point + (p - point).dot(direction) * direction; }
  double distance(const Vec2& p) const { return std::abs(direction.x() * (p.y() - point.y()) - direction.y() * (p.x() - point.x())); }
};

// Total least squares line through `points` (centroid + principal axis).
inline RansacLine fit_line_tls(const std::vector<Vec2>& points) {
  Vec2 centroid = Vec2::Zero();
  for (const Vec2& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
  for (const Vec2& p : points) scatter += (p - centroid) * (p - centroid).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> solver(scatter);
  RansacLine line;
  line.point = centroid;
  line.direction = solver.eigenvectors().col(1).normalized();
  return line;
}

inline RansacLine ransac_line(const std::vector<Vec2>& points, double inlier_threshold, int iterations,
                              std::uint64_t seed) {
  if (points.size() < 2) throw Error(ErrorCode::TooShort, "RANSAC line needs at least 2 points");
  if (!(inlier_threshold > 0.0)) throw Error(ErrorCode::ConfigInvalid, "inlier threshold must be positive");

  Vec2 centroid = Vec2::Zero();
  for (const Vec2& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  bool spread = false;
  for (const Vec2& p : points) spread = spread || (p - centroid).norm() > inlier_threshold;
  if (!spread) throw Error(ErrorCode::Degenerate, "all points lie within the inlier threshold of one point");

  const std::size_t n = points.size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  auto evaluate = [&](std::size_t i, std::size_t j, RansacLine& best) {
    const Vec2 d = points[j] - points[i];
    if (d.norm() < 1e-12) return;
    RansacLine cand;
    cand.point = points[i];
    cand.direction = d.normalized();
    cand.inliers.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      cand.inliers[k] = cand.distance(points[k]) <= inlier_threshold;
      cand.inlier_count += cand.inliers[k] ? 1 : 0;
    }
    if (cand.inlier_count > best.inlier_count) best = std::move(cand);
  };

  RansacLine best;
  best.inlier_count = -1;
  if (n == 2) {
    evaluate(0, 1, best);
  } else {
    for (int it = 0; it < iterations; ++it) {
      const std::size_t i = pick(rng);
      std::size_t j = pick(rng);
      while (j == i) j = pick(rng);
      evaluate(i, j, best);
    }
  }
  if (best.inlier_count < 2) {
    // Every sampled pair coincided; fall back to the two most distant points.
    std::size_t far = 0;
    for (std::size_t k = 1; k < n; ++k) {
      if ((points[k] - points[0]).norm() > (points[far] - points[0]).norm()) far = k;
    }
    evaluate(0, far, best);
  }

  std::vector<Vec2> inlier_points;
  for (std::size_t k = 0; k < n; ++k) {
    if (best.inliers[k]) inlier_points.push_back(points[k]);
  }
  RansacLine refined = fit_line_tls(inlier_points);
  refined.inliers = std::move(best.inliers);
  refined.inlier_count = best.inlier_count;
  return refined;
}

// Observation index ranges [begin, end) of the piecewise-linear segments.
inline std::vector<std::pair<std::size_t, std::size_t>> split_segments(std::size_t n, int segment_length,
                                                                       int min_segment_length) {
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  const auto len = static_cast<std::size_t>(std::max(1, segment_length));
  for (std::size_t b = 0; b < n; b += len) segments.emplace_back(b, std::min(n, b + len));
  if (segments.size() >= 2) {
    const auto& last = segments.back();
    if (last.second - last.first < static_cast<std::size_t>(min_segment_length)) {
      const std::size_t end = last.second;
      segments.pop_back();
      segments.back().second = end;
    }
  }
  return segments;
}

namespace detail {

inline TemporalTargets linear_targets(const GlobalTrack& track, const EgoTrajectory& ego, const MotionConfig& cfg,
                                      int segment_length) {
  if (track.size() < 2) throw Error(ErrorCode::TooShort, "moving targets need at least 2 observations");
  TemporalTargets out;
  out.state = MotionState::Moving;
  out.global_translation.resize(track.size());
  out.global_yaw.resize(track.size());

  const auto segments = split_segments(track.size(), segment_length, cfg.min_segment_length);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto [begin, end] = segments[s];
    std::vector<Vec2> ground;
    std::vector<double> heights;
    for (std::size_t i = begin; i < end; ++i) {
      ground.emplace_back(track.positions[i].x(), track.positions[i].z());
      heights.push_back(track.positions[i].y());
    }
    const double height = median(heights);

    std::optional<RansacLine> line;
    if (ground.size() >= 2) {
      try {
        line = ransac_line(ground, cfg.ransac_threshold, cfg.ransac_iterations, cfg.ransac_seed + s);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Degenerate) throw;
      }
    }

    if (!line) {
      // Degenerate segment: hold it at its median pose.
      std::vector<Vec3> pts(track.positions.begin() + static_cast<std::ptrdiff_t>(begin),
                            track.positions.begin() + static_cast<std::ptrdiff_t>(end));
      const Vec3 center = coordinate_median(pts);
      std::vector<double> yaws(track.yaws.begin() + static_cast<std::ptrdiff_t>(begin),
                               track.yaws.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<bool> valid(track.yaw_valid.begin() + static_cast<std::ptrdiff_t>(begin),
                              track.yaw_valid.begin() + static_cast<std::ptrdiff_t>(end));
      double yaw = 0.0;
      bool have_yaw = true;
      try {
        yaw = histogram_mode_yaw(yaws, valid, cfg.histogram_bins);
      } catch (const Error&) {
        have_yaw = false;
      }
      for (std::size_t i = begin; i < end; ++i) {
        out.global_translation[i] = center;
        out.global_yaw[i] = have_yaw ? yaw : track.yaws[i];
      }
      continue;
    }

    Vec2 dir = line->direction;
    if (dir.dot(ground.back() - ground.front()) < 0.0) dir = -dir;
    const double yaw = wrap_angle(heading_angle(dir.x(), dir.y()));
    for (std::size_t i = begin; i < end; ++i) {
      const Vec2 on_line = line->project(ground[i - begin]);
      out.global_translation[i] = Vec3(on_line.x(), height, on_line.y());
      out.global_yaw[i] = yaw;
    }
  }
  detail::project_targets_to_local(out, track, ego);
  return out;
}

}  // namespace detail

// Piecewise-linear motion model: one RANSAC line per segment of
// cfg.segment_length observations.
inline TemporalTargets moving_targets(const GlobalTrack& track, const EgoTrajectory& ego, const MotionConfig& cfg = {}) {
  return detail::linear_targets(track, ego, cfg, cfg.segment_length);
}

// A single RANSAC line over the whole track.
inline TemporalTargets global_linear_targets(const GlobalTrack& track, const EgoTrajectory& ego,
                                             const MotionConfig& cfg = {}) {
  return detail::linear_targets(track, ego, cfg, static_cast<int>(std::max<std::size_t>(track.size(), 1)));
}

// CSV rows: frame,t,x,y,z,vx,vz,state. The velocity of the last observation
// repeats the previous sample.
inline void write_profile_csv(std::ostream& os, int track_id, const GlobalTrack& track, MotionState state,
                              bool header = true) {
  if (header) os << "track,frame,t,x,y,z,vx,vz,state\n";
  if (track.size() == 0) return;
  VelocityProfile v;
  if (track.size() >= 2) v = velocity_profile(track);
  for (std::size_t i = 0; i < track.size(); ++i) {
    const std::size_t k = v.size() == 0 ? 0 : std::min(i, v.size() - 1);
    const double vx = v.size() == 0 ? 0.0 : v.vx[k];
    const double vz = v.size() == 0 ? 0.0 : v.vz[k];
    const Vec3& p = track.positions[i];
    os << track_id << ',' << track.frames[i] << ',' << track.timestamps[i] << ',' << p.x() << ',' << p.y() << ','
       << p.z() << ',' << vx << ',' << vz << ',' << to_string(state) << '\n';
  }
}

}  // namespace pseudolabel
