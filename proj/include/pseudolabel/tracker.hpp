#pragma once

#include <algorithm>
#include <optional>
#include <tuple>
#include <vector>

#include "pseudolabel/geometry.hpp"
#include "pseudolabel/shapespace.hpp"

namespace pseudolabel {

enum class MotionState { Undecided, Static, Moving };

inline const char* to_string(MotionState s) {
  switch (s) {
    case MotionState::Static: return "static";
    case MotionState::Moving: return "moving";
    case MotionState::Undecided: return "undecided";
  }
  return "undecided";
}

struct ObjectObservation {
  int frame_index = 0;
  Pose4DoF pose;  // local camera frame of frame_index
  ShapeCode shape_code;
  double confidence = 1.0;
  bool detected = true;    // false for poses propagated into missed frames
  int detection_index = -1;  // position within the frame's detection list
};

struct Tracklet {
  int track_id = 0;
  std::vector<ObjectObservation> observations;  // strictly increasing frame_index
  MotionState motion_state = MotionState::Undecided;

  int first_frame() const { return observations.front().frame_index; }
  int last_frame() const { return observations.back().frame_index; }
};

struct TrackerConfig {
  double gate_radius = 2.0;  // meters
  int max_age = 3;           // frames a track may go unmatched and still continue
};

// Greedy nearest-neighbor association in the global frame. `frames[f]` holds
// the detections of frame f and `ego[f]` maps frame f to frame 0. Tracks coast
// at constant velocity while unmatched.
inline std::vector<Tracklet> associate(const std::vector<std::vector<ObjectObservation>>& frames,
                                       const EgoTrajectory& ego, const TrackerConfig& cfg = {}) {
  if (!(cfg.gate_radius > 0.0)) throw Error(ErrorCode::ConfigInvalid, "gate_radius must be positive");
  if (ego.size() < frames.size()) throw Error(ErrorCode::InputMissing, "ego trajectory shorter than detections");

  struct Active {
    std::size_t tracklet;
    Vec3 last_position;
    Vec3 velocity;  // per frame
    int last_frame;
  };
  std::vector<Tracklet> tracklets;
  std::vector<Active> active;

  for (std::size_t f = 0; f < frames.size(); ++f) {
    const int frame = static_cast<int>(f);
    std::erase_if(active, [&](const Active& a) { return frame - a.last_frame > cfg.max_age + 1; });

    const auto& dets = frames[f];
    std::vector<Vec3> det_global;
    det_global.reserve(dets.size());
    for (const auto& d : dets) det_global.push_back(to_global_translation(d.pose.translation, ego[f]));

    // (distance, track id, detection index) sorted gives the documented tie order.
    std::vector<std::tuple<double, int, std::size_t, std::size_t>> candidates;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const Active& tr = active[a];
      const Vec3 predicted = tr.last_position + tr.velocity * static_cast<double>(frame - tr.last_frame);
      for (std::size_t d = 0; d < dets.size(); ++d) {
        const double dist = (det_global[d] - predicted).norm();
        if (dist <= cfg.gate_radius) {
          candidates.emplace_back(dist, tracklets[tr.tracklet].track_id, d, a);
        }
      }
    }
    std::sort(candidates.begin(), candidates.end());

    std::vector<bool> det_used(dets.size(), false);
    std::vector<bool> track_used(active.size(), false);
    for (const auto& [dist, id, d, a] : candidates) {
      if (det_used[d] || track_used[a]) continue;
      det_used[d] = true;
      track_used[a] = true;
      Active& tr = active[a];
      const int gap = frame - tr.last_frame;
      tr.velocity = (det_global[d] - tr.last_position) / static_cast<double>(gap);
      tr.last_position = det_global[d];
      tr.last_frame = frame;
      ObjectObservation obs = dets[d];
      obs.frame_index = frame;
      if (obs.detection_index < 0) obs.detection_index = static_cast<int>(d);
      tracklets[tr.tracklet].observations.push_back(std::move(obs));
    }

    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (det_used[d]) continue;
      Tracklet t;
      t.track_id = static_cast<int>(tracklets.size());
      ObjectObservation obs = dets[d];
      obs.frame_index = frame;
      if (obs.detection_index < 0) obs.detection_index = static_cast<int>(d);
      t.observations.push_back(std::move(obs));
      tracklets.push_back(std::move(t));
      active.push_back({tracklets.size() - 1, det_global[d], Vec3::Zero(), frame});
    }
  }
  return tracklets;
}

}  // namespace pseudolabel
