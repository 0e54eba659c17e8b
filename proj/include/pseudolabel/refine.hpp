#pragma once

// Per-observation pose refinement against the combined objective
//   L = L_CD + lambda_t |t - t*|^2 + lambda_r wrap(yaw - yaw*)^2,
// where (t*, yaw*) are the static or moving targets of the observation's
// tracklet and the temporal part vanishes for undecided tracklets.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include "pseudolabel/chamfer.hpp"
#include "pseudolabel/error.hpp"
#include "pseudolabel/geometry.hpp"
#include "pseudolabel/motion.hpp"
#include "pseudolabel/tracker.hpp"

namespace pseudolabel {

struct RefinementConfig {
  double lambda_t = 0.25;
  double lambda_r = 2.0;
  int steps = 100;
  double step_size_translation = 0.02;  // initial per-axis step, meters
  double step_size_yaw = 0.01;          // initial step, radians
  int max_halvings = 5;
  // Step sizes grow by `step_growth` while a gradient component keeps its
  // sign and shrink by `step_shrink` when it flips.
  double step_growth = 1.2;
  double step_shrink = 0.5;
  double max_step_translation = 1.0;
  double max_step_yaw = 0.5;

  bool normalized_chamfer = false;
  // Score only the sensor-facing part of the model (needs shape normals),
  // and take model-to-scan residuals only from model points that project
  // onto the instance mask.
  bool visible_model_only = true;
  bool mask_model_points = true;
};

struct TargetEntry {
  MotionState state = MotionState::Undecided;
  Vec3 translation = Vec3::Zero();  // local frame
  double yaw = 0.0;
};

// Everything the objective needs for one observation. The scan index and
// mask are shared read-only.
struct ObservationScene {
  std::vector<Vec3> shape;    // decoded shape, object frame
  std::vector<Vec3> normals;  // per shape point, object frame; may be empty
  std::shared_ptr<const KdTree> scan;  // mask-filtered scan, camera frame; may be null
  std::shared_ptr<const InstanceMask> mask;
  CameraIntrinsics intrinsics;
  Vec3 sensor_origin = Vec3::Zero();  // lidar origin in the camera frame
  std::optional<TargetEntry> target;

  bool has_scan() const { return scan && !scan->empty(); }
  bool has_temporal() const { return target && target->state != MotionState::Undecided; }
};

struct LossEvaluation {
  double total = 0.0;
  double chamfer = 0.0;
  double temporal = 0.0;
  Vec3 grad_translation = Vec3::Zero();
  double grad_yaw = 0.0;
};

namespace detail {

inline void select_model_points(const ObservationScene& scene, const Pose4DoF& pose, const RefinementConfig& cfg,
                                std::vector<std::uint8_t>& visible, std::vector<std::uint8_t>& in_mask) {
  const std::size_t n = scene.shape.size();
  visible.assign(n, 1);
  in_mask.assign(n, 1);
  const bool cull = cfg.visible_model_only && scene.normals.size() == n;
  const bool use_mask = cfg.mask_model_points && scene.mask;
  if (!cull && !use_mask) return;
  const Mat3 r = yaw_rotation(pose.yaw);
  std::size_t visible_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = r * scene.shape[i] + pose.translation;
    if (cull && (r * scene.normals[i]).dot(p - scene.sensor_origin) >= 0.0) visible[i] = 0;
    visible_count += visible[i];
    in_mask[i] = visible[i];
    if (use_mask && in_mask[i]) {
      const ProjectedPoint proj = project_point(p, scene.intrinsics);
      const bool hit = proj.valid && scene.mask->at(static_cast<int>(proj.pixel.x()), static_cast<int>(proj.pixel.y()));
      in_mask[i] = hit ? 1 : 0;
    }
  }
  if (visible_count == 0) {
    visible.assign(n, 1);
    in_mask.assign(n, 1);
  }
}

}  // namespace detail

inline LossEvaluation evaluate_loss(const ObservationScene& scene, const Pose4DoF& pose, const RefinementConfig& cfg) {
  if (!scene.has_scan() && !scene.has_temporal()) {
    throw Error(ErrorCode::NoSignal, "no scan points and no temporal target");
  }
  LossEvaluation out;
  if (scene.has_scan() && !scene.shape.empty()) {
    std::vector<std::uint8_t> visible;
    std::vector<std::uint8_t> in_mask;
    detail::select_model_points(scene, pose, cfg, visible, in_mask);
    const PoseGradient g =
        chamfer_gradient_subset(scene.shape, pose, *scene.scan, visible, in_mask, {cfg.normalized_chamfer});
    out.chamfer = g.loss;
    out.grad_translation += g.translation;
    out.grad_yaw += g.yaw;
  }
  if (scene.has_temporal()) {
    const Vec3 dt = pose.translation - scene.target->translation;
    const double dyaw = wrap_angle(pose.yaw - scene.target->yaw);
    out.temporal = cfg.lambda_t * dt.squaredNorm() + cfg.lambda_r * dyaw * dyaw;
    out.grad_translation += 2.0 * cfg.lambda_t * dt;
    out.grad_yaw += 2.0 * cfg.lambda_r * dyaw;
  }
  out.total = out.chamfer + out.temporal;
  return out;
}

struct RefinementResult {
  Pose4DoF pose;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int accepted_steps = 0;
};

// Sign-based first-order descent with per-parameter step sizes (t_x, t_y,
// t_z, yaw). A step is accepted only if it does not increase the loss; a
// rejected step is halved up to cfg.max_halvings times. Correspondences are
// recomputed at every evaluated pose.
inline RefinementResult refine_pose(const ObservationScene& scene, const Pose4DoF& initial, const RefinementConfig& cfg) {
  RefinementResult result;
  result.pose = initial;
  result.pose.yaw = wrap_angle(initial.yaw);
  LossEvaluation current = evaluate_loss(scene, result.pose, cfg);
  result.initial_loss = current.total;

  std::array<double, 4> step = {cfg.step_size_translation, cfg.step_size_translation, cfg.step_size_translation,
                                cfg.step_size_yaw};
  const std::array<double, 4> max_step = {cfg.max_step_translation, cfg.max_step_translation,
                                          cfg.max_step_translation, cfg.max_step_yaw};
  std::array<double, 4> previous = {0.0, 0.0, 0.0, 0.0};

  for (int it = 0; it < cfg.steps; ++it) {
    const std::array<double, 4> grad = {current.grad_translation.x(), current.grad_translation.y(),
                                        current.grad_translation.z(), current.grad_yaw};
    std::array<double, 4> delta{};
    for (int k = 0; k < 4; ++k) {
      const double agreement = previous[k] * grad[k];
      if (agreement > 0.0) step[k] = std::min(step[k] * cfg.step_growth, max_step[k]);
      if (agreement < 0.0) step[k] *= cfg.step_shrink;
      delta[k] = grad[k] > 0.0 ? -step[k] : (grad[k] < 0.0 ? step[k] : 0.0);
    }

    bool accepted = false;
    double scale = 1.0;
    for (int h = 0; h <= cfg.max_halvings && !accepted; ++h, scale *= 0.5) {
      Pose4DoF candidate = result.pose;
      candidate.translation += scale * Vec3(delta[0], delta[1], delta[2]);
      candidate.yaw = wrap_angle(candidate.yaw + scale * delta[3]);
      const LossEvaluation trial = evaluate_loss(scene, candidate, cfg);
      if (trial.total <= current.total) {
        result.pose = candidate;
        current = trial;
        accepted = true;
      }
    }
    if (accepted) {
      previous = grad;
      ++result.accepted_steps;
    } else {
      for (double& s : step) s *= cfg.step_shrink;
      previous = {0.0, 0.0, 0.0, 0.0};
    }
  }
  result.final_loss = current.total;
  return result;
}

// Refines one observation; observations without any signal (no scan points
// and no temporal target) are returned unchanged.
inline ObjectObservation refine_observation(const ObjectObservation& obs, const ObservationScene& scene,
                                            const RefinementConfig& cfg) {
  if (!scene.has_scan() && !scene.has_temporal()) return obs;
  ObjectObservation out = obs;
  out.pose = refine_pose(scene, obs.pose, cfg).pose;
  return out;
}

inline std::optional<TargetEntry> target_entry(const TemporalTargets& targets, std::size_t i) {
  if (!targets.has_targets()) return std::nullopt;
  return TargetEntry{targets.state, targets.translation.at(i), targets.yaw.at(i)};
}

struct PropagationConfig {
  double min_depth = 0.5;  // meters in front of the camera
  double confidence = 0.5;
};

// Copies a refined static global pose into the frames of the tracklet's span
// that have no observation, when the object would be in view there.
inline std::vector<ObjectObservation> propagate_static(const Tracklet& tracklet, const Pose4DoF& global_pose,
                                                       const EgoTrajectory& ego, const CameraIntrinsics& intrinsics,
                                                       const PropagationConfig& cfg = {}) {
  std::vector<ObjectObservation> out;
  if (tracklet.observations.empty()) return out;
  const ObjectObservation* best = &tracklet.observations.front();
  for (const auto& obs : tracklet.observations) {
    if (obs.confidence > best->confidence) best = &obs;
  }
  std::size_t next = 0;
  for (int frame = tracklet.first_frame(); frame <= tracklet.last_frame(); ++frame) {
    while (next < tracklet.observations.size() && tracklet.observations[next].frame_index < frame) ++next;
    if (next < tracklet.observations.size() && tracklet.observations[next].frame_index == frame) continue;
    const RigidTransform& t = ego.at(static_cast<std::size_t>(frame));
    const Vec3 local = to_local_translation(global_pose.translation, t);
    if (local.z() <= cfg.min_depth) continue;
    if (!project_point(local, intrinsics).valid) continue;
    ObjectObservation obs;
    obs.frame_index = frame;
    obs.pose.translation = local;
    obs.pose.yaw = to_local_yaw(global_pose.yaw, t);
    obs.shape_code = best->shape_code;
    obs.confidence = cfg.confidence;
    obs.detected = false;
    out.push_back(std::move(obs));
  }
  return out;
}

}  // namespace pseudolabel
