#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pseudolabel/error.hpp"
#include "pseudolabel/geometry.hpp"
#include "pseudolabel/kdtree.hpp"

namespace pseudolabel {

enum class Frame { Camera, Lidar, Global, Object };

struct PointCloud {
  std::vector<Vec3> points;
  Frame frame = Frame::Camera;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

// Row-major H x W boolean bitmap.
class InstanceMask {
 public:
  InstanceMask() = default;
  InstanceMask(int width, int height, bool fill = false)
      : width_(width), height_(height), bits_(static_cast<std::size_t>(width) * height, fill ? 1 : 0) {}

  // Filled convex polygon (vertices in pixels, any winding). A pixel is set
  // when its center lies inside or on the polygon.
  static InstanceMask from_polygon(int width, int height, std::span<const Vec2> polygon) {
    InstanceMask mask(width, height);
    if (polygon.size() < 3) return mask;
    double area2 = 0.0;
    for (std::size_t i = 0; i < polygon.size(); ++i) {
      const Vec2& a = polygon[i];
      const Vec2& b = polygon[(i + 1) % polygon.size()];
      area2 += a.x() * b.y() - b.x() * a.y();
    }
    const double orient = area2 >= 0.0 ? 1.0 : -1.0;
    double min_x = polygon[0].x(), max_x = min_x, min_y = polygon[0].y(), max_y = min_y;
    for (const Vec2& v : polygon) {
      min_x = std::min(min_x, v.x());
      max_x = std::max(max_x, v.x());
      min_y = std::min(min_y, v.y());
      max_y = std::max(max_y, v.y());
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(min_x)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(max_x)));
    const int y0 = std::max(0, static_cast<int>(std::floor(min_y)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(max_y)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Vec2 c(x + 0.5, y + 0.5);
        bool inside = true;
        for (std::size_t i = 0; i < polygon.size() && inside; ++i) {
          const Vec2& a = polygon[i];
          const Vec2& b = polygon[(i + 1) % polygon.size()];
          const double cross = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
          inside = orient * cross >= 0.0;
        }
        if (inside) mask.set(x, y, true);
      }
    }
    return mask;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool value) { bits_[static_cast<std::size_t>(y) * width_ + x] = value ? 1 : 0; }

  std::size_t support() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

// p -> R(yaw) p + t for every point of an object-frame cloud.
inline PointCloud transform_to_scene(std::span<const Vec3> shape_points, const Pose4DoF& pose) {
  const Mat3 r = yaw_rotation(pose.yaw);
  PointCloud out;
  out.frame = Frame::Camera;
  out.points.reserve(shape_points.size());
  for (const Vec3& p : shape_points) out.points.push_back(r * p + pose.translation);
  return out;
}

// Keeps the camera-frame points whose valid projection lands on a set mask
// pixel. An empty result is reported as ErrorCode::EmptyResult.
inline PointCloud filter_by_mask(const PointCloud& scan, const InstanceMask& mask, const CameraIntrinsics& k) {
  PointCloud out;
  out.frame = scan.frame;
  for (const Vec3& p : scan.points) {
    const ProjectedPoint proj = project_point(p, k);
    if (!proj.valid) continue;
    const int u = static_cast<int>(proj.pixel.x());
    const int v = static_cast<int>(proj.pixel.y());
    if (u < mask.width() && v < mask.height() && mask.at(u, v)) out.points.push_back(p);
  }
  if (out.empty()) throw Error(ErrorCode::EmptyResult, "no scan point projects onto the instance mask");
  return out;
}

inline NearestNeighbor nearest_neighbor_index(const Vec3& query, const KdTree& target) {
  return target.nearest(query);
}

struct ChamferOptions {
  // Divide each directional sum by its point count. Off by default: the
  // loss is the plain two-sided sum of squared distances.
  bool normalized = false;
};

inline double chamfer_distance(const KdTree& a, const KdTree& b, ChamferOptions opts = {}) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyCloud, "chamfer distance of an empty cloud");
  double ab = 0.0;
  for (const Vec3& x : a.points()) ab += b.nearest(x).squared_distance;
  double ba = 0.0;
  for (const Vec3& y : b.points()) ba += a.nearest(y).squared_distance;
  if (opts.normalized) {
    ab /= static_cast<double>(a.size());
    ba /= static_cast<double>(b.size());
  }
  return ab + ba;
}

inline double chamfer_distance(const PointCloud& a, const PointCloud& b, ChamferOptions opts = {}) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyCloud, "chamfer distance of an empty cloud");
  return chamfer_distance(KdTree(a.points), KdTree(b.points), opts);
}

struct PoseGradient {
  Vec3 translation = Vec3::Zero();
  double yaw = 0.0;
  double loss = 0.0;
};

// Chamfer loss and pose gradient over subsets of the model points. Scan
// points are matched against the model points flagged in `match_targets`;
// residuals from model to scan are summed over the points flagged in
// `model_terms`. Correspondences are frozen at `pose`, so the gradient is
// that of the fixed-correspondence objective. Empty flag spans select all
// points.
inline PoseGradient chamfer_gradient_subset(std::span<const Vec3> shape_points, const Pose4DoF& pose,
                                            const KdTree& scan_index, std::span<const std::uint8_t> match_targets,
                                            std::span<const std::uint8_t> model_terms, ChamferOptions opts = {}) {
  if (shape_points.empty() || scan_index.empty()) {
    throw Error(ErrorCode::EmptyCloud, "chamfer gradient with an empty cloud");
  }
  const Mat3 r = yaw_rotation(pose.yaw);
  const Mat3 dr = yaw_rotation_derivative(pose.yaw);
  std::vector<Vec3> model;
  model.reserve(shape_points.size());
  for (const Vec3& p : shape_points) model.push_back(r * p + pose.translation);

  std::vector<std::size_t> target_ids;
  std::vector<Vec3> targets;
  for (std::size_t j = 0; j < model.size(); ++j) {
    if (match_targets.empty() || match_targets[j]) {
      target_ids.push_back(j);
      targets.push_back(model[j]);
    }
  }
  if (targets.empty()) throw Error(ErrorCode::EmptyCloud, "no model point selected for matching");
  const KdTree model_index(targets);

  std::size_t term_count = 0;
  for (std::size_t j = 0; j < model.size(); ++j) term_count += (model_terms.empty() || model_terms[j]) ? 1 : 0;

  // For a residual e = y - x with y = R p + t: d|e|^2/dt = 2e, d/dyaw = 2e.(R' p).
  const double w_scan = opts.normalized ? 1.0 / static_cast<double>(scan_index.size()) : 1.0;
  const double w_model = opts.normalized && term_count > 0 ? 1.0 / static_cast<double>(term_count) : 1.0;
  PoseGradient g;
  for (const Vec3& x : scan_index.points()) {
    const NearestNeighbor nn = model_index.nearest(x);
    const std::size_t j = target_ids[nn.index];
    const Vec3 e = model[j] - x;
    g.loss += w_scan * nn.squared_distance;
    g.translation += w_scan * 2.0 * e;
    g.yaw += w_scan * 2.0 * e.dot(dr * shape_points[j]);
  }
  for (std::size_t j = 0; j < model.size(); ++j) {
    if (!(model_terms.empty() || model_terms[j])) continue;
    const NearestNeighbor nn = scan_index.nearest(model[j]);
    const Vec3 e = model[j] - scan_index.points()[nn.index];
    g.loss += w_model * nn.squared_distance;
    g.translation += w_model * 2.0 * e;
    g.yaw += w_model * 2.0 * e.dot(dr * shape_points[j]);
  }
  return g;
}

// Gradient of chamfer_distance(transform_to_scene(shape, pose), scan) with
// nearest-neighbor correspondences frozen at the current pose. `scan_index`
// must index the scan points; it is reused across calls.
inline PoseGradient chamfer_gradient(std::span<const Vec3> shape_points, const Pose4DoF& pose,
                                     const KdTree& scan_index, ChamferOptions opts = {}) {
  return chamfer_gradient_subset(shape_points, pose, scan_index, {}, {}, opts);
}

inline PoseGradient chamfer_gradient(std::span<const Vec3> shape_points, const Pose4DoF& pose,
                                     const PointCloud& scan, ChamferOptions opts = {}) {
  if (scan.empty()) throw Error(ErrorCode::EmptyCloud, "chamfer gradient against an empty scan");
  return chamfer_gradient(shape_points, pose, KdTree(scan.points), opts);
}

}  // namespace pseudolabel
