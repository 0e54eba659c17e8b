#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pseudolabel/error.hpp"
#include "pseudolabel/geometry.hpp"

namespace pseudolabel {

// Oriented 3D box; `center` is the geometric center in the camera frame and
// the length axis is the object's heading.
struct Box3D {
  Vec3 center = Vec3::Zero();
  double length = 1.0;
  double width = 1.0;
  double height = 1.0;
  double yaw = 0.0;
  double score = 1.0;
};

// Axis-aligned extent of an object-frame shape. The shape origin is its
// point centroid, so the box center sits at `mid`, not at the origin.
struct ShapeExtent {
  Vec3 mid = Vec3::Zero();
  double length = 0.0;  // along x
  double width = 0.0;   // along z
  double height = 0.0;  // along y
};

inline ShapeExtent shape_extent(std::span<const Vec3> points) {
  ShapeExtent e;
  if (points.empty()) return e;
  Vec3 lo = points.front();
  Vec3 hi = lo;
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  e.mid = (lo + hi) / 2.0;
  e.length = hi.x() - lo.x();
  e.width = hi.z() - lo.z();
  e.height = hi.y() - lo.y();
  return e;
}

inline Box3D box_from_shape(const ShapeExtent& e, const Pose4DoF& pose, double score = 1.0) {
  Box3D b;
  b.center = yaw_rotation(pose.yaw) * e.mid + pose.translation;
  b.length = e.length;
  b.width = e.width;
  b.height = e.height;
  b.yaw = pose.yaw;
  b.score = score;
  return b;
}

inline Pose4DoF pose_from_box(const Box3D& b, const ShapeExtent& e) {
  return {b.center - yaw_rotation(b.yaw) * e.mid, wrap_angle(b.yaw)};
}

// The eight corners in the box's own frame order: bottom four then top four.
inline std::array<Vec3, 8> box_corners(const Box3D& b) {
  const Mat3 r = yaw_rotation(b.yaw);
  std::array<Vec3, 8> out;
  int i = 0;
  for (double dy : {b.height / 2.0, -b.height / 2.0}) {
    for (auto [dx, dz] : {std::pair{1.0, 1.0}, {-1.0, 1.0}, {-1.0, -1.0}, {1.0, -1.0}}) {
      out[static_cast<std::size_t>(i++)] = r * Vec3(dx * b.length / 2.0, dy, dz * b.width / 2.0) + b.center;
    }
  }
  return out;
}

// Ground-plane (x, z) footprint corners, counter-clockwise in (x, z).
inline std::array<Vec2, 4> bev_corners(const Box3D& b) {
  const Mat3 r = yaw_rotation(b.yaw);
  const double hl = b.length / 2.0;
  const double hw = b.width / 2.0;
  const std::array<Vec3, 4> local = {Vec3(hl, 0, hw), Vec3(-hl, 0, hw), Vec3(-hl, 0, -hw), Vec3(hl, 0, -hw)};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) {
    const Vec3 p = r * local[i] + b.center;
    out[i] = Vec2(p.x(), p.z());
  }
  return out;
}

inline double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

// Sutherland-Hodgman clipping of `subject` by the convex polygon `clip`.
// Both must share the same (counter-clockwise) orientation.
inline std::vector<Vec2> clip_convex(std::vector<Vec2> subject, const std::vector<Vec2>& clip) {
  auto side = [](const Vec2& a, const Vec2& b, const Vec2& p) {
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
  };
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % clip.size()];
    std::vector<Vec2> out;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2& cur = subject[i];
      const Vec2& prev = subject[(i + subject.size() - 1) % subject.size()];
      const double sc = side(a, b, cur);
      const double sp = side(a, b, prev);
      if (sc >= 0.0) {
        if (sp < 0.0) out.push_back(prev + (cur - prev) * (sp / (sp - sc)));
        out.push_back(cur);
      } else if (sp >= 0.0) {
        out.push_back(prev + (cur - prev) * (sp / (sp - sc)));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  auto ccw = [](const std::array<Vec2, 4>& c) {
    std::vector<Vec2> v(c.begin(), c.end());
    if (polygon_area(v) < 0.0) std::reverse(v.begin(), v.end());
    return v;
  };
  const auto pa = ccw(bev_corners(a));
  const auto pb = ccw(bev_corners(b));
  const auto inter = clip_convex(pa, pb);
  return inter.size() < 3 ? 0.0 : std::abs(polygon_area(inter));
}

inline double bev_iou(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection_area(a, b);
  const double uni = a.length * a.width + b.length * b.width - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline double iou_3d(const Box3D& a, const Box3D& b) {
  const double top = std::max(a.center.y() - a.height / 2.0, b.center.y() - b.height / 2.0);
  const double bottom = std::min(a.center.y() + a.height / 2.0, b.center.y() + b.height / 2.0);
  const double overlap = std::max(0.0, bottom - top);
  if (overlap <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * overlap;
  const double uni = a.length * a.width * a.height + b.length * b.width * b.height - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

enum class IouMode { Bev, ThreeD };
enum class Interpolation { R11, R40 };

inline const char* to_string(IouMode m) { return m == IouMode::Bev ? "bev" : "3d"; }
inline const char* to_string(Interpolation i) { return i == Interpolation::R11 ? "R11" : "R40"; }

// Boxes keyed by frame index.
using FrameBoxes = std::map<int, std::vector<Box3D>>;

struct PrecisionRecall {
  std::vector<double> precision;
  std::vector<double> recall;
  int ground_truth_count = 0;
};

// Greedy matching in descending score order: each detection takes the
// highest-IoU unmatched ground truth of its frame when that IoU reaches the
// threshold. Score ties keep frame order, then detection order.
inline PrecisionRecall precision_recall(const FrameBoxes& dets, const FrameBoxes& gts, double iou_threshold,
                                        IouMode mode) {
  PrecisionRecall pr;
  for (const auto& [frame, boxes] : gts) pr.ground_truth_count += static_cast<int>(boxes.size());
  if (pr.ground_truth_count == 0) throw Error(ErrorCode::NoGroundTruth, "no ground-truth boxes");

  struct Ranked {
    double score;
    int frame;
    std::size_t index;
  };
  std::vector<Ranked> ranked;
  for (const auto& [frame, boxes] : dets) {
    for (std::size_t i = 0; i < boxes.size(); ++i) ranked.push_back({boxes[i].score, frame, i});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::map<int, std::vector<bool>> taken;
  for (const auto& [frame, boxes] : gts) taken[frame].assign(boxes.size(), false);

  int tp = 0;
  int fp = 0;
  for (const Ranked& r : ranked) {
    const Box3D& det = dets.at(r.frame)[r.index];
    int best = -1;
    double best_iou = iou_threshold;
    const auto it = gts.find(r.frame);
    if (it != gts.end()) {
      auto& used = taken[r.frame];
      for (std::size_t g = 0; g < it->second.size(); ++g) {
        if (used[g]) continue;
        const double iou = mode == IouMode::Bev ? bev_iou(det, it->second[g]) : iou_3d(det, it->second[g]);
        if (iou >= best_iou) {
          if (best < 0 || iou > best_iou) {
            best = static_cast<int>(g);
            best_iou = iou;
          }
        }
      }
      if (best >= 0) used[static_cast<std::size_t>(best)] = true;
    }
    if (best >= 0) {
      ++tp;
    } else {
      ++fp;
    }
    pr.precision.push_back(static_cast<double>(tp) / (tp + fp));
    pr.recall.push_back(static_cast<double>(tp) / pr.ground_truth_count);
  }
  return pr;
}

// Interpolated AP in percent: precision is made monotone non-increasing from
// the right and sampled at 11 recall points {0, 0.1, ..., 1} or 40 points
// {1/40, ..., 1}.
inline double interpolated_ap(const PrecisionRecall& pr, Interpolation interp) {
  std::vector<double> envelope = pr.precision;
  for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  auto precision_at = [&](double r) {
    for (std::size_t i = 0; i < pr.recall.size(); ++i) {
      if (pr.recall[i] >= r - 1e-12) return envelope[i];
    }
    return 0.0;
  };
  double sum = 0.0;
  int samples = 0;
  if (interp == Interpolation::R11) {
    for (int i = 0; i <= 10; ++i, ++samples) sum += precision_at(i / 10.0);
  } else {
    for (int i = 1; i <= 40; ++i, ++samples) sum += precision_at(i / 40.0);
  }
  return 100.0 * sum / samples;
}

inline double average_precision(const FrameBoxes& dets, const FrameBoxes& gts, double iou_threshold = 0.5,
                                IouMode mode = IouMode::Bev, Interpolation interp = Interpolation::R40) {
  return interpolated_ap(precision_recall(dets, gts, iou_threshold, mode), interp);
}

struct MetricRow {
  std::string metric;
  IouMode mode;
  Interpolation interpolation;
  double threshold;
  double value;
};

inline std::vector<MetricRow> evaluate_all(const FrameBoxes& dets, const FrameBoxes& gts, double threshold = 0.5) {
  std::vector<MetricRow> rows;
  for (IouMode mode : {IouMode::Bev, IouMode::ThreeD}) {
    const PrecisionRecall pr = precision_recall(dets, gts, threshold, mode);
    for (Interpolation interp : {Interpolation::R11, Interpolation::R40}) {
      rows.push_back({std::string("AP_") + to_string(interp), mode, interp, threshold, interpolated_ap(pr, interp)});
    }
  }
  return rows;
}

// "metric mode threshold value" per line.
inline void write_text_report(std::ostream& os, const std::vector<MetricRow>& rows) {
  for (const auto& r : rows) os << r.metric << ' ' << to_string(r.mode) << ' ' << r.threshold << ' ' << r.value << '\n';
}

inline void write_csv_report(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << "metric,mode,threshold,value\n";
  for (const auto& r : rows) os << r.metric << ',' << to_string(r.mode) << ',' << r.threshold << ',' << r.value << '\n';
}

}  // namespace pseudolabel
