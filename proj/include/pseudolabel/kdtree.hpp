#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "pseudolabel/error.hpp"
#include "pseudolabel/geometry.hpp"

namespace pseudolabel {

struct NearestNeighbor {
  std::size_t index = 0;
  double squared_distance = std::numeric_limits<double>::infinity();
};

// Exact nearest-neighbor index over a fixed point set. Results are identical
// to a linear scan that keeps the lowest index among equidistant points.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(points_.size() / kLeafSize * 2 + 1);
    if (!points_.empty()) build(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const std::vector<Vec3>& points() const { return points_; }

  NearestNeighbor nearest(const Vec3& query) const {
    if (points_.empty()) throw Error(ErrorCode::EmptyTarget, "nearest-neighbor query on empty point set");
    NearestNeighbor best;
    search(0, query, best);
    return best;
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::size_t begin;
    std::size_t end;
    int axis;  // -1 for leaves
    double split;
    std::uint32_t left;
    std::uint32_t right;
  };

  std::uint32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back({begin, end, -1, 0.0, 0, 0});
    if (end - begin <= kLeafSize) return id;

    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi(axis) - lo(axis) <= 0.0) return id;  // all coincident, keep as leaf

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return points_[a](axis) < points_[b](axis); });
    const double split = points_[order_[mid]](axis);
    const std::uint32_t left = build(begin, mid);
    const std::uint32_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  static bool better(double d, std::size_t idx, const NearestNeighbor& best) {
    return d < best.squared_distance || (d == best.squared_distance && idx < best.index);
  }

  void search(std::uint32_t node_id, const Vec3& q, NearestNeighbor& best) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        const double d = (points_[idx] - q).squaredNorm();
        if (better(d, idx, best)) best = {idx, d};
      }
      return;
    }
    // Left holds coordinates <= split, right holds >= split.
    const double diff = q(node.axis) - node.split;
    const std::uint32_t near = diff < 0.0 ? node.left : node.right;
    const std::uint32_t far = diff < 0.0 ? node.right : node.left;
    search(near, q, best);
    // Equality keeps equidistant candidates with lower indices reachable.
    if (diff * diff <= best.squared_distance) search(far, q, best);
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

// O(N) reference scan with the same tie rule.
inline NearestNeighbor nearest_linear_scan(const Vec3& query, std::span<const Vec3> target) {
  if (target.empty()) throw Error(ErrorCode::EmptyTarget, "nearest-neighbor query on empty point set");
  NearestNeighbor best;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = (target[i] - query).squaredNorm();
    if (d < best.squared_distance) best = {i, d};
  }
  return best;
}

}  // namespace pseudolabel
