#include "pseudolabel/chamfer.hpp"
#include "pseudolabel/kdtree.hpp"

#include <functional>
#include <random>

#include <gtest/gtest.h>

namespace pseudolabel {
namespace {

std::vector<Vec3> random_points(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<Vec3> out(static_cast<std::size_t>(n));
  for (Vec3& p : out) p = Vec3(u(rng), u(rng), u(rng));
  return out;
}

double brute_chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double total = 0.0;
  for (const auto* pair : {&a, &b}) {
    const auto& from = *pair;
    const auto& to = pair == &a ? b : a;
    for (const Vec3& x : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& y : to) best = std::min(best, (x - y).squaredNorm());
      total += best;
    }
  }
  return total;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::FormatError;
}

TEST(KdTree, MatchesLinearScan) {
  std::mt19937_64 rng(1);
  const auto target = random_points(1000, rng, 10.0);
  const KdTree tree(target);
  for (const Vec3& q : random_points(1000, rng, 12.0)) {
    const auto a = tree.nearest(q);
    const auto b = nearest_linear_scan(q, target);
    EXPECT_EQ(a.index, b.index);
    EXPECT_EQ(a.squared_distance, b.squared_distance);
  }
}

TEST(KdTree, TiesGoToLowestIndex) {
  // A lattice has many equidistant neighbors; duplicates add exact ties.
  std::vector<Vec3> grid;
  for (int x = 0; x < 6; ++x) {
    for (int y = 0; y < 6; ++y) {
      for (int z = 0; z < 6; ++z) grid.emplace_back(x, y, z);
    }
  }
  grid.insert(grid.end(), grid.begin(), grid.begin() + 50);
  const KdTree tree(grid);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cell(0, 10);
  for (int i = 0; i < 500; ++i) {
    const Vec3 q(cell(rng) * 0.5, cell(rng) * 0.5, cell(rng) * 0.5);
    const auto a = tree.nearest(q);
    const auto b = nearest_linear_scan(q, grid);
    EXPECT_EQ(a.index, b.index) << q.transpose();
    EXPECT_EQ(a.squared_distance, b.squared_distance);
  }
}

TEST(KdTree, Examples) {
  const std::vector<Vec3> two = {Vec3(0, 0, 0), Vec3(2, 0, 0)};
  const KdTree tree(two);
  const auto nn = nearest_neighbor_index(Vec3(0.9, 0, 0), tree);
  EXPECT_EQ(nn.index, 0u);
  EXPECT_NEAR(nn.squared_distance, 0.81, 1e-15);
  const auto self = tree.nearest(Vec3(2, 0, 0));
  EXPECT_EQ(self.index, 1u);
  EXPECT_EQ(self.squared_distance, 0.0);
  EXPECT_EQ(code_of([] { KdTree().nearest(Vec3::Zero()); }), ErrorCode::EmptyTarget);
}

TEST(ChamferDistance, Examples) {
  const std::vector<Vec3> a = {Vec3(0, 0, 0)};
  const std::vector<Vec3> b = {Vec3(1, 0, 0)};
  EXPECT_EQ(chamfer_distance(PointCloud{a}, PointCloud{b}), 2.0);
  EXPECT_EQ(chamfer_distance(PointCloud{a}, PointCloud{a}), 0.0);
  // One-sided sums differ: {0} -> {0, 3} costs 0, {0, 3} -> {0} costs 9.
  const std::vector<Vec3> c = {Vec3(0, 0, 0), Vec3(3, 0, 0)};
  EXPECT_EQ(chamfer_distance(PointCloud{a}, PointCloud{c}), 9.0);
  EXPECT_EQ(chamfer_distance(PointCloud{a}, PointCloud{c}, {true}), 4.5);
  EXPECT_EQ(code_of([&] { chamfer_distance(PointCloud{}, PointCloud{a}); }), ErrorCode::EmptyCloud);
}

TEST(ChamferDistance, MatchesBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> size(1, 120);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_points(size(rng), rng, 3.0);
    const auto b = random_points(size(rng), rng, 3.0);
    const double cd = chamfer_distance(PointCloud{a}, PointCloud{b});
    EXPECT_NEAR(cd, brute_chamfer(a, b), 1e-12 * std::max(1.0, cd));
    EXPECT_EQ(cd, chamfer_distance(PointCloud{b}, PointCloud{a}));
  }
}

TEST(ChamferDistance, RigidInvariance) {
  std::mt19937_64 rng(4);
  const auto a = random_points(80, rng);
  const auto b = random_points(60, rng);
  const Mat3 r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Vec3 t(5, -2, 8);
  std::vector<Vec3> ra;
  std::vector<Vec3> rb;
  for (const Vec3& p : a) ra.push_back(r * p + t);
  for (const Vec3& p : b) rb.push_back(r * p + t);
  EXPECT_NEAR(chamfer_distance(PointCloud{a}, PointCloud{b}), chamfer_distance(PointCloud{ra}, PointCloud{rb}), 1e-9);
}

TEST(TransformToScene, Examples) {
  const std::vector<Vec3> shape = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
  const auto moved = transform_to_scene(shape, {Vec3(0, 0, 10), 0.0});
  EXPECT_EQ(moved.points[0], Vec3(1, 0, 10));
  EXPECT_EQ(moved.points[1], Vec3(0, 1, 10));
  const auto turned = transform_to_scene(shape, {Vec3::Zero(), kPi / 2.0});
  EXPECT_NEAR((turned.points[0] - Vec3(0, 0, -1)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((turned.points[1] - Vec3(0, 1, 0)).norm(), 0.0, 1e-15);
}

TEST(FilterByMask, FullAndEmptyMasks) {
  const CameraIntrinsics k;
  const std::vector<Vec3> scan = {Vec3(0, 0, 10), Vec3(-3, 0, 10), Vec3(3, 0, 10), Vec3(0, 0, -5)};
  const InstanceMask full(k.image_width, k.image_height, true);
  EXPECT_EQ(filter_by_mask(PointCloud{scan}, full, k).size(), 3u);
  const InstanceMask none(k.image_width, k.image_height, false);
  EXPECT_EQ(code_of([&] { filter_by_mask(PointCloud{scan}, none, k); }), ErrorCode::EmptyResult);
}

TEST(FilterByMask, LeftHalfMatchesPerPointProjection) {
  const CameraIntrinsics k;
  InstanceMask left(k.image_width, k.image_height);
  for (int y = 0; y < k.image_height; ++y) {
    for (int x = 0; x < k.image_width / 2; ++x) left.set(x, y, true);
  }
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-8.0, 8.0);
  std::vector<Vec3> scan;
  for (int i = 0; i < 300; ++i) scan.emplace_back(u(rng), 0.2 * u(rng), 10.0 + u(rng));
  const auto kept = filter_by_mask(PointCloud{scan}, left, k);
  std::vector<Vec3> expected;
  for (const Vec3& p : scan) {
    const double px = k.fx * p.x() / p.z() + k.cx;
    const double py = k.fy * p.y() / p.z() + k.cy;
    if (px >= 0 && py >= 0 && px < k.image_width / 2 && py < k.image_height) expected.push_back(p);
  }
  EXPECT_EQ(kept.points, expected);
}

TEST(InstanceMask, PolygonFill) {
  const std::vector<Vec2> square = {Vec2(2, 2), Vec2(6, 2), Vec2(6, 6), Vec2(2, 6)};
  const auto mask = InstanceMask::from_polygon(10, 10, square);
  EXPECT_EQ(mask.support(), 16u);
  EXPECT_TRUE(mask.at(2, 2));
  EXPECT_FALSE(mask.at(6, 6));
  // Winding does not matter.
  const std::vector<Vec2> reversed(square.rbegin(), square.rend());
  EXPECT_EQ(InstanceMask::from_polygon(10, 10, reversed).support(), 16u);
}

// Central differences of the Chamfer loss with correspondences recomputed.
PoseGradient finite_difference(const std::vector<Vec3>& shape, const Pose4DoF& pose, const std::vector<Vec3>& scan,
                               double h) {
  auto loss = [&](const Pose4DoF& p) {
    return chamfer_distance(transform_to_scene(shape, p), PointCloud{scan});
  };
  PoseGradient g;
  for (int a = 0; a < 3; ++a) {
    Pose4DoF plus = pose;
    Pose4DoF minus = pose;
    plus.translation(a) += h;
    minus.translation(a) -= h;
    g.translation(a) = (loss(plus) - loss(minus)) / (2 * h);
  }
  Pose4DoF plus = pose;
  Pose4DoF minus = pose;
  plus.yaw += h;
  minus.yaw -= h;
  g.yaw = (loss(plus) - loss(minus)) / (2 * h);
  return g;
}

TEST(ChamferGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const auto shape = random_points(40, rng, 2.0);
    const auto scan = random_points(35, rng, 2.0);
    const Pose4DoF pose{Vec3(u(rng), u(rng), u(rng)), 3.0 * u(rng)};
    const PoseGradient g = chamfer_gradient(shape, pose, PointCloud{scan});
    const PoseGradient fd = finite_difference(shape, pose, scan, 1e-5);
    Eigen::Vector4d ga(g.translation.x(), g.translation.y(), g.translation.z(), g.yaw);
    Eigen::Vector4d gf(fd.translation.x(), fd.translation.y(), fd.translation.z(), fd.yaw);
    EXPECT_LE((ga - gf).norm(), 1e-4 * std::max(1.0, gf.norm())) << "trial " << trial;
    EXPECT_NEAR(g.loss, chamfer_distance(transform_to_scene(shape, pose), PointCloud{scan}), 1e-12 * g.loss);
  }
}

TEST(ChamferGradient, AlignedShapeHasZeroGradient) {
  std::mt19937_64 rng(7);
  const auto shape = random_points(50, rng);
  const Pose4DoF pose{Vec3(1, 2, 3), 0.4};
  const auto scan = transform_to_scene(shape, pose);
  const PoseGradient g = chamfer_gradient(shape, pose, scan);
  EXPECT_NEAR(g.loss, 0.0, 1e-20);
  EXPECT_NEAR(g.translation.norm(), 0.0, 1e-12);
  EXPECT_NEAR(g.yaw, 0.0, 1e-12);
}

TEST(ChamferGradient, PointsTowardsScan) {
  // Unit lattice shifted by 0.1 m: every nearest neighbor is the shifted twin.
  std::vector<Vec3> shape;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int k = 0; k < 4; ++k) shape.emplace_back(i, j, k);
    }
  }
  const auto scan = transform_to_scene(shape, {Vec3(0.1, 0, 0), 0.0});
  const PoseGradient g = chamfer_gradient(shape, Pose4DoF{}, scan);
  // Descent direction is -g, towards +x.
  EXPECT_NEAR(g.translation.x(), -2.0 * 0.1 * 2 * 64, 1e-9);
  EXPECT_NEAR(g.translation.y(), 0.0, 1e-12);
  EXPECT_NEAR(g.translation.z(), 0.0, 1e-12);
}

TEST(ChamferGradient, NormalizedVariant) {
  std::mt19937_64 rng(9);
  const auto shape = random_points(30, rng);
  const auto scan = random_points(20, rng);
  const KdTree index(scan);
  const PoseGradient g = chamfer_gradient(shape, Pose4DoF{}, index, {true});
  EXPECT_NEAR(g.loss, chamfer_distance(PointCloud{shape}, PointCloud{scan}, {true}), 1e-12);
}

TEST(ChamferGradient, SubsetWithAllFlagsEqualsFull) {
  std::mt19937_64 rng(10);
  const auto shape = random_points(30, rng);
  const auto scan = random_points(25, rng);
  const KdTree index(scan);
  const std::vector<std::uint8_t> all(30, 1);
  const Pose4DoF pose{Vec3(0.2, 0, 0.1), 0.3};
  const PoseGradient a = chamfer_gradient(shape, pose, index);
  const PoseGradient b = chamfer_gradient_subset(shape, pose, index, all, all);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.translation, b.translation);
  EXPECT_EQ(a.yaw, b.yaw);
}

}  // namespace
}  // namespace pseudolabel
