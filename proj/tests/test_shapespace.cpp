#include "pseudolabel/car_models.hpp"
#include "pseudolabel/shapespace.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>

#include <Eigen/QR>
#include <gtest/gtest.h>

namespace pseudolabel {
namespace {

namespace fs = std::filesystem;

ShapeMatrix random_cloud(int n, std::mt19937_64& rng, bool centered = true) {
  std::normal_distribution<double> g(0.0, 1.0);
  ShapeMatrix m(n, 3);
  for (int i = 0; i < n; ++i) m.row(i) << g(rng), g(rng), g(rng);
  if (centered) m.rowwise() -= m.colwise().mean();
  return m;
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

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pseudolabel_shapespace_test";
  fs::create_directories(dir);
  return dir / name;
}

TEST(BuildShapeSpace, IdenticalModelsHaveZeroVariance) {
  std::mt19937_64 rng(1);
  const ShapeMatrix a = random_cloud(20, rng);
  const std::vector<ShapeMatrix> models = {a, a};
  const ShapeSpace s = build_shape_space(models, 1);
  EXPECT_NEAR((s.mean() - a).norm(), 0.0, 1e-12);
  EXPECT_NEAR(s.eigenvalues()(0), 0.0, 1e-12);
  EXPECT_NEAR(s.components().row(0).norm(), 1.0, 1e-12);
}

TEST(BuildShapeSpace, SymmetricPairGivesDifferenceDirection) {
  std::mt19937_64 rng(2);
  const ShapeMatrix a = random_cloud(30, rng);
  const ShapeMatrix d = random_cloud(30, rng);
  const std::vector<ShapeMatrix> models = {a + d, a - d};
  const ShapeSpace s = build_shape_space(models, 1);
  EXPECT_NEAR((s.mean() - a).norm(), 0.0, 1e-12);
  const Eigen::VectorXd dir = flatten(d).normalized();
  EXPECT_NEAR(std::abs(s.components().row(0).dot(dir)), 1.0, 1e-12);
  // Two samples at +-d: sample variance 2 |d|^2.
  EXPECT_NEAR(s.eigenvalues()(0), 2.0 * flatten(d).squaredNorm(), 1e-9);
}

TEST(BuildShapeSpace, MeanCenteredAndComponentsOrthonormal) {
  const CarTemplate tmpl(256);
  const auto models = make_car_family(tmpl, 12, 5);
  const ShapeSpace s = build_shape_space(models, 6);
  EXPECT_NEAR(s.mean().colwise().mean().norm(), 0.0, 1e-12);
  const Eigen::MatrixXd gram = s.components() * s.components().transpose();
  EXPECT_NEAR((gram - Eigen::MatrixXd::Identity(6, 6)).norm(), 0.0, 1e-9);
  for (int k = 1; k < 6; ++k) EXPECT_GE(s.eigenvalues()(k - 1), s.eigenvalues()(k));
}

// Models are reconstructed after removing the common centroid shift that
// centering applies to the mean.
double reconstruction_error(const ShapeSpace& s, const std::vector<ShapeMatrix>& models, const Eigen::RowVector3d& shift) {
  double err = 0.0;
  for (const auto& m : models) {
    ShapeMatrix shifted = m;
    shifted.rowwise() -= shift;
    err += (s.decode(s.encode(shifted)) - shifted).squaredNorm();
  }
  return err;
}

TEST(BuildShapeSpace, ReconstructionErrorMonotoneInLatentDim) {
  const CarTemplate tmpl(200);
  const auto models = make_car_family(tmpl, 12, 9);
  ShapeMatrix mean = ShapeMatrix::Zero(200, 3);
  for (const auto& m : models) mean += m;
  mean /= 12.0;
  const Eigen::RowVector3d shift = mean.colwise().mean();

  // The procedural family has 7 parameters, so the data span saturates early;
  // the full-rank space reproduces every model exactly.
  double previous = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 11; ++k) {
    const double err = reconstruction_error(build_shape_space(models, k), models, shift);
    EXPECT_LE(err, previous + 1e-9) << "K=" << k;
    previous = err;
  }
  EXPECT_NEAR(previous, 0.0, 1e-12);
}

TEST(ShapeSpace, DecodeEncodeExamples) {
  const ShapeSpace s = default_car_shape_space(256, 5);
  EXPECT_EQ(s.decode(ShapeCode::Zero(5)), s.mean());
  EXPECT_NEAR(s.encode(s.mean()).norm(), 0.0, 1e-12);

  const ShapeCode e1 = ShapeCode::Unit(5, 0);
  const Eigen::VectorXd expected = flatten(s.mean()) + s.components().row(0).transpose();
  EXPECT_NEAR((flatten(s.decode(e1)) - expected).norm(), 0.0, 1e-12);

  ShapeCode two(5);
  two << 2, 0, 0, 0, 0;
  EXPECT_NEAR((s.encode(s.decode(two)) - two).norm(), 0.0, 1e-9);
}

TEST(ShapeSpace, EncodeMatchesLeastSquares) {
  const ShapeSpace s = default_car_shape_space(256, 5);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 0.3);
  for (int trial = 0; trial < 20; ++trial) {
    ShapeCode c(5);
    for (int i = 0; i < 5; ++i) c(i) = g(rng);
    ShapeMatrix cloud = s.decode(c);
    // Off-span noise must not leak into the code of an orthonormal basis.
    cloud += 0.01 * random_cloud(256, rng, false);
    const Eigen::VectorXd rhs = flatten(cloud) - flatten(s.mean());
    const Eigen::VectorXd oracle = s.components().transpose().colPivHouseholderQr().solve(rhs);
    EXPECT_NEAR((s.encode(cloud) - oracle).norm(), 0.0, 1e-9);
  }
}

TEST(ShapeSpace, DecodeIsAffine) {
  const ShapeSpace s = default_car_shape_space(128, 5);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 1.0);
  ShapeCode a(5);
  ShapeCode b(5);
  for (int i = 0; i < 5; ++i) {
    a(i) = g(rng);
    b(i) = g(rng);
  }
  const double alpha = 0.3;
  const ShapeMatrix lhs = s.decode(alpha * a + (1 - alpha) * b);
  const ShapeMatrix rhs = alpha * s.decode(a) + (1 - alpha) * s.decode(b);
  EXPECT_NEAR((lhs - rhs).norm(), 0.0, 1e-10);
}

TEST(ShapeSpace, Errors) {
  std::mt19937_64 rng(7);
  const ShapeMatrix a = random_cloud(10, rng);
  const ShapeMatrix b = random_cloud(11, rng);
  EXPECT_EQ(code_of([&] { build_shape_space(std::vector<ShapeMatrix>{a}, 1); }), ErrorCode::InsufficientModels);
  EXPECT_EQ(code_of([&] { build_shape_space(std::vector<ShapeMatrix>{a, a}, 2); }), ErrorCode::InsufficientModels);
  EXPECT_EQ(code_of([&] { build_shape_space(std::vector<ShapeMatrix>{a, b}, 1); }),
            ErrorCode::CorrespondenceMismatch);
  const ShapeSpace s = build_shape_space(std::vector<ShapeMatrix>{a, a * 2.0, a * 3.0}, 2);
  EXPECT_EQ(code_of([&] { s.decode(ShapeCode::Zero(3)); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([&] { s.encode(b); }), ErrorCode::DimensionMismatch);
}

TEST(ShapeSpaceIo, BinaryRoundTripIsExact) {
  const ShapeSpace s = default_car_shape_space(128, 5);
  const auto path = temp_path("space.bin").string();
  save_shape_space(s, path);
  const ShapeSpace back = load_shape_space(path);
  EXPECT_EQ(back.mean(), s.mean());
  EXPECT_EQ(back.components(), s.components());
  ASSERT_TRUE(back.has_normals());
  EXPECT_EQ(back.normals(), s.normals());

  const ShapeSpace plain(s.mean(), s.components());
  save_shape_space(plain, path);
  EXPECT_FALSE(load_shape_space(path).has_normals());
}

TEST(ShapeSpaceIo, RejectsBadFiles) {
  const auto path = temp_path("bad.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  EXPECT_EQ(code_of([&] { load_shape_space(path.string()); }), ErrorCode::FormatError);
  const ShapeSpace s = default_car_shape_space(64, 3);
  save_shape_space(s, path.string());
  fs::resize_file(path, fs::file_size(path) - 5);
  EXPECT_EQ(code_of([&] { load_shape_space(path.string()); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { load_shape_space(temp_path("missing.bin").string()); }), ErrorCode::InputMissing);
}

TEST(ShapeSpaceIo, PlyRoundTrip) {
  std::mt19937_64 rng(8);
  const auto pts = to_points(random_cloud(50, rng));
  const auto path = temp_path("cloud.ply").string();
  write_ply(path, pts);
  const auto back = read_ply(path);
  ASSERT_EQ(back.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(back[i], pts[i]);
}

TEST(CarTemplate, PointsCorrespondAcrossModels) {
  const CarTemplate tmpl(512);
  CarParameters small;
  small.length = 3.8;
  CarParameters large;
  large.length = 4.6;
  const ShapeMatrix a = tmpl.sample(small);
  const ShapeMatrix b = tmpl.sample(large);
  ASSERT_EQ(a.rows(), 512);
  ASSERT_EQ(b.rows(), 512);
  // Affine in the parameters: the midpoint model is the mean of the two.
  CarParameters mid;
  mid.length = 4.2;
  EXPECT_NEAR((tmpl.sample(mid) - 0.5 * (a + b)).norm(), 0.0, 1e-12);
  EXPECT_EQ(tmpl.normals().size(), 512u);
}

}  // namespace
}  // namespace pseudolabel
