#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pseudolabel/error.hpp"
#include "pseudolabel/geometry.hpp"

namespace pseudolabel {

using ShapeCode = Eigen::VectorXd;

// Row-major P x 3 matrices flatten to [x0 y0 z0 x1 y1 z1 ...], the layout the
// components live in.
using ShapeMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

inline Eigen::VectorXd flatten(const ShapeMatrix& points) {
  return Eigen::Map<const Eigen::VectorXd>(points.data(), points.size());
}

inline ShapeMatrix unflatten(const Eigen::VectorXd& flat) {
  ShapeMatrix out(flat.size() / 3, 3);
  Eigen::Map<Eigen::VectorXd>(out.data(), out.size()) = flat;
  return out;
}

inline std::vector<Vec3> to_points(const ShapeMatrix& m) {
  std::vector<Vec3> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m.row(i).transpose();
  return out;
}

inline ShapeMatrix to_matrix(std::span<const Vec3> points) {
  ShapeMatrix m(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  return m;
}

// Linear PCA shape space. Immutable once built.
class ShapeSpace {
 public:
  ShapeSpace() = default;
  ShapeSpace(ShapeMatrix mean, Eigen::MatrixXd components, Eigen::VectorXd eigenvalues = {})
      : mean_(std::move(mean)), components_(std::move(components)), eigenvalues_(std::move(eigenvalues)) {
    if (components_.cols() != mean_.size()) {
      throw Error(ErrorCode::DimensionMismatch, "component length must equal 3 * point count");
    }
  }

  const ShapeMatrix& mean() const { return mean_; }
  // K x 3P, one unit-norm principal direction per row.
  const Eigen::MatrixXd& components() const { return components_; }
  // Variance along each component; empty when loaded from file.
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  // Optional outward surface normal per point, object frame. Shared by every
  // decoded shape, which holds for families whose faces keep their
  // orientation under the PCA deformation.
  const std::vector<Vec3>& normals() const { return normals_; }
  bool has_normals() const { return !normals_.empty(); }
  ShapeSpace with_normals(std::vector<Vec3> normals) const {
    if (static_cast<int>(normals.size()) != point_count()) {
      throw Error(ErrorCode::DimensionMismatch, "normal count must equal point count");
    }
    ShapeSpace out = *this;
    out.normals_ = std::move(normals);
    return out;
  }
  int latent_dim() const { return static_cast<int>(components_.rows()); }
  int point_count() const { return static_cast<int>(mean_.rows()); }

  ShapeMatrix decode(const ShapeCode& code) const {
    if (code.size() != components_.rows()) {
      throw Error(ErrorCode::DimensionMismatch, "shape code has " + std::to_string(code.size()) +
                                                    " entries, space has K=" + std::to_string(latent_dim()));
    }
    return unflatten(flatten(mean_) + components_.transpose() * code);
  }

  ShapeCode encode(const ShapeMatrix& cloud) const {
    if (cloud.rows() != mean_.rows()) {
      throw Error(ErrorCode::DimensionMismatch, "cloud has " + std::to_string(cloud.rows()) +
                                                    " points, space has P=" + std::to_string(point_count()));
    }
    return components_ * (flatten(cloud) - flatten(mean_));
  }

 private:
  ShapeMatrix mean_;
  Eigen::MatrixXd components_;
  Eigen::VectorXd eigenvalues_;
  std::vector<Vec3> normals_;
};

// PCA over models given in point-to-point correspondence. The common
// centroid of the mean is removed from every model so the mean shape is
// centered; this shift does not change the principal directions.
inline ShapeSpace build_shape_space(std::span<const ShapeMatrix> models, int latent_dim) {
  if (models.size() < 2) {
    throw Error(ErrorCode::InsufficientModels, "need at least 2 models, got " + std::to_string(models.size()));
  }
  if (latent_dim < 1 || static_cast<std::size_t>(latent_dim) >= models.size()) {
    throw Error(ErrorCode::InsufficientModels,
                "latent dimension must be in [1, model count), got " + std::to_string(latent_dim));
  }
  const Eigen::Index p = models.front().rows();
  for (const auto& m : models) {
    if (m.rows() != p) throw Error(ErrorCode::CorrespondenceMismatch, "models differ in point count");
  }

  const auto n = static_cast<Eigen::Index>(models.size());
  Eigen::MatrixXd data(n, 3 * p);
  for (Eigen::Index i = 0; i < n; ++i) data.row(i) = flatten(models[static_cast<std::size_t>(i)]).transpose();

  const Eigen::RowVectorXd mean_flat = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mean_flat;

  // The Gram matrix is n x n, far smaller than the 3P x 3P covariance.
  const Eigen::MatrixXd gram = centered * centered.transpose() / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
  const Eigen::VectorXd evals = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd evecs = solver.eigenvectors();

  Eigen::MatrixXd components(latent_dim, 3 * p);
  Eigen::VectorXd variances(latent_dim);
  for (int k = 0; k < latent_dim; ++k) {
    const Eigen::Index col = n - 1 - k;
    variances(k) = std::max(0.0, evals(col));
    Eigen::VectorXd dir = centered.transpose() * evecs.col(col);
    // Zero-variance directions have no data support; complete them with an
    // orthonormal basis vector instead.
    for (int j = 0; j < k; ++j) dir -= components.row(j).dot(dir) * components.row(j).transpose();
    double norm = dir.norm();
    for (Eigen::Index axis = 0; norm < 1e-12 && axis < 3 * p; ++axis) {
      dir = Eigen::VectorXd::Unit(3 * p, axis);
      for (int j = 0; j < k; ++j) dir -= components.row(j).dot(dir) * components.row(j).transpose();
      norm = dir.norm();
    }
    dir /= norm;
    // Sign convention: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    dir.cwiseAbs().maxCoeff(&arg);
    if (dir(arg) < 0.0) dir = -dir;
    components.row(k) = dir.transpose();
  }

  ShapeMatrix mean = unflatten(mean_flat.transpose());
  const Eigen::RowVector3d centroid = mean.colwise().mean();
  mean.rowwise() -= centroid;
  return ShapeSpace(std::move(mean), std::move(components), std::move(variances));
}

inline ShapeMatrix decode_shape(const ShapeSpace& space, const ShapeCode& code) { return space.decode(code); }
inline ShapeCode encode_shape(const ShapeSpace& space, const ShapeMatrix& cloud) { return space.encode(cloud); }

// Binary persistence: "PLSS", u32 version, u32 K, u32 P, then the mean
// (P*3) and components (K*3P) as little-endian f64. Version 2 appends the
// per-point normals (P*3 f64).
namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void write_f64(std::ostream& os, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline std::uint64_t read_le(std::istream& is, int bytes, const std::string& path) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), bytes)) {
    throw Error(ErrorCode::FormatError, path + ": truncated shape space file");
  }
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

}  // namespace detail

inline constexpr char kShapeSpaceMagic[4] = {'P', 'L', 'S', 'S'};
inline constexpr std::uint32_t kShapeSpaceVersion = 1;
inline constexpr std::uint32_t kShapeSpaceVersionWithNormals = 2;

inline void save_shape_space(const ShapeSpace& space, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::InputMissing, "cannot open " + path + " for writing");
  os.write(kShapeSpaceMagic, 4);
  detail::write_u32(os, space.has_normals() ? kShapeSpaceVersionWithNormals : kShapeSpaceVersion);
  detail::write_u32(os, static_cast<std::uint32_t>(space.latent_dim()));
  detail::write_u32(os, static_cast<std::uint32_t>(space.point_count()));
  const ShapeMatrix& mean = space.mean();
  for (Eigen::Index i = 0; i < mean.size(); ++i) detail::write_f64(os, mean.data()[i]);
  const Eigen::MatrixXd& comps = space.components();
  for (Eigen::Index k = 0; k < comps.rows(); ++k) {
    for (Eigen::Index j = 0; j < comps.cols(); ++j) detail::write_f64(os, comps(k, j));
  }
  for (const Vec3& n : space.normals()) {
    for (int a = 0; a < 3; ++a) detail::write_f64(os, n(a));
  }
}

inline ShapeSpace load_shape_space(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::InputMissing, path + ": cannot open shape space");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kShapeSpaceMagic, 4) != 0) {
    throw Error(ErrorCode::FormatError, path + ": bad magic");
  }
  const auto version = static_cast<std::uint32_t>(detail::read_le(is, 4, path));
  if (version != kShapeSpaceVersion && version != kShapeSpaceVersionWithNormals) {
    throw Error(ErrorCode::FormatError, path + ": unsupported version " + std::to_string(version));
  }
  const auto k = static_cast<Eigen::Index>(detail::read_le(is, 4, path));
  const auto p = static_cast<Eigen::Index>(detail::read_le(is, 4, path));
  ShapeMatrix mean(p, 3);
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    mean.data()[i] = std::bit_cast<double>(detail::read_le(is, 8, path));
  }
  Eigen::MatrixXd comps(k, 3 * p);
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index c = 0; c < 3 * p; ++c) comps(r, c) = std::bit_cast<double>(detail::read_le(is, 8, path));
  }
  ShapeSpace space(std::move(mean), std::move(comps));
  if (version == kShapeSpaceVersionWithNormals) {
    std::vector<Vec3> normals(static_cast<std::size_t>(p));
    for (Vec3& n : normals) {
      for (int a = 0; a < 3; ++a) n(a) = std::bit_cast<double>(detail::read_le(is, 8, path));
    }
    space = space.with_normals(std::move(normals));
  }
  return space;
}

// ASCII PLY with vertex positions only.
inline void write_ply(const std::string& path, std::span<const Vec3> points) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::InputMissing, "cannot open " + path + " for writing");
  os << "ply\nformat ascii 1.0\nelement vertex " << points.size()
     << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  os.precision(17);
  for (const Vec3& p : points) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

inline std::vector<Vec3> read_ply(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::InputMissing, path + ": cannot open");
  std::string line;
  std::size_t count = 0;
  bool header_done = false;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.rfind("element vertex", 0) == 0) count = std::stoul(line.substr(15));
    if (line == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw Error(ErrorCode::ParseError, path + ": missing end_header");
  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Vec3 p;
    if (!(is >> p.x() >> p.y() >> p.z())) {
      throw Error(ErrorCode::ParseError, path + ": line " + std::to_string(line_no + 1 + static_cast<int>(i)));
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace pseudolabel
