#pragma once

// Procedural stand-ins for car CAD models: a body box with a cabin box on
// top, sampled at a fixed set of (face, u, v) sites so that point i of every
// model corresponds to point i of every other. All coordinates are affine in
// the parameters, so linear combinations of models stay in the same family.
//
// Object frame: x forward, y down, z to the side; the ground contact is at
// y = 0 before the shape space centers the family.

#include <array>
#include <random>
#include <vector>

#include "pseudolabel/geometry.hpp"
#include "pseudolabel/shapespace.hpp"

namespace pseudolabel {

struct CarParameters {
  double length = 4.2;
  double width = 1.75;
  double body_height = 0.85;
  double cabin_height = 0.6;
  double cabin_length = 2.2;
  double cabin_offset = -0.2;  // cabin center along x relative to body center
  double cabin_width = 1.55;
};

namespace detail {

// Axis-aligned rectangle: origin + u * edge_u + v * edge_v.
struct FaceRect {
  Vec3 origin;
  Vec3 edge_u;
  Vec3 edge_v;
  Vec3 normal;
};

inline constexpr int kCarFaceCount = 13;

inline std::array<FaceRect, kCarFaceCount> car_faces(const CarParameters& c) {
  const double hl = c.length / 2.0;
  const double hw = c.width / 2.0;
  const double hb = c.body_height;
  const double ht = c.body_height + c.cabin_height;
  const double cf = c.cabin_offset + c.cabin_length / 2.0;  // cabin front x
  const double cr = c.cabin_offset - c.cabin_length / 2.0;  // cabin rear x
  const double hcw = c.cabin_width / 2.0;
  const Vec3 up(0, -1, 0);
  return {{
      // body front / back / left / right
      {{hl, 0, -hw}, {0, -hb, 0}, {0, 0, c.width}, Vec3::UnitX()},
      {{-hl, 0, -hw}, {0, -hb, 0}, {0, 0, c.width}, -Vec3::UnitX()},
      {{-hl, 0, hw}, {c.length, 0, 0}, {0, -hb, 0}, Vec3::UnitZ()},
      {{-hl, 0, -hw}, {c.length, 0, 0}, {0, -hb, 0}, -Vec3::UnitZ()},
      // hood, rear deck, and the two strips beside the cabin
      {{cf, -hb, -hw}, {hl - cf, 0, 0}, {0, 0, c.width}, up},
      {{-hl, -hb, -hw}, {cr + hl, 0, 0}, {0, 0, c.width}, up},
      {{cr, -hb, hcw}, {c.cabin_length, 0, 0}, {0, 0, hw - hcw}, up},
      {{cr, -hb, -hw}, {c.cabin_length, 0, 0}, {0, 0, hw - hcw}, up},
      // cabin roof / front / back / left / right
      {{cr, -ht, -hcw}, {c.cabin_length, 0, 0}, {0, 0, c.cabin_width}, up},
      {{cf, -hb, -hcw}, {0, -c.cabin_height, 0}, {0, 0, c.cabin_width}, Vec3::UnitX()},
      {{cr, -hb, -hcw}, {0, -c.cabin_height, 0}, {0, 0, c.cabin_width}, -Vec3::UnitX()},
      {{cr, -hb, hcw}, {c.cabin_length, 0, 0}, {0, -c.cabin_height, 0}, Vec3::UnitZ()},
      {{cr, -hb, -hcw}, {c.cabin_length, 0, 0}, {0, -c.cabin_height, 0}, -Vec3::UnitZ()},
  }};
}

}  // namespace detail

// Fixed sampling sites shared by all models of one family.
class CarTemplate {
 public:
  explicit CarTemplate(int point_count = 1024, std::uint64_t seed = 7) {
    const auto faces = detail::car_faces(CarParameters{});
    std::array<double, detail::kCarFaceCount> area{};
    double total = 0.0;
    for (int f = 0; f < detail::kCarFaceCount; ++f) {
      area[f] = faces[f].edge_u.cross(faces[f].edge_v).norm();
      total += area[f];
    }
    // Area-proportional allocation by largest remainder, fixed for the family.
    std::array<int, detail::kCarFaceCount> count{};
    std::array<double, detail::kCarFaceCount> remainder{};
    int assigned = 0;
    for (int f = 0; f < detail::kCarFaceCount; ++f) {
      const double exact = point_count * area[f] / total;
      count[f] = static_cast<int>(exact);
      remainder[f] = exact - count[f];
      assigned += count[f];
    }
    while (assigned < point_count) {
      int best = 0;
      for (int f = 1; f < detail::kCarFaceCount; ++f) {
        if (remainder[f] > remainder[best]) best = f;
      }
      ++count[best];
      remainder[best] = -1.0;
      ++assigned;
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int f = 0; f < detail::kCarFaceCount; ++f) {
      for (int i = 0; i < count[f]; ++i) sites_.push_back({f, unit(rng), unit(rng)});
    }
  }

  int point_count() const { return static_cast<int>(sites_.size()); }

  ShapeMatrix sample(const CarParameters& params) const {
    const auto faces = detail::car_faces(params);
    ShapeMatrix out(point_count(), 3);
    for (std::size_t i = 0; i < sites_.size(); ++i) {
      const auto& s = sites_[i];
      const auto& f = faces[static_cast<std::size_t>(s.face)];
      out.row(static_cast<Eigen::Index>(i)) = (f.origin + s.u * f.edge_u + s.v * f.edge_v).transpose();
    }
    return out;
  }

  // Outward normal per point; identical for every model in the family.
  std::vector<Vec3> normals() const {
    const auto faces = detail::car_faces(CarParameters{});
    std::vector<Vec3> out;
    out.reserve(sites_.size());
    for (const auto& s : sites_) out.push_back(faces[static_cast<std::size_t>(s.face)].normal);
    return out;
  }

 private:
  struct Site {
    int face;
    double u;
    double v;
  };
  std::vector<Site> sites_;
};

inline CarParameters random_car_parameters(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CarParameters c;
  c.length = 3.6 + 1.2 * u(rng);
  c.width = 1.6 + 0.3 * u(rng);
  c.body_height = 0.7 + 0.3 * u(rng);
  c.cabin_height = 0.45 + 0.25 * u(rng);
  c.cabin_length = c.length * (0.4 + 0.2 * u(rng));
  c.cabin_offset = -0.15 * c.length + 0.15 * c.length * u(rng);
  c.cabin_width = c.width * (0.8 + 0.12 * u(rng));
  return c;
}

// A family of `count` random cars sampled on one template.
inline std::vector<ShapeMatrix> make_car_family(const CarTemplate& tmpl, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ShapeMatrix> models;
  models.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) models.push_back(tmpl.sample(random_car_parameters(rng)));
  return models;
}

// The default family: 12 procedural cars, K = 5, with template normals.
inline ShapeSpace default_car_shape_space(int point_count = 1024, int latent_dim = 5, std::uint64_t seed = 11) {
  const CarTemplate tmpl(point_count);
  const auto models = make_car_family(tmpl, 12, seed);
  return build_shape_space(models, latent_dim).with_normals(tmpl.normals());
}

}  // namespace pseudolabel
