#pragma once

// Readers and writers for the KITTI-style exchange formats: object labels,
// velodyne scans, odometry poses, calibration, and PGM masks.

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "pseudolabel/chamfer.hpp"
#include "pseudolabel/error.hpp"
#include "pseudolabel/eval.hpp"
#include "pseudolabel/geometry.hpp"
#include "pseudolabel/shapespace.hpp"

namespace pseudolabel {

// Shortest representation that parses back to the same double.
inline std::string format_number(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::optional<double> parse_number(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline std::ifstream open_input(const std::filesystem::path& path, bool binary = false) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw Error(ErrorCode::InputMissing, "cannot open " + path.string());
  return is;
}

inline std::ofstream open_output(const std::filesystem::path& path, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw Error(ErrorCode::FormatError, "cannot write " + path.string());
  return os;
}

// ---- object labels ----

// One label line. Boxes use the geometric center; the file stores the
// bottom center (y + h/2) as KITTI does.
struct LabelRecord {
  std::string type = "Car";
  Box3D box;
  ShapeCode shape_code;  // optional trailing fields
};

inline std::string format_label(const LabelRecord& rec) {
  const Box3D& b = rec.box;
  const double alpha = wrap_angle(b.yaw - std::atan2(b.center.x(), b.center.z()));
  std::string line = rec.type + " -1 -1 " + format_number(alpha) + " -1 -1 -1 -1";
  for (double v : {b.height, b.width, b.length, b.center.x(), b.center.y() + b.height / 2.0, b.center.z(), b.yaw,
                   b.score}) {
    line += ' ';
    line += format_number(v);
  }
  for (Eigen::Index k = 0; k < rec.shape_code.size(); ++k) {
    line += ' ';
    line += format_number(rec.shape_code(k));
  }
  return line;
}

// 15 fields are required; a 16th is the score and anything after it is a
// shape code.
inline LabelRecord parse_label(std::string_view line, const std::string& where) {
  const auto fields = split_whitespace(line);
  if (fields.size() < 15) {
    throw Error(ErrorCode::ParseError, where + ": expected at least 15 fields, got " + std::to_string(fields.size()));
  }
  std::vector<double> v;
  for (std::size_t i = 1; i < fields.size(); ++i) {
    const auto n = parse_number(fields[i]);
    if (!n) throw Error(ErrorCode::ParseError, where + ": bad number '" + std::string(fields[i]) + "'");
    v.push_back(*n);
  }
  LabelRecord rec;
  rec.type = std::string(fields[0]);
  rec.box.height = v[7];
  rec.box.width = v[8];
  rec.box.length = v[9];
  rec.box.center = Vec3(v[10], v[11] - v[7] / 2.0, v[12]);
  rec.box.yaw = v[13];
  rec.box.score = v.size() > 14 ? v[14] : 1.0;
  if (v.size() > 15) {
    rec.shape_code.resize(static_cast<Eigen::Index>(v.size() - 15));
    for (std::size_t k = 15; k < v.size(); ++k) rec.shape_code(static_cast<Eigen::Index>(k - 15)) = v[k];
  }
  return rec;
}

inline void write_labels(const std::filesystem::path& path, const std::vector<LabelRecord>& records) {
  auto os = open_output(path);
  for (const auto& r : records) os << format_label(r) << '\n';
}

inline std::vector<LabelRecord> read_labels(const std::filesystem::path& path) {
  auto is = open_input(path);
  std::vector<LabelRecord> out;
  std::string line;
  for (int number = 1; std::getline(is, line); ++number) {
    if (split_whitespace(line).empty()) continue;
    out.push_back(parse_label(line, path.string() + ":" + std::to_string(number)));
  }
  return out;
}

inline std::string frame_file_name(int frame, std::string_view extension) {
  std::array<char, 16> buf{};
  std::snprintf(buf.data(), buf.size(), "%06d", frame);
  return std::string(buf.data()) + std::string(extension);
}

// ---- velodyne ----

inline std::vector<Vec3> read_velodyne(const std::filesystem::path& path) {
  auto is = open_input(path, true);
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() % 16 != 0) {
    throw Error(ErrorCode::FormatError, path.string() + ": size is not a multiple of 16 bytes");
  }
  std::vector<Vec3> points;
  points.reserve(bytes.size() / 16);
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    std::array<float, 3> xyz{};
    for (int c = 0; c < 3; ++c) {
      std::uint32_t raw = 0;
      for (int b = 3; b >= 0; --b) raw = (raw << 8) | static_cast<unsigned char>(bytes[off + 4 * c + b]);
      xyz[c] = std::bit_cast<float>(raw);
    }
    points.emplace_back(xyz[0], xyz[1], xyz[2]);
  }
  return points;
}

inline void write_velodyne(const std::filesystem::path& path, const std::vector<Vec3>& points) {
  auto os = open_output(path, true);
  std::string bytes;
  bytes.reserve(points.size() * 16);
  for (const Vec3& p : points) {
    for (float f : {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()), 0.0f}) {
      const auto raw = std::bit_cast<std::uint32_t>(f);
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((raw >> (8 * b)) & 0xff));
    }
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---- poses ----

inline EgoTrajectory read_poses(const std::filesystem::path& path) {
  auto is = open_input(path);
  EgoTrajectory out;
  std::string line;
  for (int number = 1; std::getline(is, line); ++number) {
    const auto fields = split_whitespace(line);
    if (fields.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(number);
    if (fields.size() != 12) throw Error(ErrorCode::ParseError, where + ": expected 12 values");
    std::array<double, 12> v{};
    for (int i = 0; i < 12; ++i) {
      const auto n = parse_number(fields[static_cast<std::size_t>(i)]);
      if (!n) throw Error(ErrorCode::ParseError, where + ": bad number");
      v[static_cast<std::size_t>(i)] = *n;
    }
    out.push_back(RigidTransform::from_row_major(v));
  }
  return out;
}

inline void write_poses(const std::filesystem::path& path, const EgoTrajectory& poses) {
  auto os = open_output(path);
  for (const auto& t : poses) {
    const auto v = t.to_row_major();
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << format_number(v[i]);
    os << '\n';
  }
}

// ---- calibration ----

struct Calibration {
  Eigen::Matrix<double, 3, 4> p2 = Eigen::Matrix<double, 3, 4>::Zero();
  Mat3 r0_rect = Mat3::Identity();
  RigidTransform velo_to_cam;
  RigidTransform imu_to_velo;
  int image_width = 1242;
  int image_height = 375;

  CameraIntrinsics intrinsics() const {
    CameraIntrinsics k;
    k.fx = p2(0, 0);
    k.fy = p2(1, 1);
    k.cx = p2(0, 2);
    k.cy = p2(1, 2);
    k.image_width = image_width;
    k.image_height = image_height;
    return k;
  }
  // Lidar points into the rectified camera frame.
  RigidTransform velo_to_rect() const { return RigidTransform(r0_rect, Vec3::Zero()) * velo_to_cam; }
  RigidTransform imu_to_rect() const { return velo_to_rect() * imu_to_velo; }
};

// Tolerance is loose because calibration files print about seven digits.
inline constexpr double kCalibrationTolerance = 1e-5;

inline Calibration read_calibration(const std::filesystem::path& path) {
  auto is = open_input(path);
  std::map<std::string, std::vector<double>> entries;
  std::string line;
  for (int number = 1; std::getline(is, line); ++number) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    std::vector<double> values;
    for (auto f : split_whitespace(std::string_view(line).substr(colon + 1))) {
      const auto n = parse_number(f);
      if (!n) {
        throw Error(ErrorCode::CalibrationInvalid,
                    path.string() + ":" + std::to_string(number) + ": bad number in " + key);
      }
      values.push_back(*n);
    }
    entries[key] = std::move(values);
  }
  auto get = [&](std::initializer_list<const char*> keys, std::size_t count) -> const std::vector<double>* {
    for (const char* k : keys) {
      const auto it = entries.find(k);
      if (it == entries.end()) continue;
      if (it->second.size() != count) {
        throw Error(ErrorCode::CalibrationInvalid,
                    path.string() + ": " + k + " needs " + std::to_string(count) + " values");
      }
      return &it->second;
    }
    return nullptr;
  };
  auto rigid = [&](const std::vector<double>& v, const char* name) {
    std::array<double, 12> a{};
    std::copy(v.begin(), v.end(), a.begin());
    const RigidTransform t = RigidTransform::from_row_major(a);
    if (!t.is_valid(kCalibrationTolerance)) {
      throw Error(ErrorCode::CalibrationInvalid, path.string() + ": " + name + " is not a rigid transform");
    }
    return t;
  };

  Calibration c;
  const auto* p2 = get({"P2"}, 12);
  if (!p2) throw Error(ErrorCode::CalibrationInvalid, path.string() + ": missing P2");
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 4; ++col) c.p2(r, col) = (*p2)[static_cast<std::size_t>(r * 4 + col)];
  }
  if (!(c.p2(0, 0) > 0.0) || !(c.p2(1, 1) > 0.0)) {
    throw Error(ErrorCode::CalibrationInvalid, path.string() + ": P2 focal lengths must be positive");
  }
  if (const auto* r0 = get({"R0_rect", "R_rect"}, 9)) {
    for (int r = 0; r < 3; ++r) {
      for (int col = 0; col < 3; ++col) c.r0_rect(r, col) = (*r0)[static_cast<std::size_t>(r * 3 + col)];
    }
    if (!RigidTransform(c.r0_rect, Vec3::Zero()).is_valid(kCalibrationTolerance)) {
      throw Error(ErrorCode::CalibrationInvalid, path.string() + ": R0_rect is not a rotation");
    }
  }
  const auto* velo = get({"Tr_velo_to_cam", "Tr_velo_cam"}, 12);
  if (!velo) throw Error(ErrorCode::CalibrationInvalid, path.string() + ": missing Tr_velo_to_cam");
  c.velo_to_cam = rigid(*velo, "Tr_velo_to_cam");
  if (const auto* imu = get({"Tr_imu_to_velo", "Tr_imu_velo"}, 12)) c.imu_to_velo = rigid(*imu, "Tr_imu_to_velo");
  if (const auto* size = get({"image_size"}, 2)) {
    c.image_width = static_cast<int>((*size)[0]);
    c.image_height = static_cast<int>((*size)[1]);
  }
  if (!c.intrinsics().is_valid()) {
    throw Error(ErrorCode::CalibrationInvalid, path.string() + ": principal point outside the image");
  }
  return c;
}

inline void write_calibration(const std::filesystem::path& path, const Calibration& c) {
  auto os = open_output(path);
  auto row = [&](const char* key, const auto& values) {
    os << key << ':';
    for (double v : values) os << ' ' << format_number(v);
    os << '\n';
  };
  std::vector<double> p2;
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 4; ++col) p2.push_back(c.p2(r, col));
  }
  std::vector<double> r0;
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 3; ++col) r0.push_back(c.r0_rect(r, col));
  }
  row("P2", p2);
  row("R0_rect", r0);
  row("Tr_velo_to_cam", c.velo_to_cam.to_row_major());
  row("Tr_imu_to_velo", c.imu_to_velo.to_row_major());
  row("image_size", std::vector<double>{static_cast<double>(c.image_width), static_cast<double>(c.image_height)});
}

// ---- masks ----

// 8-bit binary PGM (P5). Pixel value v > 0 marks instance v - 1, so a single
// file per frame carries every instance mask of that frame.
struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  int instance_count() const {
    int n = 0;
    for (auto v : pixels) n = std::max(n, static_cast<int>(v));
    return n;
  }

  InstanceMask instance(int index) const {
    InstanceMask m(width, height);
    const auto value = static_cast<std::uint8_t>(index + 1);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (at(x, y) == value) m.set(x, y, true);
      }
    }
    return m;
  }
};

inline void write_pgm(const std::filesystem::path& path, const LabelImage& img) {
  auto os = open_output(path, true);
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline LabelImage read_pgm(const std::filesystem::path& path) {
  auto is = open_input(path, true);
  auto token = [&]() {
    std::string t;
    char ch = 0;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (!std::isspace(static_cast<unsigned char>(ch))) {
        t.push_back(ch);
        break;
      }
    }
    while (is.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) t.push_back(ch);
    return t;
  };
  if (token() != "P5") throw Error(ErrorCode::FormatError, path.string() + ": not a binary PGM");
  LabelImage img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) > 255) throw Error(ErrorCode::FormatError, path.string() + ": 16-bit PGM unsupported");
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::FormatError, path.string() + ": bad PGM header");
  }
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
    throw Error(ErrorCode::FormatError, path.string() + ": truncated PGM");
  }
  return img;
}

}  // namespace pseudolabel
