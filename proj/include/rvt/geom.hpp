#pragma once

// World-frame geometry: rigid transforms, point clouds, RGB-D unprojection,
// workspace cropping and the SE(3) training augmentation.
//
// Conventions used across the library:
//   * Euler angles are degrees, stored as (x, y, z) and composed intrinsically
//     Z-Y-X:  R = Rz(z) * Ry(y) * Rx(x).  The z component is the yaw.
//   * Angles handed out by the library are wrapped to [0, 360).

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvt {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

inline bool is_finite(const Vec3& v) { return v.allFinite(); }

/// Wrap an angle in degrees to [0, 360).
inline double wrap_degrees(double deg) {
  double w = std::fmod(deg, 360.0);
  if (w < 0.0) w += 360.0;
  if (w >= 360.0) w -= 360.0;  // fmod of tiny negatives rounds up to 360
  return w;
}

inline Vec3 wrap_euler(const Vec3& e) {
  return {wrap_degrees(e.x()), wrap_degrees(e.y()), wrap_degrees(e.z())};
}

inline Mat3 rot_x(double deg) {
  return Eigen::AngleAxisd(deg * kDegToRad, Vec3::UnitX()).toRotationMatrix();
}
inline Mat3 rot_y(double deg) {
  return Eigen::AngleAxisd(deg * kDegToRad, Vec3::UnitY()).toRotationMatrix();
}
inline Mat3 rot_z(double deg) {
  return Eigen::AngleAxisd(deg * kDegToRad, Vec3::UnitZ()).toRotationMatrix();
}

inline Mat3 euler_to_matrix(const Vec3& euler_deg) {
  return rot_z(euler_deg.z()) * rot_y(euler_deg.y()) * rot_x(euler_deg.x());
}

/// Inverse of euler_to_matrix, wrapped to [0, 360).  At gimbal lock the x
/// angle is folded into z.
inline Vec3 matrix_to_euler(const Mat3& r) {
  const double sy = -r(2, 0);
  double x, y, z;
  if (std::abs(sy) < 1.0 - 1e-12) {
    y = std::asin(sy);
    x = std::atan2(r(2, 1), r(2, 2));
    z = std::atan2(r(1, 0), r(0, 0));
  } else {
    y = sy > 0 ? std::numbers::pi / 2 : -std::numbers::pi / 2;
    x = 0.0;
    z = std::atan2(-r(0, 1), r(1, 1));
  }
  return wrap_euler(Vec3(x, y, z) * kRadToDeg);
}

class RigidTransform {
 public:
  RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

  RigidTransform(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {
    const double orth = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!rotation.allFinite() || orth > 1e-6 || std::abs(rotation.determinant() - 1.0) > 1e-6) {
      throw std::invalid_argument("RigidTransform: rotation is not a proper orthonormal matrix");
    }
    if (!translation.allFinite()) {
      throw std::invalid_argument("RigidTransform: translation is not finite");
    }
  }

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 apply_direction(const Vec3& d) const { return rotation_ * d; }

  RigidTransform inverse() const {
    const Mat3 rt = rotation_.transpose();
    return {rt, -(rt * translation_)};
  }

  /// (a * b).apply(p) == a.apply(b.apply(p))
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation_ * b.rotation_, a.rotation_ * b.translation_ + a.translation_};
  }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }

struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;  // rgb in [0, 1]

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }

  void push_back(const Vec3& p, const Vec3& c) {
    positions.push_back(p);
    colors.push_back(c);
  }

  void validate() const {
    if (positions.size() != colors.size()) {
      throw std::invalid_argument("PointCloud: positions and colors differ in length");
    }
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (!positions[i].allFinite() || !colors[i].allFinite()) {
        throw std::invalid_argument("PointCloud: non-finite value at point " + std::to_string(i));
      }
      if (colors[i].minCoeff() < 0.0 || colors[i].maxCoeff() > 1.0) {
        throw std::invalid_argument("PointCloud: color outside [0,1] at point " + std::to_string(i));
      }
    }
  }
};

struct WorkspaceBox {
  Vec3 min = Vec3::Constant(-0.5);
  Vec3 max = Vec3::Constant(0.5);

  WorkspaceBox() = default;
  WorkspaceBox(const Vec3& lo, const Vec3& hi) : min(lo), max(hi) {
    if (!(lo.array() < hi.array()).all()) {
      throw std::invalid_argument("WorkspaceBox: min must be < max componentwise");
    }
  }

  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 half_extents() const { return 0.5 * (max - min); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }

  std::vector<Vec3> corners() const {
    std::vector<Vec3> out;
    out.reserve(8);
    for (int i = 0; i < 8; ++i) {
      out.emplace_back((i & 1) ? max.x() : min.x(), (i & 2) ? max.y() : min.y(),
                       (i & 4) ? max.z() : min.z());
    }
    return out;
  }
};

/// OpenCV-style sensor model: camera looks along +z, pixel (u, v) is
/// column/row index, and pixel centers sit on integer coordinates.
struct PinholeCamera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  RigidTransform pose;  // camera -> world

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("PinholeCamera: fx, fy must be > 0");
  }

  /// World point to (u, v, depth).
  Eigen::Vector3d project(const Vec3& world) const {
    const Vec3 c = pose.inverse().apply(world);
    return {fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy, c.z()};
  }
};

/// Minimal row-major interleaved image buffer.
template <class T>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  Image() = default;
  Image(int h, int w, int c, T fill = T{})
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  T& at(int row, int col, int ch = 0) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  const T& at(int row, int col, int ch = 0) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
};

/// Back-project every pixel with depth > 0 into the world frame.
inline PointCloud unproject_rgbd(const Image<double>& rgb, const Image<double>& depth,
                                 const PinholeCamera& cam) {
  cam.validate();
  if (rgb.channels != 3 || depth.channels != 1 || rgb.height != depth.height ||
      rgb.width != depth.width) {
    throw std::invalid_argument("unproject_rgbd: rgb " + std::to_string(rgb.height) + "x" +
                                std::to_string(rgb.width) + "x" + std::to_string(rgb.channels) +
                                " does not match depth " + std::to_string(depth.height) + "x" +
                                std::to_string(depth.width) + "x" +
                                std::to_string(depth.channels));
  }
  PointCloud out;
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const double d = depth.at(v, u);
      if (d < 0.0 || !std::isfinite(d)) {
        throw std::invalid_argument("unproject_rgbd: negative or non-finite depth");
      }
      if (d == 0.0) continue;
      const Vec3 cam_pt(d * (u - cam.cx) / cam.fx, d * (v - cam.cy) / cam.fy, d);
      out.push_back(cam.pose.apply(cam_pt), Vec3(rgb.at(v, u, 0), rgb.at(v, u, 1), rgb.at(v, u, 2)));
    }
  }
  return out;
}

inline PointCloud transform_cloud(const PointCloud& cloud, const RigidTransform& t) {
  PointCloud out;
  out.positions.reserve(cloud.size());
  for (const auto& p : cloud.positions) out.positions.push_back(t.apply(p));
  out.colors = cloud.colors;
  return out;
}

inline PointCloud crop_to_workspace(const PointCloud& cloud, const WorkspaceBox& box) {
  PointCloud out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (box.contains(cloud.positions[i])) out.push_back(cloud.positions[i], cloud.colors[i]);
  }
  return out;
}

struct AugmentRanges {
  double translation_m = 0.125;
  double yaw_deg = 45.0;
};

struct AugmentResult {
  PointCloud cloud;
  Vec3 translation;
  Vec3 euler;  // degrees, wrapped
  Vec3 sampled_shift;
  double sampled_yaw_deg = 0.0;

  RigidTransform transform() const { return {rot_z(sampled_yaw_deg), sampled_shift}; }
};

/// Random yaw about the world z axis (through the origin) followed by a
/// translation, applied to the cloud and to the ground-truth pose alike.
inline AugmentResult augment(const PointCloud& cloud, const Vec3& gt_translation,
                             const Vec3& gt_euler_deg, std::uint64_t seed,
                             AugmentRanges ranges = {}) {
  if (ranges.translation_m < 0.0 || ranges.yaw_deg < 0.0) {
    throw std::invalid_argument("augment: ranges must be non-negative");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> shift(-ranges.translation_m, ranges.translation_m);
  std::uniform_real_distribution<double> yaw(-ranges.yaw_deg, ranges.yaw_deg);

  AugmentResult out;
  out.sampled_shift = Vec3(shift(rng), shift(rng), shift(rng));
  out.sampled_yaw_deg = yaw(rng);
  if (ranges.translation_m == 0.0) out.sampled_shift.setZero();
  if (ranges.yaw_deg == 0.0) out.sampled_yaw_deg = 0.0;

  const RigidTransform t = out.transform();
  out.cloud = transform_cloud(cloud, t);
  out.translation = t.apply(gt_translation);
  out.euler = gt_euler_deg;
  if (out.sampled_yaw_deg != 0.0) out.euler.z() = wrap_degrees(gt_euler_deg.z() + out.sampled_yaw_deg);
  return out;
}

}  // namespace rvt
