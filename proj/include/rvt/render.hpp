#pragma once

// Point-cloud re-rendering into 7-channel virtual views (rgb, depth, world xyz).
//
// Virtual cameras follow the graphics convention: the camera frame looks down
// its -Z axis, +Y is image up.  Pixel (u, v) is continuous, u along columns
// and v along rows with row 0 at the top; pixel (c, r) covers
// [c, c+1) x [r, r+1) and its center is (c + 0.5, r + 0.5).

#include "rvt/geom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvt {

enum class Projection { Orthographic, Perspective };

inline const char* to_string(Projection p) {
  return p == Projection::Orthographic ? "orthographic" : "perspective";
}

struct VirtualCamera {
  std::string name;
  Projection projection = Projection::Orthographic;
  RigidTransform pose;  // camera -> world
  double ortho_halfwidth = 0.5;
  double ortho_halfheight = 0.5;
  double fov_y_deg = 60.0;
  double near = 0.1;
  double far = 2.0;

  void validate() const {
    if (!(near < far)) throw std::invalid_argument("VirtualCamera '" + name + "': near must be < far");
    if (projection == Projection::Orthographic) {
      if (!(ortho_halfwidth > 0.0) || !(ortho_halfheight > 0.0)) {
        throw std::invalid_argument("VirtualCamera '" + name + "': ortho extents must be > 0");
      }
    } else if (!(fov_y_deg > 0.0 && fov_y_deg < 180.0)) {
      throw std::invalid_argument("VirtualCamera '" + name + "': fov_y must be in (0, 180)");
    }
  }

  /// Unit viewing direction in the world frame.
  Vec3 viewing_axis() const { return -pose.rotation().col(2); }
  Vec3 position() const { return pose.translation(); }
};

struct Projected {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // distance along the viewing axis (m)
  bool in_bounds = false;
};

inline Projected project(const VirtualCamera& cam, const Vec3& world, int width, int height) {
  const Mat3& r = cam.pose.rotation();
  const Vec3 c = r.transpose() * (world - cam.pose.translation());
  Projected out;
  out.depth = -c.z();
  if (cam.projection == Projection::Orthographic) {
    out.u = (c.x() + cam.ortho_halfwidth) / (2.0 * cam.ortho_halfwidth) * width;
    out.v = (cam.ortho_halfheight - c.y()) / (2.0 * cam.ortho_halfheight) * height;
  } else {
    if (!(out.depth > 0.0)) return out;
    const double f = 0.5 * height / std::tan(0.5 * cam.fov_y_deg * kDegToRad);
    out.u = 0.5 * width + f * c.x() / out.depth;
    out.v = 0.5 * height - f * c.y() / out.depth;
  }
  out.in_bounds = out.u >= 0.0 && out.u < width && out.v >= 0.0 && out.v < height &&
                  out.depth >= cam.near && out.depth <= cam.far;
  return out;
}

/// H x W x 7 rendering.  Background pixels: depth 1, rgb 0, xyz 0.
struct ViewImage {
  int height = 0;
  int width = 0;
  Image<double> rgb;    // 3 channels in [0, 1]
  Image<double> depth;  // 1 channel, (d - near) / (far - near)
  Image<double> xyz;    // 3 channels, world frame (m)

  ViewImage() = default;
  ViewImage(int h, int w) : height(h), width(w), rgb(h, w, 3, 0.0), depth(h, w, 1, 1.0), xyz(h, w, 3, 0.0) {}

  bool is_background(int row, int col) const { return depth.at(row, col) == 1.0; }
};

/// Rendered view plus the index of the point that won each pixel (-1 = none).
struct IndexedView {
  ViewImage image;
  std::vector<std::int64_t> winner;
};

inline double normalized_depth(const VirtualCamera& cam, double d) {
  return (d - cam.near) / (cam.far - cam.near);
}

inline IndexedView render_indexed(const PointCloud& cloud, const VirtualCamera& cam, int height, int width,
                                  int splat_radius = 1) {
  if (height < 1 || width < 1) throw std::invalid_argument("render: image size must be >= 1");
  if (splat_radius < 0) throw std::invalid_argument("render: splat_radius must be >= 0");
  cam.validate();
  if (cloud.positions.size() != cloud.colors.size()) {
    throw std::invalid_argument("render: point cloud positions/colors mismatch");
  }

  const std::size_t npix = static_cast<std::size_t>(height) * width;
  std::vector<double> zbuf(npix, std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> winner(npix, -1);

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Projected p = project(cam, cloud.positions[i], width, height);
    // depth == far would normalize to the background value
    if (!p.in_bounds || p.depth >= cam.far) continue;
    const int col = static_cast<int>(p.u);
    const int row = static_cast<int>(p.v);
    const int r0 = std::max(0, row - splat_radius), r1 = std::min(height - 1, row + splat_radius);
    const int c0 = std::max(0, col - splat_radius), c1 = std::min(width - 1, col + splat_radius);
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const std::size_t k = static_cast<std::size_t>(r) * width + c;
        // ascending point order + strict < keeps the smallest index on ties
        if (p.depth < zbuf[k]) {
          zbuf[k] = p.depth;
          winner[k] = static_cast<std::int64_t>(i);
        }
      }
    }
  }

  IndexedView out{ViewImage(height, width), std::move(winner)};
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const std::int64_t w = out.winner[static_cast<std::size_t>(r) * width + c];
      if (w < 0) continue;
      const Vec3& pos = cloud.positions[static_cast<std::size_t>(w)];
      const Vec3& col = cloud.colors[static_cast<std::size_t>(w)];
      for (int ch = 0; ch < 3; ++ch) {
        out.image.rgb.at(r, c, ch) = col[ch];
        out.image.xyz.at(r, c, ch) = pos[ch];
      }
      out.image.depth.at(r, c) = normalized_depth(cam, zbuf[static_cast<std::size_t>(r) * width + c]);
    }
  }
  return out;
}

inline ViewImage render(const PointCloud& cloud, const VirtualCamera& cam, int height, int width,
                        int splat_radius = 1) {
  return render_indexed(cloud, cam, height, width, splat_radius).image;
}

enum class ViewPreset { Cube5, Cube3, Front1, Cube5Rot15, Real4, Custom };

inline const char* to_string(ViewPreset p) {
  switch (p) {
    case ViewPreset::Cube5: return "cube5";
    case ViewPreset::Cube3: return "cube3";
    case ViewPreset::Front1: return "front1";
    case ViewPreset::Cube5Rot15: return "cube5_rot15";
    case ViewPreset::Real4: return "real4";
    case ViewPreset::Custom: return "custom";
  }
  return "custom";
}

inline ViewPreset view_preset_from_string(const std::string& s) {
  for (ViewPreset p : {ViewPreset::Cube5, ViewPreset::Cube3, ViewPreset::Front1, ViewPreset::Cube5Rot15,
                       ViewPreset::Real4, ViewPreset::Custom}) {
    if (s == to_string(p)) return p;
  }
  throw std::invalid_argument("unknown view preset '" + s + "'");
}

struct ViewSet {
  std::vector<VirtualCamera> cameras;
  ViewPreset preset = ViewPreset::Custom;

  std::size_t size() const { return cameras.size(); }
  bool empty() const { return cameras.empty(); }

  void validate() const {
    if (cameras.empty()) throw std::invalid_argument("ViewSet: no cameras");
    for (const auto& c : cameras) c.validate();
  }
};

namespace detail {

/// Camera->world pose at `eye` looking at `target`, image up aligned with
/// the projection of `up_hint` onto the image plane.
inline RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint) {
  const Vec3 back = (eye - target).normalized();  // camera +Z
  Vec3 up = up_hint - up_hint.dot(back) * back;
  if (up.norm() < 1e-9) throw std::invalid_argument("look_at: up hint parallel to viewing axis");
  up.normalize();
  const Vec3 right = up.cross(back);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = up;
  r.col(2) = back;
  return {r, eye};
}

/// Fill near/far and the projection extents so the whole box is visible.
inline void fit_to_box(VirtualCamera& cam, const WorkspaceBox& box) {
  const Mat3 rt = cam.pose.rotation().transpose();
  double dmin = std::numeric_limits<double>::infinity(), dmax = -dmin;
  double half = 0.0, tan_half = 0.0;
  const Vec3 center_cam = rt * (box.center() - cam.pose.translation());
  for (const Vec3& corner : box.corners()) {
    const Vec3 c = rt * (corner - cam.pose.translation());
    const double d = -c.z();
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
    half = std::max({half, std::abs(c.x() - center_cam.x()), std::abs(c.y() - center_cam.y())});
    if (d > 0.0) tan_half = std::max({tan_half, std::abs(c.x()) / d, std::abs(c.y()) / d});
  }
  if (!(dmin > 0.0)) throw std::invalid_argument("fit_to_box: camera is inside or beside the workspace");
  const double slack = 0.25 * (dmax - dmin);
  cam.near = dmin - slack;
  cam.far = dmax + slack;
  cam.ortho_halfwidth = cam.ortho_halfheight = half;
  cam.fov_y_deg = 2.0 * std::atan(tan_half) * kRadToDeg;
}

}  // namespace detail

/// Face cameras of the workspace cube.  Each sits on the outward normal of
/// its face, twice the half extent from the center, looking at the center.
inline ViewSet cube_views(const WorkspaceBox& box, ViewPreset preset,
                          Projection projection = Projection::Orthographic) {
  const Vec3 c = box.center();
  const Vec3 h = box.half_extents();
  struct Face {
    const char* name;
    Vec3 normal;
  };
  const std::array<Face, 5> faces = {{{"top", Vec3::UnitZ()},
                                      {"front", Vec3::UnitX()},
                                      {"back", -Vec3::UnitX()},
                                      {"left", Vec3::UnitY()},
                                      {"right", -Vec3::UnitY()}}};

  std::vector<const char*> names;
  switch (preset) {
    case ViewPreset::Cube5:
    case ViewPreset::Cube5Rot15: names = {"top", "front", "back", "left", "right"}; break;
    case ViewPreset::Cube3: names = {"front", "top", "left"}; break;
    case ViewPreset::Front1: names = {"front"}; break;
    case ViewPreset::Real4: {
      // fixed sensor-like placements: front, two shoulders and an oblique overhead
      const std::array<std::pair<const char*, Vec3>, 4> real = {{{"front", Vec3(1.0, 0.0, 0.5)},
                                                                 {"left_shoulder", Vec3(-0.3, 1.0, 0.8)},
                                                                 {"right_shoulder", Vec3(-0.3, -1.0, 0.8)},
                                                                 {"overhead", Vec3(0.35, 0.0, 1.0)}}};
      ViewSet set;
      set.preset = preset;
      const double dist = 2.5 * h.maxCoeff();
      for (const auto& [name, dir] : real) {
        VirtualCamera cam;
        cam.name = name;
        cam.projection = projection;
        cam.pose = detail::look_at(c + dist * dir.normalized(), c, Vec3::UnitZ());
        detail::fit_to_box(cam, box);
        set.cameras.push_back(cam);
      }
      return set;
    }
    case ViewPreset::Custom: throw std::invalid_argument("cube_views: Custom preset has no cameras");
  }

  ViewSet set;
  set.preset = preset;
  const RigidTransform about_center =
      RigidTransform::from_translation(c) *
      RigidTransform(rot_z(preset == ViewPreset::Cube5Rot15 ? 15.0 : 0.0), Vec3::Zero()) *
      RigidTransform::from_translation(-c);
  for (const char* name : names) {
    const Face& f = *std::find_if(faces.begin(), faces.end(),
                                  [&](const Face& x) { return std::string(x.name) == name; });
    const double dist = 2.0 * std::abs(h.dot(f.normal));
    const Vec3 up = f.normal.z() != 0.0 ? Vec3::UnitX() : Vec3::UnitZ();
    VirtualCamera cam;
    cam.name = name;
    cam.projection = projection;
    cam.pose = about_center * detail::look_at(c + dist * f.normal, c, up);
    detail::fit_to_box(cam, box);
    set.cameras.push_back(cam);
  }
  return set;
}

inline std::vector<ViewImage> render_views(const PointCloud& cloud, const ViewSet& views, int res,
                                           int splat_radius = 1) {
  std::vector<ViewImage> out;
  out.reserve(views.size());
  for (const auto& cam : views.cameras) out.push_back(render(cloud, cam, res, res, splat_radius));
  return out;
}

}  // namespace rvt
