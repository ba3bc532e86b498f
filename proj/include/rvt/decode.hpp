#pragma once

// Action decoding: heatmap back-projection onto a workspace grid, Euler bin
// decoding and the binary heads.

#include "rvt/geom.hpp"
#include "rvt/model.hpp"
#include "rvt/render.hpp"

#include "json.hpp"  // vendored nlohmann/json

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvt {

/// V^3 candidate points at cell centers.  Flat index = (iz * V + iy) * V + ix.
struct TranslationGrid {
  WorkspaceBox box;
  std::size_t resolution = 40;

  TranslationGrid() = default;
  TranslationGrid(const WorkspaceBox& b, std::size_t v) : box(b), resolution(v) {
    if (v < 2) throw std::invalid_argument("TranslationGrid: resolution must be >= 2");
  }

  std::size_t size() const { return resolution * resolution * resolution; }

  Vec3 point(std::size_t flat) const {
    const std::size_t v = resolution;
    const std::size_t ix = flat % v, iy = (flat / v) % v, iz = flat / (v * v);
    const Vec3 cell = (box.max - box.min) / static_cast<double>(v);
    return box.min + Vec3((ix + 0.5) * cell.x(), (iy + 0.5) * cell.y(), (iz + 0.5) * cell.z());
  }

  /// Flat index of the cell containing p (clamped to the box).
  std::size_t cell_of(const Vec3& p) const {
    const std::size_t v = resolution;
    std::size_t idx[3];
    for (int a = 0; a < 3; ++a) {
      const double f = (p[a] - box.min[a]) / (box.max[a] - box.min[a]) * static_cast<double>(v);
      idx[a] = static_cast<std::size_t>(std::clamp(std::floor(f), 0.0, static_cast<double>(v - 1)));
    }
    return (idx[2] * v + idx[1]) * v + idx[0];
  }
};

using Heatmap = Image<double>;  // single channel probabilities

struct ScoreVolume {
  std::vector<double> scores;  // grid flat order
  std::size_t argmax = 0;
  Vec3 point = Vec3::Zero();
  double max_score = 0.0;
};

/// Bilinear sample at continuous pixel coordinates (centers at +0.5),
/// clamped to the image border.
inline double sample_bilinear(const Heatmap& h, double u, double v) {
  const double x = u - 0.5, y = v - 0.5;
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double ax = x - fx0, ay = y - fy0;
  auto clampi = [](double i, int n) { return static_cast<int>(std::clamp(i, 0.0, static_cast<double>(n - 1))); };
  const int x0 = clampi(fx0, h.width), x1 = clampi(fx0 + 1, h.width);
  const int y0 = clampi(fy0, h.height), y1 = clampi(fy0 + 1, h.height);
  // lerp form keeps a constant image exactly constant
  const double top = h.at(y0, x0) + ax * (h.at(y0, x1) - h.at(y0, x0));
  const double bottom = h.at(y1, x0) + ax * (h.at(y1, x1) - h.at(y1, x0));
  return top + ay * (bottom - top);
}

inline void check_heatmap(const Heatmap& h, const char* who) {
  if (h.channels != 1 || h.height < 1 || h.width < 1) throw std::invalid_argument(std::string(who) + ": bad heatmap shape");
  double s = 0.0;
  for (double x : h.data) s += x;
  if (std::abs(s - 1.0) > 1e-3) throw std::invalid_argument(std::string(who) + ": heatmap sums to " + std::to_string(s));
}

/// score(p) = sum over views of the heatmap sampled at p's projection
/// (0 where p falls outside a view).  Ties go to the smallest flat index.
inline ScoreVolume backproject_scores(const std::vector<Heatmap>& heatmaps, const ViewSet& views,
                                      const TranslationGrid& grid) {
  if (views.empty()) throw std::invalid_argument("backproject_scores: empty ViewSet");
  if (heatmaps.size() != views.size()) {
    throw std::invalid_argument("backproject_scores: " + std::to_string(heatmaps.size()) + " heatmaps for " +
                                std::to_string(views.size()) + " views");
  }
  for (const auto& h : heatmaps) check_heatmap(h, "backproject_scores");

  ScoreVolume out;
  out.scores.assign(grid.size(), 0.0);
  for (std::size_t k = 0; k < views.size(); ++k) {
    const Heatmap& h = heatmaps[k];
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const Projected pr = project(views.cameras[k], grid.point(i), h.width, h.height);
      if (pr.in_bounds) out.scores[i] += sample_bilinear(h, pr.u, pr.v);
    }
  }
  out.max_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.scores.size(); ++i) {
    if (out.scores[i] > out.max_score) {
      out.max_score = out.scores[i];
      out.argmax = i;
    }
  }
  out.point = grid.point(out.argmax);
  return out;
}

/// Flat little-endian float64 scores plus a JSON sidecar describing the grid.
inline void export_score_volume(const ScoreVolume& vol, const TranslationGrid& grid, const std::string& path_stem) {
  std::ofstream bin(path_stem + ".bin", std::ios::binary);
  bin.write(reinterpret_cast<const char*>(vol.scores.data()), static_cast<std::streamsize>(vol.scores.size() * sizeof(double)));
  nlohmann::json meta = {{"box", {{"min", {grid.box.min.x(), grid.box.min.y(), grid.box.min.z()}},
                                  {"max", {grid.box.max.x(), grid.box.max.y(), grid.box.max.z()}}}},
                         {"V", grid.resolution},
                         {"ordering", "flat = (iz * V + iy) * V + ix, cell centers"},
                         {"dtype", "float64"},
                         {"argmax", vol.argmax}};
  std::ofstream(path_stem + ".json") << meta.dump(2) << "\n";
  if (!bin) throw std::runtime_error("cannot write score volume '" + path_stem + ".bin'");
}

/// Per angle, the argmax bin's center 5 b + 2.5 degrees (ties to the lowest bin).
inline Vec3 decode_rotation(std::span<const double> logits, std::size_t bins = 72) {
  if (logits.size() != 3 * bins) throw std::invalid_argument("decode_rotation: expected 3 x " + std::to_string(bins) + " logits");
  const double width = 360.0 / static_cast<double>(bins);
  Vec3 out;
  for (std::size_t a = 0; a < 3; ++a) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < bins; ++b)
      if (logits[a * bins + b] > logits[a * bins + best]) best = b;
    out[static_cast<Eigen::Index>(a)] = width * static_cast<double>(best) + 0.5 * width;
  }
  return out;
}

struct ActionPrediction {
  Vec3 translation = Vec3::Zero();
  Vec3 euler = Vec3::Zero();  // degrees, bin centers
  bool gripper_open = true;
  bool collision_allowed = true;
  double score = 0.0;
};

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// Softmax each view's heatmap logits into a probability image.
template <class T>
std::vector<Heatmap> heatmap_probabilities(const ModelOutput<T>& out) {
  std::vector<Heatmap> hs;
  for (const auto& logits : out.heatmap_logits) {
    Heatmap h(static_cast<int>(logits.dim(0)), static_cast<int>(logits.dim(1)), 1);
    double mx = -std::numeric_limits<double>::infinity();
    for (T x : logits.data()) mx = std::max(mx, static_cast<double>(x));
    double s = 0.0;
    for (std::size_t i = 0; i < h.data.size(); ++i) s += (h.data[i] = std::exp(static_cast<double>(logits[i]) - mx));
    for (auto& x : h.data) x /= s;
    hs.push_back(std::move(h));
  }
  return hs;
}

template <class T>
ActionPrediction assemble_action(const ModelOutput<T>& out, const ViewSet& views, const TranslationGrid& grid) {
  ActionPrediction a;
  const ScoreVolume vol = backproject_scores(heatmap_probabilities(out), views, grid);
  a.translation = vol.point;
  a.score = vol.max_score;
  const std::vector<double> rot(out.rot_logits.data().begin(), out.rot_logits.data().end());
  a.euler = decode_rotation(rot, out.rot_logits.dim(1));
  a.gripper_open = sigmoid(static_cast<double>(out.gripper_logit.item())) >= 0.5;
  a.collision_allowed = sigmoid(static_cast<double>(out.collision_logit.item())) >= 0.5;
  return a;
}

}  // namespace rvt
