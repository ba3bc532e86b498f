#pragma once

// Timing report: multi-view re-rendering versus dense occupancy voxelization
// of the same cloud, plus one model forward.  Report only.

#include "rvt/model.hpp"
#include "rvt/render.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <vector>

namespace rvt {

/// Per-cell point counts over V^3 cells, flat index (iz * V + iy) * V + ix.
inline std::vector<std::uint32_t> voxelize_occupancy(const PointCloud& cloud, const WorkspaceBox& box, std::size_t v) {
  std::vector<std::uint32_t> grid(v * v * v, 0);
  const Vec3 scale = Vec3::Constant(static_cast<double>(v)).cwiseQuotient(box.max - box.min);
  for (const Vec3& p : cloud.positions) {
    if (!box.contains(p)) continue;
    std::size_t idx[3];
    for (int a = 0; a < 3; ++a) {
      const auto i = static_cast<std::size_t>((p[a] - box.min[a]) * scale[a]);
      idx[a] = std::min(i, v - 1);
    }
    ++grid[(idx[2] * v + idx[1]) * v + idx[0]];
  }
  return grid;
}

inline PointCloud random_cloud(std::size_t n, const WorkspaceBox& box, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud c;
  c.positions.reserve(n);
  c.colors.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 t(u(rng), u(rng), u(rng));
    c.push_back(box.min + t.cwiseProduct(box.max - box.min), Vec3(u(rng), u(rng), u(rng)));
  }
  return c;
}

/// Median wall-clock milliseconds of `runs` calls.
inline double median_ms(const std::function<void()>& fn, int runs = 5) {
  std::vector<double> t;
  for (int i = 0; i < runs; ++i) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    const auto b = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double, std::milli>(b - a).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

struct BenchOptions {
  std::vector<std::size_t> cloud_sizes = {10000, 100000};
  ViewPreset preset = ViewPreset::Cube5;
  std::size_t res = 220;
  std::size_t voxels = 100;
  int splat_radius = 1;
  bool model_forward = true;
  RVTConfig model;  // views and image_res are taken from the preset and res
  WorkspaceBox box;
  int runs = 5;
};

/// TSV rows: stage, N, K, res, V, median_ms.
inline void run_bench(const BenchOptions& opt, std::ostream& os) {
  const ViewSet views = cube_views(opt.box, opt.preset);
  const int res = static_cast<int>(opt.res);
  os << "stage\tN\tK\tres\tV\tmedian_ms\n";
  auto row = [&](const char* stage, std::size_t n, double ms) {
    os << stage << "\t" << n << "\t" << views.size() << "\t" << opt.res << "\t" << opt.voxels << "\t" << ms << "\n";
  };
  std::vector<ViewImage> last;
  for (std::size_t n : opt.cloud_sizes) {
    const PointCloud cloud = random_cloud(n, opt.box, n);
    row("render", n, median_ms([&] { last = render_views(cloud, views, res, opt.splat_radius); }, opt.runs));
    row("voxelize", n, median_ms([&] { (void)voxelize_occupancy(cloud, opt.box, opt.voxels); }, opt.runs));
  }
  if (opt.model_forward && !last.empty()) {
    RVTConfig cfg = opt.model;
    cfg.views = views.size();
    cfg.image_res = opt.res;
    const RvtModel<float> model(cfg);
    const nn::Weights<float> w = model.init(0);
    const LanguageTokens lang = StubLanguageEncoder(cfg.d_lang).encode("reach the red block");
    row("forward", opt.cloud_sizes.back(), median_ms([&] {
          nn::ParamScope<float> scope(w, false);
          (void)model.forward(scope, last, lang, {});
        }, opt.runs));
  }
}

}  // namespace rvt
