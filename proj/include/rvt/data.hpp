#pragma once

// Demonstrations: episode types, keyframe extraction, the synthetic
// tabletop task generator, and the on-disk dataset format.
//
// Dataset directory:
//   manifest.json  {"format": "rvt-dataset", "version": 1, "episode_count",
//                   "episodes": [{"language", "offset", "bytes",
//                   "checksum" (FNV-1a 64, hex), "steps", "keyframes"}]}
//   data.bin       episodes back to back, every field little-endian:
//     u64 n_steps
//     per step:   u64 n_points, f64[3n] positions, f64[3n] colors,
//                 u64 gripper_open, f64[3] ee_translation, f64[3] ee_euler,
//                 u64 timestamp
//     u64 n_keyframes, u64[n] keyframe indices
//     per action: f64[3] translation, f64[3] euler, u64 gripper_open,
//                 u64 collision_allowed

#include "rvt/geom.hpp"
#include "rvt/language.hpp"

#include "json.hpp"  // vendored nlohmann/json

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvt {

struct Step {
  PointCloud cloud;  // world frame; empty on steps without a captured observation
  bool gripper_open = true;
  Vec3 ee_translation = Vec3::Zero();
  Vec3 ee_euler = Vec3::Zero();
  std::int64_t timestamp = 0;
};

struct KeyframeAction {
  Vec3 translation = Vec3::Zero();
  Vec3 euler = Vec3::Zero();  // degrees, wrapped
  bool gripper_open = true;
  bool collision_allowed = false;
};

struct Episode {
  std::vector<Step> steps;
  std::vector<std::size_t> keyframes;
  std::vector<KeyframeAction> actions;  // one per keyframe
  std::string language;

  /// Step whose observation predicts keyframe action k: the start for the
  /// first action, otherwise the previous keyframe.
  std::size_t observation_index(std::size_t k) const { return k == 0 ? 0 : keyframes.at(k - 1); }

  void validate() const {
    if (steps.empty()) throw std::invalid_argument("Episode: no steps");
    if (keyframes.empty() || keyframes.back() != steps.size() - 1) {
      throw std::invalid_argument("Episode: last step must be a keyframe");
    }
    for (std::size_t i = 1; i < keyframes.size(); ++i)
      if (keyframes[i] <= keyframes[i - 1]) throw std::invalid_argument("Episode: keyframes not strictly increasing");
    if (actions.size() != keyframes.size()) throw std::invalid_argument("Episode: action count != keyframe count");
  }
};

// ------------------------------------------------------------------ keyframes

struct KeyframeOptions {
  double still_speed = 1e-3;  // m per step
  std::size_t still_run = 2;
};

/// Keyframes: gripper open/close changes, the last step of every run of at
/// least `still_run` near-still steps, and the final step.
inline std::vector<std::size_t> extract_keyframes(const std::vector<Step>& steps, const KeyframeOptions& opt = {}) {
  std::vector<std::size_t> out;
  if (steps.empty()) throw std::invalid_argument("extract_keyframes: no steps");
  const std::size_t n = steps.size();
  auto still = [&](std::size_t i) {
    return i > 0 && (steps[i].ee_translation - steps[i - 1].ee_translation).norm() < opt.still_speed;
  };
  std::size_t run = 0;
  for (std::size_t i = 0; i < n; ++i) {
    run = still(i) ? run + 1 : 0;
    const bool toggled = i > 0 && steps[i].gripper_open != steps[i - 1].gripper_open;
    const bool run_ends = run >= opt.still_run && (i + 1 == n || !still(i + 1));
    if (toggled || run_ends || i + 1 == n) out.push_back(i);
  }
  return out;
}

// ------------------------------------------------------------------ generator

enum class SyntheticTask { Reach, Pick };

inline const char* to_string(SyntheticTask t) { return t == SyntheticTask::Reach ? "reach" : "pick"; }

inline SyntheticTask synthetic_task_from_string(const std::string& s) {
  if (s == "reach") return SyntheticTask::Reach;
  if (s == "pick") return SyntheticTask::Pick;
  throw std::invalid_argument("unknown synthetic task '" + s + "'");
}

struct NamedColor {
  std::string name;
  Vec3 rgb;
};

inline std::vector<NamedColor> default_palette() {
  return {{"red", {0.9, 0.1, 0.1}},    {"green", {0.1, 0.8, 0.2}},   {"blue", {0.1, 0.2, 0.9}},
          {"yellow", {0.95, 0.9, 0.1}}, {"cyan", {0.1, 0.85, 0.85}},  {"magenta", {0.85, 0.1, 0.8}},
          {"orange", {1.0, 0.55, 0.05}}, {"purple", {0.5, 0.2, 0.7}}};
}

struct SyntheticTaskSpec {
  SyntheticTask task = SyntheticTask::Reach;
  std::size_t n_distractors = 2;
  std::vector<NamedColor> colors = default_palette();
  double table_spacing = 0.02;   // m between table samples
  double table_half = 0.4;       // table covers [-half, half]^2
  double table_z = -0.2;
  double block_size = 0.06;
  double block_spacing = 0.01;   // m between block surface samples
  double placement_half = 0.25;  // block centers within [-half, half]^2
  double reach_height = 0.05;    // pre-grasp offset above the block centroid
  WorkspaceBox box;
  std::uint64_t seed = 0;

  void validate() const {
    if (colors.size() < n_distractors + 1) throw std::invalid_argument("SyntheticTaskSpec: not enough colors");
    if (!(table_spacing > 0) || !(block_spacing > 0) || !(block_size > 0)) {
      throw std::invalid_argument("SyntheticTaskSpec: spacings and sizes must be > 0");
    }
    const Vec3 lo(-placement_half - block_size, -placement_half - block_size, table_z);
    const Vec3 hi(placement_half + block_size, placement_half + block_size, table_z + block_size + reach_height);
    if (!box.contains(lo) || !box.contains(hi)) throw std::invalid_argument("SyntheticTaskSpec: scene exceeds workspace");
  }
};

namespace detail {

inline void add_block_points(PointCloud& cloud, const Vec3& center, double size, double yaw_deg, double spacing,
                             const Vec3& rgb) {
  const int n = std::max(2, static_cast<int>(std::lround(size / spacing)) + 1);
  const Mat3 r = rot_z(yaw_deg);
  const double h = 0.5 * size;
  for (int axis = 0; axis < 3; ++axis) {
    for (int side : {-1, 1}) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          Vec3 local;
          const double a = -h + size * i / (n - 1), b = -h + size * j / (n - 1);
          local[axis] = side * h;
          local[(axis + 1) % 3] = a;
          local[(axis + 2) % 3] = b;
          cloud.push_back(center + r * local, rgb);
        }
      }
    }
  }
}

inline Vec3 centroid(const PointCloud& c, std::size_t begin, std::size_t end) {
  Vec3 s = Vec3::Zero();
  for (std::size_t i = begin; i < end; ++i) s += c.positions[i];
  return s / static_cast<double>(end - begin);
}

inline void append_segment(std::vector<Step>& steps, const Vec3& to, const Vec3& euler_to, std::size_t n, bool open) {
  const Step from = steps.back();
  for (std::size_t i = 1; i <= n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n);
    Step s;
    s.ee_translation = from.ee_translation + t * (to - from.ee_translation);
    s.ee_euler = from.ee_euler + t * (euler_to - from.ee_euler);
    s.gripper_open = open;
    s.timestamp = static_cast<std::int64_t>(steps.size());
    steps.push_back(s);
  }
}

inline void append_hold(std::vector<Step>& steps, std::size_t n, bool open) {
  for (std::size_t i = 0; i < n; ++i) {
    Step s = steps.back();
    s.cloud = {};
    s.gripper_open = open;
    s.timestamp = static_cast<std::int64_t>(steps.size());
    steps.push_back(s);
  }
}

}  // namespace detail

struct SyntheticScene {
  PointCloud cloud;
  std::vector<Vec3> block_centroids;  // target first
  std::vector<double> block_yaws;
  std::vector<std::string> block_colors;
};

inline SyntheticScene make_scene(const SyntheticTaskSpec& spec, std::mt19937_64& rng) {
  SyntheticScene scene;
  std::uniform_real_distribution<double> noise(-0.03, 0.03);
  const int nt = static_cast<int>(std::lround(2 * spec.table_half / spec.table_spacing)) + 1;
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < nt; ++j) {
      const Vec3 p(-spec.table_half + i * spec.table_spacing, -spec.table_half + j * spec.table_spacing, spec.table_z);
      const double g = noise(rng);
      scene.cloud.push_back(p, Vec3(0.55 + g, 0.45 + g, 0.35 + g));
    }

  const std::size_t nblocks = spec.n_distractors + 1;
  std::vector<std::size_t> order(spec.colors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::uniform_real_distribution<double> pos(-spec.placement_half, spec.placement_half);
  std::uniform_real_distribution<double> yaw(0.0, 90.0);
  const double min_gap = spec.block_size * std::sqrt(2.0) + 0.02;
  std::vector<Vec3> centers;
  for (std::size_t b = 0; b < nblocks; ++b) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const Vec3 c(pos(rng), pos(rng), spec.table_z + 0.5 * spec.block_size);
      placed = std::all_of(centers.begin(), centers.end(), [&](const Vec3& o) { return (o - c).head<2>().norm() >= min_gap; });
      if (placed) centers.push_back(c);
    }
    if (!placed) throw std::runtime_error("gen_synthetic: could not place block " + std::to_string(b) + " after 100 tries");
  }
  for (std::size_t b = 0; b < nblocks; ++b) {
    const NamedColor& col = spec.colors[order[b]];
    const double y = yaw(rng);
    const std::size_t begin = scene.cloud.size();
    detail::add_block_points(scene.cloud, centers[b], spec.block_size, y, spec.block_spacing, col.rgb);
    scene.block_centroids.push_back(detail::centroid(scene.cloud, begin, scene.cloud.size()));
    scene.block_yaws.push_back(y);
    scene.block_colors.push_back(col.name);
  }
  return scene;
}

/// Episodes of `spec.task`, deterministic in spec.seed.  Clouds are captured
/// at the first step and at every keyframe; other steps carry proprioception
/// only.
inline std::vector<Episode> gen_synthetic(const SyntheticTaskSpec& spec, std::size_t n_episodes) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<Episode> out;
  out.reserve(n_episodes);
  for (std::size_t e = 0; e < n_episodes; ++e) {
    SyntheticScene scene = make_scene(spec, rng);
    const Vec3 target = scene.block_centroids[0];
    const Vec3 above = target + Vec3(0, 0, spec.reach_height);
    const Vec3 grasp_euler(180.0, 0.0, scene.block_yaws[0]);

    Episode ep;
    ep.language = std::string(to_string(spec.task)) + " the " + scene.block_colors[0] + " block";
    Step start;
    start.ee_translation = Vec3(0.0, 0.0, spec.table_z + 0.45);
    start.ee_euler = Vec3(180.0, 0.0, 0.0);
    start.cloud = scene.cloud;
    ep.steps.push_back(start);
    detail::append_segment(ep.steps, above, grasp_euler, 4, true);
    detail::append_hold(ep.steps, 2, true);
    ep.keyframes.push_back(ep.steps.size() - 1);
    ep.actions.push_back({above, wrap_euler(grasp_euler), true, false});
    if (spec.task == SyntheticTask::Pick) {
      detail::append_segment(ep.steps, target, grasp_euler, 2, true);
      detail::append_hold(ep.steps, 1, false);
      ep.keyframes.push_back(ep.steps.size() - 1);
      ep.actions.push_back({target, wrap_euler(grasp_euler), false, false});
    }
    for (std::size_t k : ep.keyframes) ep.steps[k].cloud = scene.cloud;
    ep.validate();
    out.push_back(std::move(ep));
  }
  return out;
}

// ---------------------------------------------------------------- persistence

enum class DatasetErrorCode { Io = 1, Malformed = 2, VersionMismatch = 3, Truncated = 4, ChecksumMismatch = 5 };

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  DatasetErrorCode code() const { return code_; }

 private:
  DatasetErrorCode code_;
};

inline constexpr int kDatasetVersion = 1;

namespace detail {

class BlobWriter {
 public:
  void u64(std::uint64_t v) { put(&v, sizeof v); }
  void f64(double v) { put(&v, sizeof v); }
  void vec3(const Vec3& v) {
    for (int i = 0; i < 3; ++i) f64(v[i]);
  }
  std::vector<char>& bytes() { return bytes_; }

 private:
  void put(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  std::vector<char> bytes_;
};

class BlobReader {
 public:
  BlobReader(const char* data, std::size_t size) : data_(data), size_(size) {}
  std::uint64_t u64() {
    std::uint64_t v;
    get(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    get(&v, sizeof v);
    return v;
  }
  Vec3 vec3() {
    const double x = f64(), y = f64(), z = f64();
    return {x, y, z};
  }
  bool done() const { return pos_ == size_; }

 private:
  void get(void* p, std::size_t n) {
    if (pos_ + n > size_) throw DatasetError(DatasetErrorCode::Malformed, "episode record shorter than its contents");
    std::memcpy(p, data_ + pos_, n);
    pos_ += n;
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

inline void write_episode(BlobWriter& w, const Episode& ep) {
  w.u64(ep.steps.size());
  for (const Step& s : ep.steps) {
    w.u64(s.cloud.size());
    for (const Vec3& p : s.cloud.positions) w.vec3(p);
    for (const Vec3& c : s.cloud.colors) w.vec3(c);
    w.u64(s.gripper_open ? 1 : 0);
    w.vec3(s.ee_translation);
    w.vec3(s.ee_euler);
    w.u64(static_cast<std::uint64_t>(s.timestamp));
  }
  w.u64(ep.keyframes.size());
  for (std::size_t k : ep.keyframes) w.u64(k);
  for (const KeyframeAction& a : ep.actions) {
    w.vec3(a.translation);
    w.vec3(a.euler);
    w.u64(a.gripper_open ? 1 : 0);
    w.u64(a.collision_allowed ? 1 : 0);
  }
}

inline Episode read_episode(BlobReader& r) {
  Episode ep;
  ep.steps.resize(r.u64());
  for (Step& s : ep.steps) {
    const std::size_t n = r.u64();
    s.cloud.positions.resize(n);
    s.cloud.colors.resize(n);
    for (auto& p : s.cloud.positions) p = r.vec3();
    for (auto& c : s.cloud.colors) c = r.vec3();
    s.gripper_open = r.u64() != 0;
    s.ee_translation = r.vec3();
    s.ee_euler = r.vec3();
    s.timestamp = static_cast<std::int64_t>(r.u64());
  }
  ep.keyframes.resize(r.u64());
  for (auto& k : ep.keyframes) k = r.u64();
  ep.actions.resize(ep.keyframes.size());
  for (KeyframeAction& a : ep.actions) {
    a.translation = r.vec3();
    a.euler = r.vec3();
    a.gripper_open = r.u64() != 0;
    a.collision_allowed = r.u64() != 0;
  }
  if (!r.done()) throw DatasetError(DatasetErrorCode::Malformed, "trailing bytes after episode record");
  return ep;
}

}  // namespace detail

inline void save_dataset(const std::vector<Episode>& episodes, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  detail::BlobWriter blob;
  nlohmann::json manifest = {{"format", "rvt-dataset"},
                             {"version", kDatasetVersion},
                             {"episode_count", episodes.size()},
                             {"episodes", nlohmann::json::array()}};
  for (const Episode& ep : episodes) {
    const std::size_t begin = blob.bytes().size();
    detail::write_episode(blob, ep);
    const std::size_t len = blob.bytes().size() - begin;
    manifest["episodes"].push_back({{"language", ep.language},
                                    {"offset", begin},
                                    {"bytes", len},
                                    {"checksum", detail::hex64(fnv1a64(blob.bytes().data() + begin, len))},
                                    {"steps", ep.steps.size()},
                                    {"keyframes", ep.keyframes}});
  }
  std::ofstream bin(fs::path(dir) / "data.bin", std::ios::binary);
  bin.write(blob.bytes().data(), static_cast<std::streamsize>(blob.bytes().size()));
  std::ofstream man(fs::path(dir) / "manifest.json");
  man << manifest.dump(2) << "\n";
  if (!bin || !man) throw DatasetError(DatasetErrorCode::Io, "cannot write dataset to '" + dir + "'");
}

inline std::vector<Episode> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream man(fs::path(dir) / "manifest.json");
  if (!man) throw DatasetError(DatasetErrorCode::Io, "cannot open '" + (fs::path(dir) / "manifest.json").string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(man);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(DatasetErrorCode::Malformed, std::string("manifest: ") + e.what());
  }
  if (!manifest.contains("version") || !manifest["version"].is_number_integer()) {
    throw DatasetError(DatasetErrorCode::Malformed, "manifest has no version");
  }
  if (manifest["version"].get<int>() != kDatasetVersion) {
    throw DatasetError(DatasetErrorCode::VersionMismatch, "dataset version " + manifest["version"].dump() +
                                                              " is not supported (expected " +
                                                              std::to_string(kDatasetVersion) + ")");
  }
  std::ifstream bin(fs::path(dir) / "data.bin", std::ios::binary);
  if (!bin) throw DatasetError(DatasetErrorCode::Io, "cannot open data.bin in '" + dir + "'");
  const std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  std::vector<Episode> out;
  try {
    const auto& eps = manifest.at("episodes");
    if (eps.size() != manifest.at("episode_count").get<std::size_t>()) {
      throw DatasetError(DatasetErrorCode::Malformed, "episode_count disagrees with the episode list");
    }
    for (const auto& e : eps) {
      const auto offset = e.at("offset").get<std::size_t>();
      const auto bytes = e.at("bytes").get<std::size_t>();
      if (offset + bytes > blob.size()) {
        throw DatasetError(DatasetErrorCode::Truncated, "data.bin ends before episode at offset " + std::to_string(offset));
      }
      if (detail::hex64(fnv1a64(blob.data() + offset, bytes)) != e.at("checksum").get<std::string>()) {
        throw DatasetError(DatasetErrorCode::ChecksumMismatch, "checksum mismatch for episode at offset " + std::to_string(offset));
      }
      detail::BlobReader r(blob.data() + offset, bytes);
      Episode ep = detail::read_episode(r);
      ep.language = e.at("language").get<std::string>();
      out.push_back(std::move(ep));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DatasetError(DatasetErrorCode::Malformed, std::string("manifest: ") + ex.what());
  }
  return out;
}

}  // namespace rvt
