#pragma once

// RunConfig: every knob of a run as one flat JSON document.  Unknown keys
// are rejected; missing keys keep their defaults.

#include "rvt/data.hpp"
#include "rvt/evaluate.hpp"
#include "rvt/model.hpp"
#include "rvt/render.hpp"
#include "rvt/train.hpp"

#include "json.hpp"  // vendored nlohmann/json

#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rvt {

struct RunConfig {
  RVTConfig model;
  std::string precision = "float32";

  // rendering and decoding
  ViewPreset preset = ViewPreset::Cube5;
  Projection projection = Projection::Orthographic;
  int splat_radius = 1;
  std::size_t grid_v = 100;
  Vec3 box_min = Vec3::Constant(-0.5);
  Vec3 box_max = Vec3::Constant(0.5);

  // augmentation
  bool augment = true;
  double aug_translation = 0.125;
  double aug_yaw = 45.0;

  // training
  std::size_t steps = 100000;
  std::size_t batch = 24;
  double lr = 2.4e-4;
  std::size_t warmup = 2000;
  double weight_decay = 1e-6;
  double sigma_px = 1.5;
  double w_trans = 1.0, w_rot = 1.0, w_grip = 1.0, w_coll = 1.0;
  std::size_t threads = 1;
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;
  std::uint64_t init_seed = 0;

  // synthetic data
  std::string task = "reach";
  std::size_t episodes = 100;
  std::size_t n_distractors = 2;
  std::size_t palette_size = 0;  // 0 -> full palette, else its first N colors
  std::uint64_t data_seed = 0;

  // evaluation
  double tol_trans = 0.03;
  std::size_t tol_rot_bins = 1;

  // paths
  std::string dataset;
  std::string checkpoint;
  std::string checkpoint_dir;
  std::string log_path;
  std::string language_dir;
  std::string output_dir = "out";

  /// Visits every (key, member) pair; shared by reading and writing.
  template <class Self, class F>
  static void fields(Self& c, F&& f) {
    f("views", c.model.views);
    f("image_res", c.model.image_res);
    f("patch_px", c.model.patch_px);
    f("d_model", c.model.d_model);
    f("heads", c.model.heads);
    f("depth_local", c.model.depth_local);
    f("depth_joint", c.model.depth_joint);
    f("rot_bins", c.model.rot_bins);
    f("use_xyz", c.model.use_xyz);
    f("use_depth", c.model.use_depth);
    f("max_lang_tokens", c.model.max_lang_tokens);
    f("d_lang", c.model.d_lang);
    f("d_gripper", c.model.d_gripper);
    f("mlp_ratio", c.model.mlp_ratio);
    f("head_hidden", c.model.head_hidden);
    f("patch_hidden", c.model.patch_hidden);
    f("precision", c.precision);
    f("preset", c.preset);
    f("projection", c.projection);
    f("splat_radius", c.splat_radius);
    f("grid_v", c.grid_v);
    f("box_min", c.box_min);
    f("box_max", c.box_max);
    f("augment", c.augment);
    f("aug_translation", c.aug_translation);
    f("aug_yaw", c.aug_yaw);
    f("steps", c.steps);
    f("batch", c.batch);
    f("lr", c.lr);
    f("warmup", c.warmup);
    f("weight_decay", c.weight_decay);
    f("sigma_px", c.sigma_px);
    f("w_trans", c.w_trans);
    f("w_rot", c.w_rot);
    f("w_grip", c.w_grip);
    f("w_coll", c.w_coll);
    f("threads", c.threads);
    f("log_every", c.log_every);
    f("checkpoint_every", c.checkpoint_every);
    f("seed", c.seed);
    f("init_seed", c.init_seed);
    f("task", c.task);
    f("episodes", c.episodes);
    f("n_distractors", c.n_distractors);
    f("palette_size", c.palette_size);
    f("data_seed", c.data_seed);
    f("tol_trans", c.tol_trans);
    f("tol_rot_bins", c.tol_rot_bins);
    f("dataset", c.dataset);
    f("checkpoint", c.checkpoint);
    f("checkpoint_dir", c.checkpoint_dir);
    f("log_path", c.log_path);
    f("language_dir", c.language_dir);
    f("output_dir", c.output_dir);
  }

  WorkspaceBox box() const { return {box_min, box_max}; }

  ViewSet make_views() const { return cube_views(box(), preset, projection); }

  TranslationGrid grid() const { return {box(), grid_v}; }

  SampleOptions sample_options() const {
    SampleOptions s;
    s.augment = augment;
    s.ranges = {aug_translation, aug_yaw};
    s.splat_radius = splat_radius;
    s.sigma_px = sigma_px;
    return s;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.steps = steps;
    t.batch = batch;
    t.lr = lr;
    t.warmup = warmup;
    t.weight_decay = weight_decay;
    t.loss_weights = {w_trans, w_rot, w_grip, w_coll};
    t.sample = sample_options();
    t.seed = seed;
    t.threads = threads;
    t.log_every = log_every;
    t.checkpoint_every = checkpoint_every;
    t.checkpoint_dir = checkpoint_dir;
    t.language_dir = language_dir;
    return t;
  }

  SyntheticTaskSpec task_spec() const {
    SyntheticTaskSpec s;
    s.task = synthetic_task_from_string(task);
    s.n_distractors = n_distractors;
    if (palette_size > 0 && palette_size < s.colors.size()) s.colors.resize(palette_size);
    s.box = box();
    s.seed = data_seed;
    return s;
  }

  EvalOptions eval_options() const { return {tol_trans, tol_rot_bins, model.rot_bins}; }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
    model.validate();
    if (preset == ViewPreset::Custom) fail("preset 'custom' cannot be expressed in a config file");
    if (!(box_min.array() < box_max.array()).all()) fail("box_min must be < box_max componentwise");
    const std::size_t cams = make_views().size();
    if (cams != model.views) {
      fail("preset '" + std::string(to_string(preset)) + "' has " + std::to_string(cams) + " cameras but views = " +
           std::to_string(model.views));
    }
    if (precision != "float32" && precision != "float64") fail("precision must be float32 or float64");
    if (splat_radius < 0) fail("splat_radius must be >= 0");
    if (grid_v < 2) fail("grid_v must be >= 2");
    if (aug_translation < 0 || aug_yaw < 0) fail("augmentation ranges must be >= 0");
    if (batch == 0) fail("batch must be >= 1");
    if (!(lr >= 0)) fail("lr must be >= 0");
    if (!(sigma_px > 0)) fail("sigma_px must be > 0");
    if (tol_trans < 0) fail("tol_trans must be >= 0");
    synthetic_task_from_string(task);
    task_spec().validate();
  }
};

namespace detail {

inline nlohmann::json encode_field(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
inline nlohmann::json encode_field(ViewPreset p) { return to_string(p); }
inline nlohmann::json encode_field(Projection p) { return to_string(p); }
template <class V>
nlohmann::json encode_field(const V& v) {
  return v;
}

inline Projection projection_from_string(const std::string& s) {
  if (s == "orthographic") return Projection::Orthographic;
  if (s == "perspective") return Projection::Perspective;
  throw std::invalid_argument("unknown projection '" + s + "'");
}

inline void decode_field(const nlohmann::json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected an array of 3 numbers");
  v = Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}
inline void decode_field(const nlohmann::json& j, ViewPreset& p) { p = view_preset_from_string(j.get<std::string>()); }
inline void decode_field(const nlohmann::json& j, Projection& p) { p = projection_from_string(j.get<std::string>()); }
inline void decode_field(const nlohmann::json& j, bool& b) {
  if (!j.is_boolean()) throw std::invalid_argument("expected true or false");
  b = j.get<bool>();
}
template <class V>
void decode_field(const nlohmann::json& j, V& v) {
  if constexpr (std::is_unsigned_v<V>) {
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
      throw std::invalid_argument("expected a non-negative integer");
    }
  } else if constexpr (std::is_integral_v<V>) {
    if (!j.is_number_integer()) throw std::invalid_argument("expected an integer");
  } else if constexpr (std::is_floating_point_v<V>) {
    if (!j.is_number()) throw std::invalid_argument("expected a number");
  } else {
    if (!j.is_string()) throw std::invalid_argument("expected a string");
  }
  v = j.get<V>();
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  RunConfig::fields(c, [&](const char* key, const auto& v) { j[key] = detail::encode_field(v); });
  return j;
}

/// Missing keys keep defaults; unknown keys and type errors are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  std::set<std::string> known;
  RunConfig::fields(base, [&](const char* key, auto&) { known.insert(key); });
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  RunConfig::fields(base, [&](const char* key, auto& v) {
    if (!j.contains(key)) return;
    try {
      detail::decode_field(j.at(key), v);
    } catch (const std::exception& e) {
      throw std::invalid_argument(std::string("config: key '") + key + "': " + e.what());
    }
  });
  base.validate();
  return base;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config '" + path + "': " + e.what());
  }
  return run_config_from_json(j);
}

inline void save_run_config(const RunConfig& c, const std::string& path) {
  std::ofstream os(path);
  os << to_json(c).dump(2) << "\n";
  if (!os) throw std::runtime_error("cannot write config '" + path + "'");
}

struct AblationRow {
  std::string name;
  nlohmann::json overrides;  // applied on top of the default RunConfig
};

/// The rendering/architecture ablation grid, one row per variant.  The
/// first row is the default configuration.
inline std::vector<AblationRow> ablation_rows() {
  using nlohmann::json;
  return {
      {"default", json::object()},
      {"res_100", {{"image_res", 100}}},
      {"no_view_corr", {{"use_xyz", false}}},
      {"no_depth", {{"use_depth", false}}},
      {"no_sep_proc", {{"depth_local", 0}, {"depth_joint", 8}}},
      {"perspective", {{"projection", "perspective"}}},
      {"no_rot_aug", {{"aug_yaw", 0.0}}},
      {"cube_3", {{"preset", "cube3"}, {"views", 3}}},
      {"front_1", {{"preset", "front1"}, {"views", 1}}},
      {"rot_15", {{"preset", "cube5_rot15"}}},
      {"real_4_perspective", {{"preset", "real4"}, {"views", 4}, {"projection", "perspective"}, {"aug_yaw", 0.0}}},
      {"real_4_orthographic", {{"preset", "real4"}, {"views", 4}, {"aug_yaw", 0.0}}},
  };
}

}  // namespace rvt
