#pragma once

// The multi-view transformer.  Virtual views are cut into non-overlapping
// patches, fused with a gripper-state embedding and projected to tokens.
// The first `depth_local` blocks attend within each view only; language
// tokens then join and `depth_joint` blocks attend over everything.  Image
// tokens are folded back into per-view grids, decoded into full-resolution
// heatmap logits, and summarized into the global feature that drives the
// rotation / gripper / collision heads.

#include "rvt/language.hpp"
#include "rvt/nn/layers.hpp"
#include "rvt/render.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvt {

struct RVTConfig {
  std::size_t views = 5;
  std::size_t image_res = 220;
  std::size_t patch_px = 20;
  std::size_t d_model = 128;
  std::size_t heads = 4;
  std::size_t depth_local = 4;
  std::size_t depth_joint = 4;
  std::size_t rot_bins = 72;
  bool use_xyz = true;
  bool use_depth = true;
  std::size_t max_lang_tokens = 77;
  std::size_t d_lang = 64;
  std::size_t d_gripper = 32;
  std::size_t mlp_ratio = 4;
  std::size_t head_hidden = 0;  // 0 -> d_model
  std::size_t patch_hidden = 0;  // 0 -> linear patch projection, else a two-layer MLP

  std::size_t grid_side() const { return image_res / patch_px; }
  std::size_t tokens_per_view() const { return grid_side() * grid_side(); }
  std::size_t image_tokens() const { return views * tokens_per_view(); }
  std::size_t channels() const { return 3 + (use_depth ? 1 : 0) + (use_xyz ? 3 : 0); }
  std::size_t patch_features() const { return patch_px * patch_px * channels(); }
  std::size_t global_dim() const { return 2 * views * d_model; }
  std::size_t hidden() const { return head_hidden ? head_hidden : d_model; }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("RVTConfig: " + m); };
    if (views == 0) fail("views must be >= 1");
    if (patch_px == 0 || image_res == 0 || image_res % patch_px != 0) {
      fail("image_res " + std::to_string(image_res) + " is not divisible by patch_px " + std::to_string(patch_px));
    }
    if (d_model == 0 || heads == 0 || d_model % heads != 0) fail("d_model must be divisible by heads");
    if (depth_local + depth_joint != 8) fail("depth_local + depth_joint must equal 8");
    if (rot_bins * 5 != 360) fail("rot_bins must be 72 (5 degree bins)");
    if (d_lang == 0) fail("d_lang must be >= 1");
    if (mlp_ratio == 0) fail("mlp_ratio must be >= 1");
  }
};

struct GripperState {
  bool open = true;
  double time_fraction = 0.0;  // in [0, 1]
};

/// Image flat index (row * W + col) of pixel q of token t, laid out
/// token-major: entry t * patch_px^2 + q.
inline std::vector<std::size_t> patch_pixel_index(std::size_t image_res, std::size_t patch_px) {
  const std::size_t side = image_res / patch_px, pp = patch_px * patch_px;
  std::vector<std::size_t> idx(side * side * pp);
  for (std::size_t tr = 0; tr < side; ++tr)
    for (std::size_t tc = 0; tc < side; ++tc)
      for (std::size_t i = 0; i < patch_px; ++i)
        for (std::size_t j = 0; j < patch_px; ++j) {
          const std::size_t t = tr * side + tc, q = i * patch_px + j;
          idx[t * pp + q] = (tr * patch_px + i) * image_res + tc * patch_px + j;
        }
  return idx;
}

/// Inverse of patch_pixel_index: token-major position of each image pixel.
inline std::vector<std::size_t> pixel_patch_index(std::size_t image_res, std::size_t patch_px) {
  const auto fwd = patch_pixel_index(image_res, patch_px);
  std::vector<std::size_t> inv(fwd.size());
  for (std::size_t k = 0; k < fwd.size(); ++k) inv[fwd[k]] = k;
  return inv;
}

/// [P^2, patch_px^2 * C] flattened patches of the selected channels.
template <class T>
std::vector<T> patch_inputs(const ViewImage& view, const RVTConfig& cfg) {
  if (static_cast<std::size_t>(view.height) != cfg.image_res || static_cast<std::size_t>(view.width) != cfg.image_res) {
    throw std::invalid_argument("patchify: view is " + std::to_string(view.height) + "x" + std::to_string(view.width) +
                                ", config expects " + std::to_string(cfg.image_res));
  }
  const std::size_t c = cfg.channels();
  const auto idx = patch_pixel_index(cfg.image_res, cfg.patch_px);
  std::vector<T> out(idx.size() * c);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const int row = static_cast<int>(idx[k] / cfg.image_res), col = static_cast<int>(idx[k] % cfg.image_res);
    T* dst = out.data() + k * c;
    std::size_t ch = 0;
    for (int i = 0; i < 3; ++i) dst[ch++] = static_cast<T>(view.rgb.at(row, col, i));
    if (cfg.use_depth) dst[ch++] = static_cast<T>(view.depth.at(row, col));
    if (cfg.use_xyz)
      for (int i = 0; i < 3; ++i) dst[ch++] = static_cast<T>(view.xyz.at(row, col, i));
  }
  return out;
}

template <class T>
struct ModelOutput {
  std::vector<nn::Tensor<T>> heatmap_logits;  // per view [H, W]
  std::vector<nn::Tensor<T>> features;        // per view [P^2, d_model]
  nn::Tensor<T> global;                       // [1, 2 K d_model]
  nn::Tensor<T> rot_logits;                   // [3, rot_bins]
  nn::Tensor<T> gripper_logit;                // [1, 1]
  nn::Tensor<T> collision_logit;              // [1, 1]
};

/// phi/psi summary of feature grids weighted by heatmap probabilities:
/// [phi(f_1 * h_1); ...; phi(f_K * h_K); psi(f_1); ...; psi(f_K)] as [1, 2 K C].
/// Each heatmap [H, W] is sum-pooled per patch before weighting.
template <class T>
nn::Tensor<T> global_feature(const std::vector<nn::Tensor<T>>& features, const std::vector<nn::Tensor<T>>& heatmaps,
                             std::size_t patch_px) {
  if (features.size() != heatmaps.size() || features.empty()) {
    throw std::invalid_argument("global_feature: need one heatmap per feature grid");
  }
  std::vector<nn::Tensor<T>> phis, psis;
  for (std::size_t k = 0; k < features.size(); ++k) {
    const auto& h = heatmaps[k];
    if (h.rank() != 2 || h.dim(0) != h.dim(1) || h.dim(0) % patch_px != 0) {
      throw std::invalid_argument("global_feature: heatmap " + nn::shape_str(h.shape()) + " incompatible with patch size");
    }
    double s = 0.0;
    for (T x : h.data()) {
      if (x < T(0)) throw std::invalid_argument("global_feature: negative heatmap value");
      s += static_cast<double>(x);
    }
    const double tol = std::is_same_v<T, float> ? 1e-3 : 1e-6;
    if (std::abs(s - 1.0) > tol) throw std::invalid_argument("global_feature: heatmap sums to " + std::to_string(s));
    const std::size_t res = h.dim(0), side = res / patch_px, pp = patch_px * patch_px;
    if (features[k].rank() != 2 || features[k].dim(0) != side * side) {
      throw std::invalid_argument("global_feature: feature grid " + nn::shape_str(features[k].shape()) +
                                  " does not match heatmap " + nn::shape_str(h.shape()));
    }
    nn::Tensor<T> pooled = nn::sum_last(nn::gather(h, patch_pixel_index(res, patch_px), {side * side, pp}));
    phis.push_back(nn::matmul(nn::transpose(pooled), features[k]));
    psis.push_back(nn::max_rows(features[k]));
  }
  phis.insert(phis.end(), psis.begin(), psis.end());
  return nn::concat(phis, 1);
}

template <class T>
class RvtModel {
 public:
  explicit RvtModel(RVTConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const RVTConfig& config() const { return cfg_; }

  nn::Weights<T> init(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    nn::Weights<T> w;
    const std::size_t d = cfg_.d_model;
    if (cfg_.d_gripper > 0) nn::add_mlp(w, "gripper", 2, cfg_.d_gripper, cfg_.d_gripper, rng);
    if (cfg_.patch_hidden > 0) {
      nn::add_mlp(w, "patch_embed", cfg_.patch_features() + cfg_.d_gripper, cfg_.patch_hidden, d, rng);
    } else {
      nn::add_linear(w, "patch_embed", cfg_.patch_features() + cfg_.d_gripper, d, rng);
    }
    w.add("pos.image", {cfg_.image_tokens(), d}, nn::normal_init<T>(cfg_.image_tokens() * d, 0.02, rng));
    nn::add_linear(w, "lang_proj", cfg_.d_lang, d, rng);
    w.add("pos.lang", {cfg_.max_lang_tokens, d}, nn::normal_init<T>(cfg_.max_lang_tokens * d, 0.02, rng));
    for (std::size_t i = 0; i < cfg_.depth_local + cfg_.depth_joint; ++i) {
      nn::add_block(w, block_name(i), d, cfg_.mlp_ratio * d, rng);
    }
    nn::add_layer_norm(w, "final_ln", d);
    nn::add_linear(w, "heatmap", d, cfg_.patch_px * cfg_.patch_px, rng);
    nn::add_mlp(w, "head", cfg_.global_dim(), cfg_.hidden(), 3 * cfg_.rot_bins + 2, rng);
    return w;
  }

  /// Image tokens [K P^2, d_model] with positional embeddings.
  nn::Tensor<T> patchify(nn::ParamScope<T>& p, const std::vector<ViewImage>& views, const GripperState& g) const {
    if (views.size() != cfg_.views) {
      throw std::invalid_argument("forward: got " + std::to_string(views.size()) + " views, config expects " +
                                  std::to_string(cfg_.views));
    }
    std::vector<T> flat;
    flat.reserve(cfg_.image_tokens() * cfg_.patch_features());
    for (const auto& v : views) {
      const auto x = patch_inputs<T>(v, cfg_);
      flat.insert(flat.end(), x.begin(), x.end());
    }
    nn::Tensor<T> x = nn::Tensor<T>::constant({cfg_.image_tokens(), cfg_.patch_features()}, std::move(flat));
    if (cfg_.d_gripper > 0) {
      x = nn::concat<T>({x, nn::broadcast_rows(gripper_embedding(p, g), cfg_.image_tokens())}, 1);
    }
    nn::Tensor<T> tokens = cfg_.patch_hidden > 0 ? nn::apply_mlp(p, "patch_embed", x) : nn::apply_linear(p, "patch_embed", x);
    return nn::add(tokens, p("pos.image"));
  }

  /// [1, d_gripper] embedding of (open, time_fraction).
  nn::Tensor<T> gripper_embedding(nn::ParamScope<T>& p, const GripperState& g) const {
    auto in = nn::Tensor<T>::constant({1, 2}, {g.open ? T(1) : T(0), static_cast<T>(g.time_fraction)});
    return nn::apply_mlp(p, "gripper", in);
  }

  /// Projected language tokens [L, d_model]; undefined tensor when L == 0.
  nn::Tensor<T> language_tokens(nn::ParamScope<T>& p, const LanguageTokens& lang) const {
    if (lang.count == 0) return {};
    if (lang.count > cfg_.max_lang_tokens) {
      throw std::invalid_argument("language has " + std::to_string(lang.count) + " tokens, max is " +
                                  std::to_string(cfg_.max_lang_tokens));
    }
    if (lang.dim != cfg_.d_lang) {
      throw std::invalid_argument("language embedding width " + std::to_string(lang.dim) + " != d_lang " +
                                  std::to_string(cfg_.d_lang));
    }
    auto e = nn::Tensor<T>::constant({lang.count, lang.dim}, std::vector<T>(lang.embeddings.begin(), lang.embeddings.end()));
    return nn::add(nn::apply_linear(p, "lang_proj", e), nn::slice(p("pos.lang"), 0, 0, lang.count));
  }

  /// Within-view blocks: each token only sees tokens of its own view.
  nn::Tensor<T> local_stage(nn::ParamScope<T>& p, nn::Tensor<T> x) const {
    const auto mask = nn::AttentionMask::block_diagonal(std::vector<std::size_t>(cfg_.views, cfg_.tokens_per_view()));
    for (std::size_t i = 0; i < cfg_.depth_local; ++i) x = nn::apply_block(p, block_name(i), x, cfg_.heads, &mask);
    return x;
  }

  /// Joint blocks over all image tokens followed by language tokens; returns
  /// the image tokens only.
  nn::Tensor<T> joint_stage(nn::ParamScope<T>& p, const nn::Tensor<T>& image, const nn::Tensor<T>& lang) const {
    nn::Tensor<T> x = lang.defined() ? nn::concat<T>({image, lang}, 0) : image;
    for (std::size_t i = cfg_.depth_local; i < cfg_.depth_local + cfg_.depth_joint; ++i) {
      x = nn::apply_block(p, block_name(i), x, cfg_.heads, nullptr);
    }
    x = nn::slice(x, 0, 0, cfg_.image_tokens());
    return nn::apply_layer_norm(p, "final_ln", x);
  }

  /// Per-token linear to patch_px^2 logits, scattered back to [H, W].
  nn::Tensor<T> decode_heatmap(nn::ParamScope<T>& p, const nn::Tensor<T>& grid) const {
    const std::size_t res = cfg_.image_res;
    nn::Tensor<T> per_token = nn::apply_linear(p, "heatmap", grid);
    return nn::gather(per_token, pixel_patch_index(res, cfg_.patch_px), {res, res});
  }

  ModelOutput<T> forward(nn::ParamScope<T>& p, const std::vector<ViewImage>& views, const LanguageTokens& lang,
                         const GripperState& gripper) const {
    nn::Tensor<T> image = local_stage(p, patchify(p, views, gripper));
    nn::Tensor<T> tokens = joint_stage(p, image, language_tokens(p, lang));

    ModelOutput<T> out;
    const std::size_t n = cfg_.tokens_per_view(), res = cfg_.image_res;
    std::vector<nn::Tensor<T>> probs;
    for (std::size_t k = 0; k < cfg_.views; ++k) {
      out.features.push_back(nn::slice(tokens, 0, k * n, (k + 1) * n));
      out.heatmap_logits.push_back(decode_heatmap(p, out.features.back()));
      probs.push_back(nn::reshape(nn::softmax(nn::reshape(out.heatmap_logits.back(), {1, res * res})), {res, res}));
    }
    out.global = global_feature(out.features, probs, cfg_.patch_px);
    nn::Tensor<T> logits = nn::apply_mlp(p, "head", out.global);
    const std::size_t nr = 3 * cfg_.rot_bins;
    out.rot_logits = nn::reshape(nn::slice(logits, 1, 0, nr), {3, cfg_.rot_bins});
    out.gripper_logit = nn::slice(logits, 1, nr, nr + 1);
    out.collision_logit = nn::slice(logits, 1, nr + 1, nr + 2);
    return out;
  }

  static std::string block_name(std::size_t i) { return "block" + std::to_string(i); }

 private:
  RVTConfig cfg_;
};

}  // namespace rvt
