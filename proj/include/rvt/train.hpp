#pragma once

// Behavior cloning: ground-truth targets, the mixture loss, sample
// construction with augmentation and re-rendering, and the training loop.

#include "rvt/data.hpp"
#include "rvt/decode.hpp"
#include "rvt/model.hpp"
#include "rvt/nn/optim.hpp"

#include "json.hpp"  // vendored nlohmann/json

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rvt {

// -------------------------------------------------------------------- targets

struct ViewTarget {
  Heatmap distribution;  // sums to 1 when visible, all zero otherwise
  bool visible = false;
};

/// Truncated Gaussian around the projection of p: pixels whose row and
/// column lie within floor(trunc_sigmas * sigma) of the nearest pixel.
inline ViewTarget gt_heatmap(const VirtualCamera& cam, const Vec3& p, int h, int w, double sigma_px = 1.5,
                             double trunc_sigmas = 3.0) {
  if (!(sigma_px > 0.0)) throw std::invalid_argument("gt_heatmap: sigma must be > 0");
  ViewTarget t;
  t.distribution = Heatmap(h, w, 1, 0.0);
  const Projected pr = project(cam, p, w, h);
  if (!pr.in_bounds) return t;
  t.visible = true;
  const int radius = static_cast<int>(std::floor(trunc_sigmas * sigma_px));
  const int c0 = static_cast<int>(std::floor(pr.u)), r0 = static_cast<int>(std::floor(pr.v));
  double total = 0.0;
  for (int r = std::max(0, r0 - radius); r <= std::min(h - 1, r0 + radius); ++r) {
    for (int c = std::max(0, c0 - radius); c <= std::min(w - 1, c0 + radius); ++c) {
      const double du = c + 0.5 - pr.u, dv = r + 0.5 - pr.v;
      total += (t.distribution.at(r, c) = std::exp(-(du * du + dv * dv) / (2.0 * sigma_px * sigma_px)));
    }
  }
  for (double& x : t.distribution.data) x /= total;
  return t;
}

inline std::array<std::size_t, 3> rot_to_bins(const Vec3& euler_deg, std::size_t bins = 72) {
  const double width = 360.0 / static_cast<double>(bins);
  std::array<std::size_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const auto b = static_cast<std::size_t>(std::floor(wrap_degrees(euler_deg[a]) / width));
    out[static_cast<std::size_t>(a)] = std::min(b, bins - 1);
  }
  return out;
}

struct GTTargets {
  std::vector<ViewTarget> views;
  std::array<std::size_t, 3> rot_bins{};
  bool gripper_open = true;
  bool collision_allowed = false;

  std::size_t visible_count() const {
    std::size_t n = 0;
    for (const auto& v : views) n += v.visible ? 1 : 0;
    return n;
  }
};

inline GTTargets make_targets(const ViewSet& views, const KeyframeAction& action, int res, double sigma_px = 1.5) {
  GTTargets gt;
  for (const auto& cam : views.cameras) gt.views.push_back(gt_heatmap(cam, action.translation, res, res, sigma_px));
  gt.rot_bins = rot_to_bins(action.euler);
  gt.gripper_open = action.gripper_open;
  gt.collision_allowed = action.collision_allowed;
  return gt;
}

// ----------------------------------------------------------------------- loss

struct LossWeights {
  double trans = 1.0;
  double rot = 1.0;
  double grip = 1.0;
  double coll = 1.0;
};

struct LossBreakdown {
  double trans = 0.0;
  double rot = 0.0;
  double grip = 0.0;
  double coll = 0.0;
  double total = 0.0;
};

template <class T>
struct LossResult {
  nn::Tensor<T> total;
  LossBreakdown parts;
};

/// trans: mean over visible views of the heatmap cross-entropy; rot: mean
/// cross-entropy over the three angles; grip/coll: binary cross-entropy.
template <class T>
LossResult<T> compute_loss(const ModelOutput<T>& out, const GTTargets& gt, const LossWeights& lw = {}) {
  if (gt.views.size() != out.heatmap_logits.size()) throw std::invalid_argument("loss: target/view count mismatch");
  if (gt.visible_count() == 0) throw std::invalid_argument("loss: ground truth is invisible in every view");
  std::vector<nn::Tensor<T>> per_view;
  for (std::size_t k = 0; k < gt.views.size(); ++k) {
    if (!gt.views[k].visible) continue;
    const auto& d = gt.views[k].distribution.data;
    per_view.push_back(nn::soft_cross_entropy(out.heatmap_logits[k], std::vector<T>(d.begin(), d.end())));
  }
  nn::Tensor<T> trans = per_view[0];
  for (std::size_t i = 1; i < per_view.size(); ++i) trans = nn::add(trans, per_view[i]);
  trans = nn::scale(trans, T(1) / static_cast<T>(per_view.size()));
  nn::Tensor<T> rot = nn::cross_entropy_rows(out.rot_logits, {gt.rot_bins[0], gt.rot_bins[1], gt.rot_bins[2]});
  nn::Tensor<T> grip = nn::bce_with_logits(out.gripper_logit, gt.gripper_open ? T(1) : T(0));
  nn::Tensor<T> coll = nn::bce_with_logits(out.collision_logit, gt.collision_allowed ? T(1) : T(0));

  LossResult<T> r;
  r.total = nn::add(nn::add(nn::scale(trans, static_cast<T>(lw.trans)), nn::scale(rot, static_cast<T>(lw.rot))),
                    nn::add(nn::scale(grip, static_cast<T>(lw.grip)), nn::scale(coll, static_cast<T>(lw.coll))));
  r.parts = {static_cast<double>(trans.item()), static_cast<double>(rot.item()), static_cast<double>(grip.item()),
             static_cast<double>(coll.item()), static_cast<double>(r.total.item())};
  return r;
}

// -------------------------------------------------------------------- samples

/// Language tokens per instruction string, from the stub encoder or from
/// precomputed files named <hex fnv1a64(text)>.emb in a directory.
class LanguageProvider {
 public:
  explicit LanguageProvider(std::size_t d_lang = 64, std::string embedding_dir = {})
      : stub_(d_lang), dir_(std::move(embedding_dir)) {}

  static std::string file_name(const std::string& text) {
    std::ostringstream os;
    os << std::hex << fnv1a64(text.data(), text.size()) << ".emb";
    return os.str();
  }

  LanguageTokens operator()(const std::string& text) const {
    if (dir_.empty()) return stub_.encode(text);
    return load_language_embedding((std::filesystem::path(dir_) / file_name(text)).string(), text);
  }

 private:
  StubLanguageEncoder stub_;
  std::string dir_;
};

struct SampleOptions {
  bool augment = true;
  AugmentRanges ranges;
  int splat_radius = 1;
  double sigma_px = 1.5;
  int max_retries = 10;
};

struct TrainingSample {
  std::vector<ViewImage> views;
  LanguageTokens language;
  GripperState gripper;
  GTTargets targets;
  KeyframeAction action;  // in the (augmented) world frame
};

inline GripperState observation_state(const Episode& ep, std::size_t k) {
  const std::size_t obs = ep.observation_index(k);
  const double tf = ep.steps.size() > 1 ? static_cast<double>(obs) / static_cast<double>(ep.steps.size() - 1) : 0.0;
  return {ep.steps[obs].gripper_open, tf};
}

/// Observation of keyframe action k, augmented with `seed`, cropped, and
/// re-rendered.  Redraws the augmentation when the target falls outside
/// every view.
inline TrainingSample build_sample(const Episode& ep, std::size_t k, const ViewSet& views, const WorkspaceBox& box,
                                   int res, const LanguageProvider& lang, std::uint64_t seed,
                                   const SampleOptions& opt = {}) {
  const Step& obs = ep.steps.at(ep.observation_index(k));
  const KeyframeAction& gt = ep.actions.at(k);
  TrainingSample s;
  s.language = lang(ep.language);
  s.gripper = observation_state(ep, k);
  for (int attempt = 0; attempt <= opt.max_retries; ++attempt) {
    const bool last = attempt == opt.max_retries;
    const AugmentRanges ranges = opt.augment && !last ? opt.ranges : AugmentRanges{0.0, 0.0};
    const AugmentResult a = augment(obs.cloud, gt.translation, gt.euler, splitmix64(seed + attempt), ranges);
    s.action = {a.translation, wrap_euler(a.euler), gt.gripper_open, gt.collision_allowed};
    s.targets = make_targets(views, s.action, res, opt.sigma_px);
    if (s.targets.visible_count() == 0) continue;
    s.views = render_views(crop_to_workspace(a.cloud, box), views, res, opt.splat_radius);
    return s;
  }
  throw std::invalid_argument("build_sample: target is outside every view");
}

// ---------------------------------------------------------------------- loop

struct TrainConfig {
  std::size_t steps = 100000;
  std::size_t batch = 24;
  double lr = 2.4e-4;
  std::size_t warmup = 2000;
  double weight_decay = 1e-6;
  LossWeights loss_weights;
  SampleOptions sample;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_dir;
  std::string language_dir;
};

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

inline nlohmann::json to_json(const StepLog& s) {
  return {{"step", s.step},        {"lr", s.lr},          {"trans", s.loss.trans}, {"rot", s.loss.rot},
          {"grip", s.loss.grip},   {"coll", s.loss.coll}, {"total", s.loss.total}};
}

template <class T>
struct TrainResult {
  nn::Weights<T> weights;
  std::vector<StepLog> log;
};

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Behavior cloning with LAMB.  Per-sample gradients are summed in sample
/// order, so results do not depend on the thread count.  `log_sink`, when
/// set, receives one JSON line per logged step.
template <class T>
TrainResult<T> train_loop(const RvtModel<T>& model, nn::Weights<T> weights, const std::vector<Episode>& dataset,
                          const ViewSet& views, const WorkspaceBox& box, const TrainConfig& tc,
                          std::ostream* log_sink = nullptr) {
  if (dataset.empty()) throw std::invalid_argument("train_loop: empty dataset");
  if (tc.batch == 0) throw std::invalid_argument("train_loop: batch must be >= 1");
  if (views.size() != model.config().views) {
    throw std::invalid_argument("train_loop: " + std::to_string(views.size()) + " cameras for a " +
                                std::to_string(model.config().views) + "-view model");
  }
  for (const auto& ep : dataset) ep.validate();
  const LanguageProvider lang(model.config().d_lang, tc.language_dir);
  const int res = static_cast<int>(model.config().image_res);

  TrainResult<T> result;
  std::vector<nn::Gradients<T>> grads(tc.batch);
  std::vector<LossBreakdown> losses(tc.batch);
  for (std::size_t step = 0; step < tc.steps; ++step) {
    parallel_for(tc.batch, tc.threads, [&](std::size_t b) {
      std::uint64_t s = splitmix64(tc.seed ^ splitmix64(step * 1000003ULL + b));
      const Episode& ep = dataset[s % dataset.size()];
      s = splitmix64(s);
      const std::size_t k = s % ep.actions.size();
      const TrainingSample sample = build_sample(ep, k, views, box, res, lang, splitmix64(s), tc.sample);
      nn::ParamScope<T> scope(weights);
      const ModelOutput<T> out = model.forward(scope, sample.views, sample.language, sample.gripper);
      LossResult<T> loss = compute_loss(out, sample.targets, tc.loss_weights);
      nn::backward(loss.total);
      grads[b] = scope.gradients();
      losses[b] = loss.parts;
    });

    nn::Gradients<T> mean = grads[0];
    const T inv = T(1) / static_cast<T>(tc.batch);
    for (auto& [name, g] : mean) {
      for (std::size_t b = 1; b < tc.batch; ++b) {
        const auto& gb = grads[b].at(name);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gb[i];
      }
      for (T& x : g) x *= inv;
    }
    StepLog rec;
    rec.step = step;
    rec.lr = nn::lr_at(static_cast<std::int64_t>(step), tc.lr, static_cast<std::int64_t>(tc.warmup),
                       static_cast<std::int64_t>(tc.steps));
    for (const auto& l : losses) {
      rec.loss.trans += l.trans / tc.batch;
      rec.loss.rot += l.rot / tc.batch;
      rec.loss.grip += l.grip / tc.batch;
      rec.loss.coll += l.coll / tc.batch;
      rec.loss.total += l.total / tc.batch;
    }
    nn::lamb_step(weights, mean, {rec.lr, 0.9, 0.999, 1e-6, tc.weight_decay});
    result.log.push_back(rec);
    if (log_sink && tc.log_every > 0 && step % tc.log_every == 0) *log_sink << to_json(rec).dump() << "\n" << std::flush;
    if (tc.checkpoint_every > 0 && !tc.checkpoint_dir.empty() && (step + 1) % tc.checkpoint_every == 0) {
      std::filesystem::create_directories(tc.checkpoint_dir);
      nn::save_checkpoint(weights, (std::filesystem::path(tc.checkpoint_dir) /
                                    ("step_" + std::to_string(step + 1) + ".ckpt")).string());
    }
  }
  result.weights = std::move(weights);
  return result;
}

}  // namespace rvt
