#pragma once

// Keyframe-level evaluation of predicted actions against demonstrations.

#include "rvt/data.hpp"
#include "rvt/decode.hpp"
#include "rvt/model.hpp"
#include "rvt/train.hpp"

#include <cstdlib>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace rvt {

struct EvalOptions {
  double tol_trans = 0.03;   // m
  std::size_t tol_rot_bins = 1;
  std::size_t rot_bins = 72;
};

struct EvalMetrics {
  std::size_t keyframes = 0;
  std::size_t episodes = 0;
  double translation = 0.0;  // success rates in [0, 1]
  double rotation = 0.0;
  double gripper = 0.0;
  double collision = 0.0;
  double keyframe = 0.0;     // all four criteria
  double episode = 0.0;      // every keyframe of the episode
  double mean_trans_error = 0.0;
};

inline std::size_t circular_bin_distance(std::size_t a, std::size_t b, std::size_t bins) {
  const std::size_t d = a > b ? a - b : b - a;
  return std::min(d, bins - d);
}

/// predictions[e][k] is the predicted action for keyframe k of episode e.
inline EvalMetrics score_predictions(const std::vector<std::vector<ActionPrediction>>& predictions,
                                     const std::vector<Episode>& episodes, const EvalOptions& opt = {}) {
  if (predictions.size() != episodes.size()) throw std::invalid_argument("evaluate: one prediction list per episode");
  EvalMetrics m;
  m.episodes = episodes.size();
  std::size_t ok_t = 0, ok_r = 0, ok_g = 0, ok_c = 0, ok_k = 0, ok_e = 0;
  double err_sum = 0.0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& acts = episodes[e].actions;
    if (predictions[e].size() != acts.size()) throw std::invalid_argument("evaluate: one prediction per keyframe");
    bool all = true;
    for (std::size_t k = 0; k < acts.size(); ++k) {
      const ActionPrediction& p = predictions[e][k];
      const KeyframeAction& g = acts[k];
      const double err = (p.translation - g.translation).norm();
      const bool t = err <= opt.tol_trans;
      const auto pb = rot_to_bins(p.euler, opt.rot_bins), gb = rot_to_bins(g.euler, opt.rot_bins);
      bool r = true;
      for (std::size_t a = 0; a < 3; ++a) r = r && circular_bin_distance(pb[a], gb[a], opt.rot_bins) <= opt.tol_rot_bins;
      const bool gr = p.gripper_open == g.gripper_open;
      const bool co = p.collision_allowed == g.collision_allowed;
      ok_t += t;
      ok_r += r;
      ok_g += gr;
      ok_c += co;
      ok_k += t && r && gr && co;
      all = all && t && r && gr && co;
      err_sum += err;
      ++m.keyframes;
    }
    ok_e += all;
  }
  if (m.keyframes > 0) {
    const double n = static_cast<double>(m.keyframes);
    m.translation = ok_t / n;
    m.rotation = ok_r / n;
    m.gripper = ok_g / n;
    m.collision = ok_c / n;
    m.keyframe = ok_k / n;
    m.mean_trans_error = err_sum / n;
  }
  if (m.episodes > 0) m.episode = static_cast<double>(ok_e) / static_cast<double>(m.episodes);
  return m;
}

/// Ground-truth actions in prediction form; scores 100% on every criterion.
inline std::vector<std::vector<ActionPrediction>> oracle_predictions(const std::vector<Episode>& episodes) {
  std::vector<std::vector<ActionPrediction>> out;
  for (const auto& ep : episodes) {
    auto& row = out.emplace_back();
    for (const auto& a : ep.actions) row.push_back({a.translation, a.euler, a.gripper_open, a.collision_allowed, 1.0});
  }
  return out;
}

/// Model predictions on unaugmented observations.
template <class T>
std::vector<std::vector<ActionPrediction>> predict_episodes(const RvtModel<T>& model, const nn::Weights<T>& weights,
                                                            const std::vector<Episode>& episodes, const ViewSet& views,
                                                            const WorkspaceBox& box, const TranslationGrid& grid,
                                                            const LanguageProvider& lang, int splat_radius = 1,
                                                            std::size_t threads = 1) {
  std::vector<std::vector<ActionPrediction>> out(episodes.size());
  const int res = static_cast<int>(model.config().image_res);
  parallel_for(episodes.size(), threads, [&](std::size_t e) {
    const Episode& ep = episodes[e];
    for (std::size_t k = 0; k < ep.actions.size(); ++k) {
      const Step& obs = ep.steps.at(ep.observation_index(k));
      const auto rendered = render_views(crop_to_workspace(obs.cloud, box), views, res, splat_radius);
      nn::ParamScope<T> scope(weights, false);
      const ModelOutput<T> mo = model.forward(scope, rendered, lang(ep.language), observation_state(ep, k));
      out[e].push_back(assemble_action(mo, views, grid));
    }
  });
  return out;
}

inline void write_metrics_tsv(const EvalMetrics& m, std::ostream& os) {
  os << "metric\tvalue\n"
     << "episodes\t" << m.episodes << "\n"
     << "keyframes\t" << m.keyframes << "\n";
  auto pct = [&](const char* name, double v) { os << name << "\t" << std::fixed << std::setprecision(1) << 100.0 * v << "\n"; };
  pct("translation", m.translation);
  pct("rotation", m.rotation);
  pct("gripper", m.gripper);
  pct("collision", m.collision);
  pct("keyframe", m.keyframe);
  pct("overall", m.episode);
  os << "mean_trans_error_m\t" << std::setprecision(4) << m.mean_trans_error << "\n";
}

}  // namespace rvt
