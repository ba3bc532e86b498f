#pragma once

#include "rvt/nn/weights.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace rvt::nn {

struct LambOptions {
  double lr = 2.4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.0;
};

/// One LAMB update over every parameter.  Each parameter's step is
/// independent of the others, so iteration order never matters.
template <class T>
void lamb_step(Weights<T>& w, const Gradients<T>& grads, const LambOptions& opt) {
  const std::int64_t t = w.step + 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  std::vector<double> r;
  for (auto& [name, p] : w.params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("lamb_step: no gradient for '" + name + "'");
    const std::vector<T>& g = it->second;
    if (g.size() != p.value.size()) throw std::invalid_argument("lamb_step: gradient size mismatch for '" + name + "'");

    r.assign(g.size(), 0.0);
    double w_norm = 0.0, r_norm = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      const double m = opt.beta1 * p.m[i] + (1.0 - opt.beta1) * gi;
      const double v = opt.beta2 * p.v[i] + (1.0 - opt.beta2) * gi * gi;
      p.m[i] = static_cast<T>(m);
      p.v[i] = static_cast<T>(v);
      const double wi = p.value[i];
      r[i] = (m / bc1) / (std::sqrt(v / bc2) + opt.eps) + opt.weight_decay * wi;
      w_norm += wi * wi;
      r_norm += r[i] * r[i];
    }
    w_norm = std::sqrt(w_norm);
    r_norm = std::sqrt(r_norm);
    const double ratio = (w_norm > 0.0 && r_norm > 0.0) ? w_norm / r_norm : 1.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - opt.lr * ratio * r[i]);
    }
  }
  w.step = t;
}

/// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at total_steps.
inline double lr_at(std::int64_t step, double base_lr, std::int64_t warmup_steps, std::int64_t total_steps) {
  if (step < 0 || step > total_steps) {
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return base_lr;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace rvt::nn
