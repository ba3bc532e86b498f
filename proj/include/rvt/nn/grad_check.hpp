#pragma once

// Central-difference verification of reverse-mode gradients (64-bit only).

#include "rvt/nn/weights.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace rvt::nn {

struct GradCheckOptions {
  double h = 1e-5;
  std::size_t max_coords = 400;  // all coordinates are checked below this count
  std::uint64_t seed = 0;
  double zero_floor = 1e-9;      // |a|, |n| both below this count as agreeing
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using LossFn = std::function<Tensor<double>(ParamScope<double>&)>;

inline double relative_error(double a, double n, double floor) {
  const double denom = std::max(std::abs(a), std::abs(n));
  return denom < floor ? 0.0 : std::abs(a - n) / denom;
}

inline GradCheckResult grad_check(const LossFn& fn, Weights<double> weights, const GradCheckOptions& opt = {}) {
  Gradients<double> analytic;
  {
    ParamScope<double> scope(weights);
    Tensor<double> loss = fn(scope);
    backward(loss);
    analytic = scope.gradients();
  }

  std::vector<std::pair<std::string, std::size_t>> coords;
  for (const auto& [name, p] : weights.params)
    for (std::size_t i = 0; i < p.value.size(); ++i) coords.emplace_back(name, i);
  if (coords.size() > opt.max_coords) {
    // keep one coordinate of every tensor, fill the rest uniformly at random
    std::mt19937_64 rng(opt.seed);
    std::vector<std::pair<std::string, std::size_t>> picked;
    for (const auto& [name, p] : weights.params) {
      picked.emplace_back(name, std::uniform_int_distribution<std::size_t>(0, p.value.size() - 1)(rng));
    }
    std::shuffle(coords.begin(), coords.end(), rng);
    for (std::size_t i = 0; picked.size() < opt.max_coords && i < coords.size(); ++i) {
      picked.push_back(coords[i]);
    }
    coords = std::move(picked);
  }

  auto eval = [&]() {
    ParamScope<double> scope(weights, false);
    return fn(scope).item();
  };

  GradCheckResult res;
  for (const auto& [name, i] : coords) {
    double& x = weights.params.at(name).value[i];
    const double saved = x;
    x = saved + opt.h;
    const double fp = eval();
    x = saved - opt.h;
    const double fm = eval();
    x = saved;
    const double numeric = (fp - fm) / (2.0 * opt.h);
    const double a = analytic.at(name)[i];
    const double err = relative_error(a, numeric, opt.zero_floor);
    ++res.coords_checked;
    if (err >= res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_param = name;
      res.worst_analytic = a;
      res.worst_numeric = numeric;
    }
  }
  return res;
}

}  // namespace rvt::nn
