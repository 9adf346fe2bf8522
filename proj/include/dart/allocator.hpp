#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dart/error.hpp"
#include "dart/linalg.hpp"

namespace dart {

struct AllocatorParams {
  double sparsity = 0.5;  // global target rho
  double p_min = 0.0;
  double p_max = 0.95;
  double alpha_e = 0.25;
  double alpha_l = 0.35;
  double beta_e = 0.3;
  double beta_l = 0.15;
  std::size_t max_iters = 0;  // 0 = L + 2

  void validate() const {
    if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw ConfigError("allocator: sparsity must be in [0, 1]");
    if (!(p_min >= 0.0 && p_min < p_max && p_max <= 1.0)) throw ConfigError("allocator: need 0 <= p_min < p_max <= 1");
    if (!(alpha_e > 0.0 && alpha_e < 1.0 && alpha_l > 0.0 && alpha_l < 1.0))
      throw ConfigError("allocator: alpha_e and alpha_l must be in (0, 1)");
    if (!(beta_e > 0.0 && beta_l > 0.0 && beta_e + beta_l <= 1.0))
      throw ConfigError("allocator: need beta_e, beta_l > 0 and beta_e + beta_l <= 1");
  }
};

struct SensitivityResult {
  double value = 0.0;
  bool degenerate = false;  // ||y|| == 0
};

/// How strongly an FFN block rotates and displaces the residual stream:
/// (1 - cos(y, z)) * ||z - y|| / ||y||.
inline SensitivityResult sensitivity_checked(std::span<const float> y, std::span<const float> z) {
  detail::require_dims(y.size() == z.size(), "sensitivity: y and z differ in length");
  const double ny = norm(y);
  if (ny == 0.0) return {0.0, true};
  const double c = cosine(y, z);
  double disp = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(z[i]) - y[i];
    disp += d * d;
  }
  return {std::max(0.0, 1.0 - c) * std::sqrt(disp) / ny, false};
}

inline double sensitivity(std::span<const float> y, std::span<const float> z) { return sensitivity_checked(y, z).value; }

inline double mean_sensitivity(std::span<const double> window) {
  if (window.empty()) throw StateError("mean_sensitivity: empty window");
  return std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
}

struct ImportanceResult {
  std::vector<double> importance;
  bool uniform_fallback = false;  // every S-bar was zero
};

/// I_l = 1 - S_l / sum(S); uniform 1 - 1/L when all sensitivities vanish.
inline ImportanceResult relative_importance(std::span<const double> mean_sens) {
  const std::size_t L = mean_sens.size();
  if (L == 0) throw DimensionError("relative_importance: no layers");
  const double total = std::accumulate(mean_sens.begin(), mean_sens.end(), 0.0);
  ImportanceResult r;
  if (!(total > 0.0)) {
    r.importance.assign(L, 1.0 - 1.0 / static_cast<double>(L));
    r.uniform_fallback = true;
    return r;
  }
  r.importance.reserve(L);
  for (double s : mean_sens) r.importance.push_back(1.0 - s / total);
  return r;
}

/// Piecewise-linear attenuation near the first and last layers.
inline double depth_factor_at(double depth, const AllocatorParams& p) {
  const double early = p.alpha_e + (1.0 - p.alpha_e) * depth / p.beta_e;
  const double late = p.alpha_l + (1.0 - p.alpha_l) * (1.0 - depth) / p.beta_l;
  return std::min({1.0, early, late});
}

inline double depth_factor(std::size_t layer, std::size_t num_layers, const AllocatorParams& p) {
  if (num_layers < 2) return 1.0;
  return depth_factor_at(static_cast<double>(layer) / static_cast<double>(num_layers - 1), p);
}

struct Allocation {
  std::vector<double> ratios;
  std::size_t iterations = 0;
  double residual = 0.0;
};

/// Iterative redistribution of the budget rho*L over layers in proportion to
/// weight = I*D, clamped to [p_min, p_max]. Layers start at p_min; layers that
/// hit p_max leave the active set and the leftover flows to the rest.
inline Allocation allocate(std::span<const double> importance, std::span<const double> depth,
                           const AllocatorParams& params) {
  detail::require_dims(importance.size() == depth.size(), "allocate: importance and depth differ in length");
  params.validate();
  const std::size_t L = importance.size();
  constexpr double kTol = 1e-9;
  Allocation out;
  // every layer starts at the floor; only the excess is redistributed
  out.ratios.assign(L, params.p_min);
  if (L == 0) return out;

  std::vector<double> weight(L);
  for (std::size_t l = 0; l < L; ++l) weight[l] = std::max(0.0, importance[l] * depth[l]);

  std::vector<std::size_t> active(L);
  std::iota(active.begin(), active.end(), std::size_t{0});
  double budget = (params.sparsity - params.p_min) * static_cast<double>(L);
  if (budget < -1e-6)
    throw InfeasibleBudget("allocate: sparsity " + std::to_string(params.sparsity) + " is below p_min " +
                           std::to_string(params.p_min));
  const std::size_t cap = params.max_iters ? params.max_iters : L + 2;
  auto& p = out.ratios;

  while (out.iterations < cap && !active.empty() && budget > kTol) {
    double total = 0.0;
    for (auto j : active) total += weight[j];
    double moved = 0.0;
    for (auto j : active) {
      const double share = total > 0.0 ? weight[j] / total : 1.0 / static_cast<double>(active.size());
      const double next = std::clamp(p[j] + budget * share, params.p_min, params.p_max);
      moved += next - p[j];
      p[j] = next;
    }
    budget -= moved;
    std::erase_if(active, [&](std::size_t j) { return !(p[j] > params.p_min && p[j] < params.p_max); });
    ++out.iterations;
  }
  out.residual = budget;
  if (std::abs(budget) > 1e-6 && active.empty())
    throw InfeasibleBudget("allocate: budget " + std::to_string(params.sparsity * static_cast<double>(L)) +
                           " cannot be placed within [p_min, p_max] (residual " + std::to_string(budget) + ")");
  return out;
}

/// Per-layer budget summary for one mask build.
struct LayerBudget {
  std::vector<double> mean_sensitivity;
  std::vector<double> importance;
  std::vector<double> depth;
  std::vector<double> ratios;
  bool uniform_fallback = false;
};

inline LayerBudget plan_budget(std::span<const double> mean_sens, const AllocatorParams& params) {
  LayerBudget b;
  b.mean_sensitivity.assign(mean_sens.begin(), mean_sens.end());
  auto imp = relative_importance(mean_sens);
  b.importance = std::move(imp.importance);
  b.uniform_fallback = imp.uniform_fallback;
  const std::size_t L = mean_sens.size();
  for (std::size_t l = 0; l < L; ++l) b.depth.push_back(depth_factor(l, L, params));
  b.ratios = allocate(b.importance, b.depth, params).ratios;
  return b;
}

}  // namespace dart
