#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "dart/error.hpp"
#include "dart/linalg.hpp"
#include "dart/rng.hpp"

namespace dart {

/// Mutually orthogonal unit directions in R^dim (Gram-Schmidt on Gaussian draws).
inline std::vector<Vector> orthonormal_directions(Rng& rng, std::size_t count, std::size_t dim) {
  if (count > dim) throw ConfigError("orthonormal_directions: more directions than dimensions");
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    for (const auto& b : basis) {
      double p = 0.0;
      for (std::size_t i = 0; i < dim; ++i) p += v[i] * b[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= p * b[i];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-6) continue;
    for (auto& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  std::vector<Vector> out;
  for (const auto& b : basis) out.emplace_back(b.begin(), b.end());
  return out;
}

/// Topic regimes for the toy model. Each regime adds a fixed direction
/// (scaled by `strength`) to every token embedding, so that each regime
/// drives its own subset of FFN neurons; `noise` adds isotropic jitter.
class SyntheticWorkload {
 public:
  SyntheticWorkload(std::uint64_t seed, std::size_t dim, std::size_t regimes, std::vector<std::size_t> switch_points,
                    double strength, double noise)
      : switch_points_(std::move(switch_points)), noise_(noise), dim_(dim), noise_rng_(Rng::mix(seed, 11)) {
    if (regimes == 0) throw ConfigError("workload: at least one regime is required");
    for (std::size_t i = 1; i < switch_points_.size(); ++i)
      if (switch_points_[i] <= switch_points_[i - 1]) throw ConfigError("workload: switch points must increase");
    Rng rng(Rng::mix(seed, 10));
    for (auto& dir : orthonormal_directions(rng, regimes, dim)) biases_.push_back(scale(dir, static_cast<float>(strength)));
  }

  std::size_t regimes() const { return biases_.size(); }
  const std::vector<std::size_t>& switch_points() const { return switch_points_; }

  /// Regime active at a token position: the number of switch points passed,
  /// cycling through the regimes. A forced regime overrides the schedule.
  std::size_t regime_at(std::size_t position) const {
    if (forced_) return *forced_;
    std::size_t passed = 0;
    for (auto s : switch_points_)
      if (position >= s) ++passed;
    return passed % biases_.size();
  }

  void force_regime(std::optional<std::size_t> r) {
    if (r && *r >= biases_.size()) throw ConfigError("workload: forced regime out of range");
    forced_ = r;
  }

  const Vector& bias(std::size_t regime) const { return biases_.at(regime); }

  /// Embedding offset for the next token; consumes noise draws in order.
  Vector offset(std::size_t position) {
    Vector v = biases_[regime_at(position)];
    const double s = noise_ / std::sqrt(static_cast<double>(dim_));
    for (auto& x : v) x += static_cast<float>(noise_rng_.normal() * s);
    return v;
  }

 private:
  std::vector<Vector> biases_;
  std::vector<std::size_t> switch_points_;
  double noise_;
  std::size_t dim_;
  Rng noise_rng_;
  std::optional<std::size_t> forced_;
};

/// Gaussian vector stream around unit-norm orthogonal regime centroids,
/// standing in for last-layer attention outputs in detector benchmarks.
/// Per-coordinate noise is noise/sqrt(dim), so the noise vector has norm
/// close to `noise` (relative to the unit centroid).
class VectorStream {
 public:
  VectorStream(std::uint64_t seed, std::size_t dim, std::size_t regimes, double noise)
      : dim_(dim), noise_(noise), rng_(Rng::mix(seed, 21)) {
    Rng dir_rng(Rng::mix(seed, 20));
    centroids_ = orthonormal_directions(dir_rng, regimes, dim);
  }

  Vector next(std::size_t regime) {
    Vector v = centroids_.at(regime);
    const double s = noise_ / std::sqrt(static_cast<double>(dim_));
    for (auto& x : v) x += static_cast<float>(rng_.normal() * s);
    return v;
  }

  const Vector& centroid(std::size_t regime) const { return centroids_.at(regime); }

 private:
  std::size_t dim_;
  double noise_;
  Rng rng_;
  std::vector<Vector> centroids_;
};

}  // namespace dart
