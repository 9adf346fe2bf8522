#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "dart/error.hpp"
#include "dart/mask.hpp"

namespace dart {

/// Per-layer cumulative neuron importance s_i = sum_t u_{t,i}^2 over a window.
class ImportanceAccumulator {
 public:
  ImportanceAccumulator(std::size_t num_layers, std::size_t ffn_dim, std::size_t window_len)
      : ffn_dim_(ffn_dim), window_len_(window_len), scores_(num_layers, std::vector<double>(ffn_dim, 0.0)),
        tokens_seen_(num_layers, 0) {
    if (window_len == 0) throw ConfigError("ImportanceAccumulator: window length must be >= 1");
  }

  void accumulate(std::size_t layer, std::span<const float> u) {
    detail::require_dims(u.size() == ffn_dim_, "accumulate: u length != ffn_dim");
    if (tokens_seen_.at(layer) >= window_len_) throw StateError("accumulate: window already full");
    auto& s = scores_[layer];
    for (std::size_t i = 0; i < ffn_dim_; ++i) s[i] += static_cast<double>(u[i]) * u[i];
    ++tokens_seen_[layer];
  }

  void reset() {
    for (auto& s : scores_) std::fill(s.begin(), s.end(), 0.0);
    std::fill(tokens_seen_.begin(), tokens_seen_.end(), 0);
  }

  std::span<const double> scores(std::size_t layer) const { return scores_.at(layer); }
  std::size_t tokens_seen(std::size_t layer) const { return tokens_seen_.at(layer); }
  std::size_t window_len() const { return window_len_; }
  std::size_t num_layers() const { return scores_.size(); }
  std::size_t ffn_dim() const { return ffn_dim_; }
  bool full() const {
    return std::all_of(tokens_seen_.begin(), tokens_seen_.end(), [&](std::size_t n) { return n >= window_len_; });
  }

 private:
  std::size_t ffn_dim_;
  std::size_t window_len_;
  std::vector<std::vector<double>> scores_;
  std::vector<std::size_t> tokens_seen_;
};

/// k = round-half-up(keep_ratio * m), clamped to [1, m].
inline std::size_t keep_count(double keep_ratio, std::size_t m) {
  if (m == 0) return 0;
  const double r = std::clamp(keep_ratio, 0.0, 1.0);
  // Nudge before flooring so 0.3 * 10 (= 2.9999999999999996) rounds to 3.
  auto k = static_cast<std::size_t>(std::floor(r * static_cast<double>(m) + 0.5 + 1e-9));
  return std::clamp<std::size_t>(k, 1, m);
}

/// Top-k neurons by score; ties resolved toward the lower index.
inline NeuronMask build_mask(std::span<const double> scores, double keep_ratio, std::size_t layer = 0) {
  const std::size_t m = scores.size();
  NeuronMask mask{layer, std::vector<std::uint8_t>(m, 0), 0};
  if (m == 0) return mask;
  const std::size_t k = keep_count(keep_ratio, m);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  for (std::size_t i = 0; i < k; ++i) mask.bits[order[i]] = 1;
  mask.k = k;
  return mask;
}

inline NeuronMask build_mask(std::span<const float> scores, double keep_ratio, std::size_t layer = 0) {
  std::vector<double> s(scores.begin(), scores.end());
  return build_mask(std::span<const double>(s), keep_ratio, layer);
}

/// Mask for one layer from its accumulated scores and pruning ratio p.
inline NeuronMask mask_for_layer(const ImportanceAccumulator& acc, std::size_t layer, double pruning_ratio) {
  if (acc.tokens_seen(layer) == 0) throw StateError("mask_for_layer: accumulator is empty");
  return build_mask(acc.scores(layer), 1.0 - pruning_ratio, layer);
}

}  // namespace dart
