#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dart/error.hpp"
#include "dart/linalg.hpp"

namespace dart {

inline Vector centroid(std::span<const Vector> vectors) {
  if (vectors.empty()) throw StateError("centroid: empty list");
  const std::size_t d = vectors.front().size();
  std::vector<double> acc(d, 0.0);
  for (const auto& v : vectors) {
    detail::require_dims(v.size() == d, "centroid: vectors differ in length");
    for (std::size_t i = 0; i < d; ++i) acc[i] += v[i];
  }
  Vector out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(vectors.size()));
  return out;
}

/// Cosine between a window centroid and the reference centroid.
inline double alignment(std::span<const float> window_centroid, std::span<const float> ref_centroid) {
  return cosine(window_centroid, ref_centroid);
}

struct ReferenceStats {
  Vector centroid;
  double mu = 0.0;
  double sigma = 0.0;
  std::vector<double> window_alignments;
};

/// Baseline for drift detection from T = K*tau reference vectors: the
/// reference centroid plus mean and deviation (divisor K) of the alignments
/// of its K consecutive windows.
inline ReferenceStats reference_stats(std::span<const Vector> ref, std::size_t tau) {
  if (tau == 0) throw ConfigError("reference_stats: tau must be >= 1");
  if (ref.size() % tau != 0) throw ConfigError("reference_stats: T must be a multiple of tau");
  const std::size_t K = ref.size() / tau;
  if (K < 2) throw ConfigError("reference_stats: need at least two windows (K >= 2)");
  ReferenceStats st;
  st.centroid = centroid(ref);
  st.window_alignments.reserve(K);
  for (std::size_t w = 0; w < K; ++w) {
    const Vector c = centroid(ref.subspan(w * tau, tau));
    st.window_alignments.push_back(alignment(c, st.centroid));
  }
  double sum = 0.0;
  for (double a : st.window_alignments) sum += a;
  st.mu = sum / static_cast<double>(K);
  double var = 0.0;
  for (double a : st.window_alignments) var += (a - st.mu) * (a - st.mu);
  st.sigma = std::sqrt(var / static_cast<double>(K));
  return st;
}

/// a - mu <= -delta * sigma; with sigma == 0 a strict drop a < mu is required.
inline bool drift_check(double a, double mu, double sigma, double delta) {
  if (sigma <= 0.0) return a < mu;
  return a - mu <= -delta * sigma;
}

inline std::size_t update_counter(std::size_t c, bool triggered) { return triggered ? c + 1 : (c > 0 ? c - 1 : 0); }

struct DriftParams {
  std::size_t window = 10;       // tau
  std::size_t ref_windows = 8;   // K, so T = K * tau
  double delta = 0.5;
  std::size_t counter_threshold = 3;  // c_0

  std::size_t reference_length() const { return window * ref_windows; }

  void validate() const {
    if (window == 0) throw ConfigError("drift: window (tau) must be >= 1");
    if (ref_windows < 2) throw ConfigError("drift: ref_windows (K) must be >= 2");
    if (!(delta >= 0.0)) throw ConfigError("drift: delta must be >= 0");
    if (counter_threshold == 0) throw ConfigError("drift: counter threshold c0 must be >= 1");
  }
};

/// Outcome of one detector step. Window fields are set only on the token
/// that completes a window.
struct DriftStep {
  bool window_complete = false;
  double alignment = 0.0;
  bool triggered = false;
  std::size_t counter = 0;
  bool reprune_requested = false;
};

/// Online knowledge-drift detector over the last layer's attention output.
class DriftDetector {
 public:
  explicit DriftDetector(DriftParams params) : params_(params) { params_.validate(); }

  /// (Re)set the baseline from T reference vectors; clears counter and buffer.
  void set_reference(std::span<const Vector> ref) {
    if (ref.size() != params_.reference_length())
      throw ConfigError("DriftDetector: reference must hold exactly K * tau vectors");
    ref_ = reference_stats(ref, params_.window);
    counter_ = 0;
    buffer_.clear();
  }

  void set_reference(ReferenceStats stats) {
    ref_ = std::move(stats);
    counter_ = 0;
    buffer_.clear();
  }

  DriftStep step(std::span<const float> attention_output) {
    if (!ref_) throw StateError("DriftDetector::step: reference statistics not initialized");
    detail::require_dims(attention_output.size() == ref_->centroid.size(), "DriftDetector::step: dimension mismatch");
    buffer_.emplace_back(attention_output.begin(), attention_output.end());
    DriftStep out;
    out.counter = counter_;
    if (buffer_.size() < params_.window) return out;

    out.window_complete = true;
    out.alignment = alignment(centroid(buffer_), ref_->centroid);
    out.triggered = drift_check(out.alignment, ref_->mu, ref_->sigma, params_.delta);
    counter_ = update_counter(counter_, out.triggered);
    if (counter_ >= params_.counter_threshold) {
      out.reprune_requested = true;
      counter_ = 0;
    }
    out.counter = counter_;
    last_window_ = std::move(buffer_);
    buffer_.clear();
    return out;
  }

  bool initialized() const { return ref_.has_value(); }
  const ReferenceStats& reference() const {
    if (!ref_) throw StateError("DriftDetector: reference statistics not initialized");
    return *ref_;
  }
  std::size_t counter() const { return counter_; }
  const DriftParams& params() const { return params_; }
  /// Attention vectors of the most recently completed window.
  const std::vector<Vector>& last_window() const { return last_window_; }

 private:
  DriftParams params_;
  std::optional<ReferenceStats> ref_;
  std::size_t counter_ = 0;
  std::vector<Vector> buffer_;
  std::vector<Vector> last_window_;
};

}  // namespace dart
