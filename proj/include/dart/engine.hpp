#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dart/allocator.hpp"
#include "dart/model.hpp"
#include "dart/pruner.hpp"
#include "dart/tracer.hpp"

namespace dart {

struct DartParams {
  AllocatorParams alloc;
  DriftParams drift;
  /// When false, masks are built once from the prefix and never rebuilt.
  bool tracing = true;

  void validate() const {
    alloc.validate();
    drift.validate();
  }
};

enum class Phase { collect, decode };

inline const char* phase_name(Phase p) { return p == Phase::collect ? "collect" : "decode"; }

/// One mask (re)construction.
struct MaskBuild {
  std::size_t position = 0;  // masks apply from this token position on
  bool initial = true;       // false for reprune events
  bool partial = false;      // fewer than T tokens were available
  std::size_t tokens_used = 0;
  LayerBudget budget;
  MaskSet masks;
  double mu = 0.0;
  double sigma = 0.0;
};

/// Everything observed while processing one token.
struct TokenStep {
  std::size_t position = 0;
  std::uint32_t token = 0;
  Phase phase = Phase::collect;
  std::vector<double> sensitivity;  // per layer
  std::optional<double> alignment;  // set on window-completing decode tokens
  bool triggered = false;
  std::size_t counter = 0;
  bool event = false;               // reprune requested on this token
  std::vector<double> density;      // active mask density per layer
  double mu = 0.0;
  double sigma = 0.0;
  std::optional<MaskBuild> build;   // masks rebuilt after this token
  Vector logits;
};

/// Streaming DART driver for one generation stream: dense statistics
/// collection over T tokens, budgeted mask construction, masked decoding
/// with drift tracing, and reprune on detector events.
class DartEngine {
 public:
  DartEngine(const ModelWeights& weights, DartParams params)
      : w_(weights), params_(params), cache_(weights.config), detector_(params.drift),
        acc_(weights.config.num_layers, weights.config.ffn_dim, params.drift.reference_length()) {
    params_.validate();
    w_.config.validate();
    start_collection();
  }

  /// Run one token through the model. `embed_offset` may be empty.
  TokenStep feed(std::uint32_t token, std::span<const float> embed_offset = {}) {
    const auto& cfg = w_.config;
    TokenStep st;
    st.position = position_;
    st.token = token;
    st.phase = phase_;

    ForwardOptions opts;
    opts.embed_offset = embed_offset;
    auto res = forward_token(w_, token, cache_, phase_ == Phase::decode ? masks_ : MaskSet{}, opts);

    st.sensitivity.resize(cfg.num_layers);
    for (std::size_t l = 0; l < cfg.num_layers; ++l)
      st.sensitivity[l] = sensitivity(res.trace.layers[l].y, res.trace.layers[l].z);
    st.density = densities();

    if (phase_ == Phase::collect) {
      record_collected(res.trace, st.sensitivity, nullptr);
      if (collected_.size() == params_.drift.reference_length()) st.build = rebuild(position_ + 1, false);
    } else if (params_.tracing) {
      window_.push_back({res.trace, st.sensitivity});
      const auto ds = detector_.step(res.trace.last_attention);
      st.counter = ds.counter;
      if (ds.window_complete) {
        st.alignment = ds.alignment;
        st.triggered = ds.triggered;
        if (ds.reprune_requested) {
          st.event = true;
          ++events_;
          begin_reprune();
        } else {
          window_.clear();
        }
      }
    }
    if (detector_.initialized()) {
      st.mu = detector_.reference().mu;
      st.sigma = detector_.reference().sigma;
    }
    ++position_;
    st.logits = std::move(res.logits);
    return st;
  }

  /// End of stream. A collection still in progress is turned into masks
  /// from whatever tokens it holds (flagged partial).
  std::optional<MaskBuild> finish() {
    if (phase_ == Phase::collect && !collected_.empty()) return rebuild(position_, true);
    return std::nullopt;
  }

  /// Start statistics collection for a reprune, seeded with the tokens of
  /// the window that triggered it. Pruned neurons contribute zero for those
  /// tokens since masked decoding never produced them.
  void begin_reprune() {
    std::vector<WindowToken> seed = std::move(window_);
    window_.clear();
    start_collection();
    for (const auto& wt : seed) record_collected(wt.trace, wt.sensitivity, &masks_);
  }

  Phase phase() const { return phase_; }
  const MaskSet& masks() const { return masks_; }
  const std::vector<MaskBuild>& builds() const { return builds_; }
  const DriftDetector& detector() const { return detector_; }
  std::size_t position() const { return position_; }
  std::size_t events() const { return events_; }
  const DartParams& params() const { return params_; }

  std::vector<double> densities() const {
    std::vector<double> d(w_.config.num_layers, 1.0);
    if (phase_ == Phase::decode)
      for (std::size_t l = 0; l < masks_.size(); ++l) d[l] = masks_[l].density();
    return d;
  }

 private:
  struct WindowToken {
    StepTrace trace;
    std::vector<double> sensitivity;
  };

  void start_collection() {
    phase_ = Phase::collect;
    acc_.reset();
    collected_.clear();
    sens_sum_.assign(w_.config.num_layers, 0.0);
  }

  void record_collected(const StepTrace& trace, const std::vector<double>& sens, const MaskSet* masked) {
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
      const auto& u = trace.layers[l].u;
      if (masked != nullptr && !masked->empty()) {
        Vector mu = u;
        for (std::size_t i = 0; i < mu.size(); ++i)
          if (!(*masked)[l].kept(i)) mu[i] = 0.0f;
        acc_.accumulate(l, mu);
      } else {
        acc_.accumulate(l, u);
      }
      sens_sum_[l] += sens[l];
    }
    collected_.push_back(trace.last_attention);
  }

  MaskBuild rebuild(std::size_t apply_from, bool partial) {
    const std::size_t L = w_.config.num_layers;
    const std::size_t n = collected_.size();
    std::vector<double> mean(L);
    for (std::size_t l = 0; l < L; ++l) mean[l] = sens_sum_[l] / static_cast<double>(n);

    MaskBuild b;
    b.position = apply_from;
    b.initial = builds_.empty();
    b.partial = partial;
    b.tokens_used = n;
    b.budget = plan_budget(mean, params_.alloc);
    for (std::size_t l = 0; l < L; ++l) b.masks.push_back(mask_for_layer(acc_, l, b.budget.ratios[l]));

    const std::size_t tau = params_.drift.window;
    const std::size_t usable = n / tau * tau;
    if (usable == params_.drift.reference_length()) {
      detector_.set_reference(std::span<const Vector>(collected_));
    } else if (usable >= 2 * tau) {
      detector_.set_reference(reference_stats(std::span<const Vector>(collected_).first(usable), tau));
    }
    if (detector_.initialized()) {
      b.mu = detector_.reference().mu;
      b.sigma = detector_.reference().sigma;
    }

    masks_ = b.masks;
    phase_ = Phase::decode;
    window_.clear();
    builds_.push_back(b);
    return b;
  }

  const ModelWeights& w_;
  DartParams params_;
  KvCache cache_;
  DriftDetector detector_;
  ImportanceAccumulator acc_;
  Phase phase_ = Phase::collect;
  MaskSet masks_;
  std::vector<Vector> collected_;
  std::vector<double> sens_sum_;
  std::vector<WindowToken> window_;
  std::vector<MaskBuild> builds_;
  std::size_t position_ = 0;
  std::size_t events_ = 0;
};

}  // namespace dart
