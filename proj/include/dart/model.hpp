#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dart/error.hpp"
#include "dart/linalg.hpp"
#include "dart/mask.hpp"
#include "dart/rng.hpp"

namespace dart {

struct ModelConfig {
  std::uint32_t num_layers = 2;
  std::uint32_t hidden_dim = 8;
  std::uint32_t ffn_dim = 16;
  std::uint32_t num_heads = 2;
  std::uint32_t num_kv_groups = 1;
  std::uint32_t head_dim = 4;
  std::uint32_t vocab_size = 16;
  std::uint32_t max_seq = 64;

  std::uint32_t heads_per_group() const { return num_heads / num_kv_groups; }
  std::uint32_t group_of(std::uint32_t head) const { return head / heads_per_group(); }

  void validate() const {
    if (num_layers == 0 || hidden_dim == 0 || ffn_dim == 0 || num_heads == 0 || num_kv_groups == 0 ||
        head_dim == 0 || vocab_size == 0 || max_seq == 0)
      throw ConfigError("model config: every dimension must be >= 1");
    if (num_heads % num_kv_groups != 0) throw ConfigError("model config: num_heads must be divisible by num_kv_groups");
    if (num_heads * head_dim != hidden_dim) throw ConfigError("model config: num_heads * head_dim must equal hidden_dim");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// The seven per-layer projections of a GQA + gated-FFN block.
struct LayerWeights {
  std::vector<Matrix> w_q;  // per head, d x d_h
  std::vector<Matrix> w_k;  // per group, d x d_h
  std::vector<Matrix> w_v;  // per group, d x d_h
  Matrix w_o;               // n_h*d_h x d
  Matrix w_up;              // d x m
  Matrix w_gate;            // d x m
  Matrix w_down;            // m x d

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
  ModelConfig config;
  Matrix embed;  // vocab x d
  std::vector<LayerWeights> layers;
  Matrix unembed;  // d x vocab

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

namespace detail {

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  const double s = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& x : m.data()) x = static_cast<float>(rng.normal() * s);
  return m;
}

}  // namespace detail

/// Reproducible pseudo-random weights. Each matrix is N(0,1) scaled by
/// 1/sqrt(fan_in); for every d-row matrix that is 1/sqrt(d).
inline ModelWeights synth_model(std::uint64_t seed, const ModelConfig& config) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.hidden_dim, m = config.ffn_dim, dh = config.head_dim;
  ModelWeights w;
  w.config = config;
  // Embedding rows are token vectors of roughly unit norm.
  w.embed = Matrix(config.vocab_size, d);
  for (auto& x : w.embed.data()) x = static_cast<float>(rng.normal() / std::sqrt(static_cast<double>(d)));
  w.layers.resize(config.num_layers);
  for (auto& layer : w.layers) {
    for (std::uint32_t h = 0; h < config.num_heads; ++h) layer.w_q.push_back(detail::random_matrix(rng, d, dh));
    for (std::uint32_t g = 0; g < config.num_kv_groups; ++g) layer.w_k.push_back(detail::random_matrix(rng, d, dh));
    for (std::uint32_t g = 0; g < config.num_kv_groups; ++g) layer.w_v.push_back(detail::random_matrix(rng, d, dh));
    layer.w_o = detail::random_matrix(rng, config.num_heads * dh, d);
    layer.w_up = detail::random_matrix(rng, d, m);
    layer.w_gate = detail::random_matrix(rng, d, m);
    layer.w_down = detail::random_matrix(rng, m, d);
  }
  w.unembed = detail::random_matrix(rng, d, config.vocab_size);
  return w;
}

/// Keys and values per layer and KV group, one row per processed token.
struct LayerCache {
  std::vector<Matrix> keys;
  std::vector<Matrix> values;
};

class KvCache {
 public:
  explicit KvCache(const ModelConfig& config) : config_(config), layers_(config.num_layers) {
    for (auto& lc : layers_) {
      lc.keys.assign(config.num_kv_groups, Matrix(0, config.head_dim));
      lc.values.assign(config.num_kv_groups, Matrix(0, config.head_dim));
    }
  }

  LayerCache& layer(std::size_t l) { return layers_.at(l); }
  const LayerCache& layer(std::size_t l) const { return layers_.at(l); }
  std::size_t num_layers() const { return layers_.size(); }
  const ModelConfig& config() const { return config_; }

  /// Tokens recorded for layer l.
  std::size_t tokens(std::size_t l = 0) const { return layers_.at(l).keys.front().rows(); }

 private:
  ModelConfig config_;
  std::vector<LayerCache> layers_;
};

/// Attention block output O for the current token. Normalizes x_t, appends
/// its key/value to the cache, and attends over every cached token.
inline Vector attention_step(const ModelConfig& config, const LayerWeights& layer, std::span<const float> x_t,
                             LayerCache& cache, FlopCounter* counter = nullptr) {
  detail::require_dims(x_t.size() == config.hidden_dim, "attention_step: x_t has wrong dimension");
  if (cache.keys.size() != config.num_kv_groups || cache.values.size() != config.num_kv_groups)
    throw DimensionError("attention_step: cache does not match config group count");
  const std::size_t t_prev = cache.keys.front().rows();
  if (t_prev + 1 > config.max_seq) throw DimensionError("attention_step: sequence exceeds max_seq");
  for (std::uint32_t g = 0; g < config.num_kv_groups; ++g)
    if (cache.keys[g].rows() != t_prev || cache.values[g].rows() != t_prev)
      throw DimensionError("attention_step: key/value lengths disagree");

  const Vector h = rms_norm(x_t);
  for (std::uint32_t g = 0; g < config.num_kv_groups; ++g) {
    cache.keys[g].push_row(vecmat(h, layer.w_k[g], counter));
    cache.values[g].push_row(vecmat(h, layer.w_v[g], counter));
  }

  const std::size_t dh = config.head_dim;
  const std::size_t t = t_prev + 1;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Vector concat(config.num_heads * dh, 0.0f);
  Vector scores(t);
  for (std::uint32_t head = 0; head < config.num_heads; ++head) {
    const std::uint32_t g = config.group_of(head);
    const Vector q = vecmat(h, layer.w_q[head], counter);
    for (std::size_t j = 0; j < t; ++j) {
      scores[j] = static_cast<float>(dot(q, cache.keys[g].row(j)) * inv_sqrt);
      count(counter, 2 * dh);
    }
    const Vector weights = softmax(scores);
    std::vector<double> acc(dh, 0.0);
    for (std::size_t j = 0; j < t; ++j) {
      const auto v = cache.values[g].row(j);
      for (std::size_t i = 0; i < dh; ++i) acc[i] += static_cast<double>(weights[j]) * v[i];
      count(counter, 2 * dh);
    }
    for (std::size_t i = 0; i < dh; ++i) concat[head * dh + i] = static_cast<float>(acc[i]);
  }
  return vecmat(concat, layer.w_o, counter);
}

struct FfnOutput {
  Vector u;  // gated activation before masking, length m
  Vector z;  // block output including the residual, length d
};

/// Gated FFN with residual: u = (n W_up) * SiLU(n W_gate) with n = RMS(y),
/// z = y + (M * u) W_down. Masked neurons are zeroed, not removed.
inline FfnOutput ffn_step(const ModelConfig& config, const LayerWeights& layer, std::span<const float> y_t,
                          const NeuronMask* mask = nullptr, FlopCounter* counter = nullptr) {
  detail::require_dims(y_t.size() == config.hidden_dim, "ffn_step: y_t has wrong dimension");
  if (mask != nullptr && mask->size() != config.ffn_dim) throw DimensionError("ffn_step: mask length != ffn_dim");
  const Vector n = rms_norm(y_t);
  const Vector up = vecmat(n, layer.w_up, counter);
  const Vector gate = vecmat(n, layer.w_gate, counter);
  FfnOutput out;
  out.u.resize(config.ffn_dim);
  for (std::size_t i = 0; i < config.ffn_dim; ++i) out.u[i] = up[i] * silu(gate[i]);
  count(counter, 2 * config.ffn_dim);
  Vector masked = out.u;
  if (mask != nullptr)
    for (std::size_t i = 0; i < masked.size(); ++i)
      if (!mask->kept(i)) masked[i] = 0.0f;
  out.z = add(y_t, vecmat(masked, layer.w_down, counter));
  return out;
}

/// FFN with pruned rows/columns physically removed. Used for cost
/// measurement; must agree with the masked reference path.
struct CompactFfn {
  std::vector<std::size_t> kept;
  Matrix up;    // d x k
  Matrix gate;  // d x k
  Matrix down;  // k x d

  static CompactFfn build(const LayerWeights& layer, const NeuronMask& mask) {
    detail::require_dims(mask.size() == layer.w_up.cols(), "CompactFfn: mask length != ffn_dim");
    CompactFfn c;
    c.kept = mask.indices();
    const std::size_t d = layer.w_up.rows(), k = c.kept.size();
    c.up = Matrix(d, k);
    c.gate = Matrix(d, k);
    c.down = Matrix(k, d);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t j = 0; j < k; ++j) {
        c.up(r, j) = layer.w_up(r, c.kept[j]);
        c.gate(r, j) = layer.w_gate(r, c.kept[j]);
      }
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t col = 0; col < d; ++col) c.down(j, col) = layer.w_down(c.kept[j], col);
    return c;
  }

  Vector step(std::span<const float> y_t, FlopCounter* counter = nullptr) const {
    detail::require_dims(y_t.size() == up.rows(), "CompactFfn::step: y_t has wrong dimension");
    const Vector n = rms_norm(y_t);
    const Vector a = vecmat(n, up, counter);
    const Vector g = vecmat(n, gate, counter);
    Vector u(kept.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = a[i] * silu(g[i]);
    count(counter, 2 * u.size());
    return add(y_t, vecmat(u, down, counter));
  }
};

struct LayerTrace {
  Vector y;  // attention-block output (residual stream after attention)
  Vector u;  // pre-down activation, unmasked
  Vector z;  // FFN-block output
};

struct StepTrace {
  std::vector<LayerTrace> layers;
  /// Attention-block output of the last layer; the drift detector's input.
  Vector last_attention;
};

struct CostTally {
  FlopCounter attention;
  FlopCounter mlp;
};

struct ForwardOptions {
  /// Added to the token embedding before the first layer (may be empty).
  std::span<const float> embed_offset;
  /// When set, FFNs run through these compacted blocks instead of masks.
  const std::vector<CompactFfn>* compact = nullptr;
  CostTally* tally = nullptr;
};

struct StepResult {
  Vector logits;
  StepTrace trace;
};

/// One autoregressive step: embed, L x (attention + masked FFN), unembed.
/// An empty mask set runs dense FFNs.
inline StepResult forward_token(const ModelWeights& w, std::uint32_t token, KvCache& cache, const MaskSet& masks = {},
                                const ForwardOptions& options = {}) {
  const auto& cfg = w.config;
  if (token >= cfg.vocab_size) throw DimensionError("forward_token: token id out of range");
  if (!masks.empty() && masks.size() != cfg.num_layers) throw DimensionError("forward_token: mask count != num_layers");
  if (cache.num_layers() != cfg.num_layers) throw DimensionError("forward_token: cache layer count mismatch");

  Vector x(w.embed.row(token).begin(), w.embed.row(token).end());
  if (!options.embed_offset.empty()) x = add(x, options.embed_offset);

  StepResult res;
  res.trace.layers.reserve(cfg.num_layers);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto& layer = w.layers[l];
    FlopCounter* attn_counter = options.tally ? &options.tally->attention : nullptr;
    FlopCounter* mlp_counter = options.tally ? &options.tally->mlp : nullptr;
    LayerTrace lt;
    lt.y = add(x, attention_step(cfg, layer, x, cache.layer(l), attn_counter));
    if (options.compact != nullptr) {
      lt.z = (*options.compact)[l].step(lt.y, mlp_counter);
    } else {
      auto ffn = ffn_step(cfg, layer, lt.y, masks.empty() ? nullptr : &masks[l], mlp_counter);
      lt.u = std::move(ffn.u);
      lt.z = std::move(ffn.z);
    }
    x = lt.z;
    res.trace.layers.push_back(std::move(lt));
  }
  res.trace.last_attention = res.trace.layers.back().y;
  res.logits = vecmat(rms_norm(x), w.unembed);
  return res;
}

/// Index of the largest logit; ties go to the lower index.
inline std::uint32_t argmax(std::span<const float> logits) {
  std::uint32_t best = 0;
  for (std::uint32_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

/// Greedy continuation of a prompt with fixed masks.
inline std::vector<std::uint32_t> greedy_decode(const ModelWeights& w, std::span<const std::uint32_t> prompt,
                                                std::size_t new_tokens, const MaskSet& masks = {}) {
  if (prompt.empty()) throw DimensionError("greedy_decode: empty prompt");
  KvCache cache(w.config);
  std::vector<std::uint32_t> out(prompt.begin(), prompt.end());
  StepResult last;
  for (auto tok : prompt) last = forward_token(w, tok, cache, masks);
  for (std::size_t i = 0; i < new_tokens; ++i) {
    const auto next = argmax(last.logits);
    out.push_back(next);
    if (i + 1 < new_tokens) last = forward_token(w, next, cache, masks);
  }
  return out;
}

}  // namespace dart
