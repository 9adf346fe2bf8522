#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "dart/error.hpp"
#include "dart/model.hpp"
#include "dart/tracer.hpp"
#include "json.hpp"

namespace dart::cost {

/// Width of the FFN intermediate activation traffic under sparsity.
enum class ActivationLayout {
  masked,     // pruned neurons are zeroed; the m-wide intermediate is still moved
  compacted,  // pruned rows/columns removed; intermediate traffic shrinks with keep
};

struct CostParams {
  ModelConfig dims;
  std::uint64_t tokens = 1;        // tokens per measurement
  std::uint64_t context_len = 0;   // cached tokens before the first measured token
  std::uint32_t weight_bytes = 1;  // compute precision
  std::uint32_t act_bytes = 2;     // communication precision
  std::vector<double> keep;        // per layer; empty = dense
  ActivationLayout layout = ActivationLayout::masked;

  double keep_at(std::size_t layer) const { return keep.empty() ? 1.0 : keep.at(layer); }

  void validate() const {
    auto ok_width = [](std::uint32_t b) { return b == 1 || b == 2 || b == 4; };
    if (!ok_width(weight_bytes) || !ok_width(act_bytes)) throw ConfigError("cost: byte widths must be 1, 2 or 4");
    if (!keep.empty() && keep.size() != dims.num_layers) throw ConfigError("cost: keep fraction count != num_layers");
    for (double k : keep)
      if (!(k > 0.0 && k <= 1.0)) throw ConfigError("cost: keep fractions must be in (0, 1]");
  }
};

struct Cost {
  double flops = 0.0;
  double bytes = 0.0;
};

/// Per-layer attention and MLP costs for the configured token count.
struct CostReport {
  std::vector<double> attention_flops, attention_bytes, mlp_flops, mlp_bytes;

  static double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }
  double total_attention_flops() const { return sum(attention_flops); }
  double total_attention_bytes() const { return sum(attention_bytes); }
  double total_mlp_flops() const { return sum(mlp_flops); }
  double total_mlp_bytes() const { return sum(mlp_bytes); }
};

/// Query/key/value/output projections, scores and value mixing for one
/// layer. Independent of FFN sparsity.
inline Cost attention_cost(const CostParams& p) {
  const double d = p.dims.hidden_dim, dh = p.dims.head_dim, nh = p.dims.num_heads, ng = p.dims.num_kv_groups;
  const double proj_params = d * dh * (nh + 2.0 * ng) + nh * dh * d;
  // Sum over measured tokens of the attended length context + i + 1.
  const double n = static_cast<double>(p.tokens);
  const double attended = n * static_cast<double>(p.context_len) + n * (n + 1.0) / 2.0;
  Cost c;
  c.flops = 2.0 * proj_params * n + 4.0 * nh * dh * attended;
  c.bytes = proj_params * p.weight_bytes                               // weights
            + 2.0 * ng * dh * attended * p.act_bytes                   // KV reads
            + n * (2.0 * ng * dh + 2.0 * d) * p.act_bytes;             // KV writes + block in/out
  return c;
}

/// Up, gate and down projections plus the SiLU/product gate (2 ops per
/// kept unit) for one layer at the given keep fraction.
inline Cost mlp_cost(const CostParams& p, double keep) {
  const double d = p.dims.hidden_dim, m = p.dims.ffn_dim;
  const double kept = keep * m;
  const double n = static_cast<double>(p.tokens);
  const double inter = p.layout == ActivationLayout::masked ? m : kept;
  Cost c;
  c.flops = n * (3.0 * 2.0 * d * kept + 2.0 * kept);
  c.bytes = 3.0 * d * kept * p.weight_bytes + n * (2.0 * d + 2.0 * inter) * p.act_bytes;
  return c;
}

inline CostReport evaluate(const CostParams& p) {
  p.validate();
  CostReport r;
  const Cost attn = attention_cost(p);
  for (std::size_t l = 0; l < p.dims.num_layers; ++l) {
    const Cost mlp = mlp_cost(p, p.keep_at(l));
    r.attention_flops.push_back(attn.flops);
    r.attention_bytes.push_back(attn.bytes);
    r.mlp_flops.push_back(mlp.flops);
    r.mlp_bytes.push_back(mlp.bytes);
  }
  return r;
}

/// Token count at which the dense whole-model MLP traffic equals `anchor_bytes`.
inline std::uint64_t calibrate_tokens(CostParams p, double anchor_bytes) {
  p.keep.clear();
  p.tokens = 0;
  const double fixed = evaluate(p).total_mlp_bytes();
  p.tokens = 1;
  const double per_token = evaluate(p).total_mlp_bytes() - fixed;
  if (per_token <= 0.0 || anchor_bytes <= fixed) return 0;
  return static_cast<std::uint64_t>(std::llround((anchor_bytes - fixed) / per_token));
}

struct Comparison {
  CostReport dense;
  CostReport sparse;
  double mlp_flops_ratio = 1.0;
  double mlp_bytes_ratio = 1.0;
  double attention_flops_ratio = 1.0;
  double attention_bytes_ratio = 1.0;
};

/// Dense versus sparse costs for a sparsity plan (per-layer pruning ratios).
inline Comparison report(CostParams p, const std::vector<double>& pruning_ratios) {
  if (pruning_ratios.size() != p.dims.num_layers) throw ConfigError("cost: pruning plan length != num_layers");
  Comparison c;
  p.keep.clear();
  c.dense = evaluate(p);
  for (double r : pruning_ratios) p.keep.push_back(1.0 - r);
  c.sparse = evaluate(p);
  auto ratio = [](double a, double b) { return b > 0.0 ? a / b : 1.0; };
  c.mlp_flops_ratio = ratio(c.sparse.total_mlp_flops(), c.dense.total_mlp_flops());
  c.mlp_bytes_ratio = ratio(c.sparse.total_mlp_bytes(), c.dense.total_mlp_bytes());
  c.attention_flops_ratio = ratio(c.sparse.total_attention_flops(), c.dense.total_attention_flops());
  c.attention_bytes_ratio = ratio(c.sparse.total_attention_bytes(), c.dense.total_attention_bytes());
  return c;
}

inline Comparison report_uniform(const CostParams& p, double sparsity) {
  return report(p, std::vector<double>(p.dims.num_layers, sparsity));
}

inline constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;
inline constexpr double kTiFlop = 1024.0 * kGiB;

inline nlohmann::ordered_json to_json(const CostParams& p, const Comparison& c) {
  nlohmann::ordered_json j;
  j["dims"] = {{"layers", p.dims.num_layers}, {"hidden", p.dims.hidden_dim},   {"ffn", p.dims.ffn_dim},
               {"heads", p.dims.num_heads},   {"kv_groups", p.dims.num_kv_groups}, {"head_dim", p.dims.head_dim}};
  j["tokens"] = p.tokens;
  j["context_len"] = p.context_len;
  j["weight_bytes"] = p.weight_bytes;
  j["act_bytes"] = p.act_bytes;
  j["layout"] = p.layout == ActivationLayout::masked ? "masked" : "compacted";
  auto side = [](const CostReport& r) {
    return nlohmann::ordered_json{{"attention_flops", r.total_attention_flops()},
                                  {"attention_bytes", r.total_attention_bytes()},
                                  {"mlp_flops", r.total_mlp_flops()},
                                  {"mlp_bytes", r.total_mlp_bytes()},
                                  {"per_layer_mlp_flops", r.mlp_flops},
                                  {"per_layer_mlp_bytes", r.mlp_bytes}};
  };
  j["dense"] = side(c.dense);
  j["sparse"] = side(c.sparse);
  j["ratios"] = {{"mlp_flops", c.mlp_flops_ratio},
                 {"mlp_bytes", c.mlp_bytes_ratio},
                 {"attention_flops", c.attention_flops_ratio},
                 {"attention_bytes", c.attention_bytes_ratio}};
  return j;
}

/// Aligned text table; memory in GiB and compute in TiFLOP (binary units).
inline std::string to_table(const Comparison& c) {
  char buf[160];
  std::string out;
  auto line = [&](const char* comp, const char* metric, double dense, double sparse) {
    std::snprintf(buf, sizeof buf, "%-10s %-22s %12.2f %12.2f %8.4f\n", comp, metric, dense, sparse,
                  dense > 0.0 ? sparse / dense : 1.0);
    out += buf;
  };
  std::snprintf(buf, sizeof buf, "%-10s %-22s %12s %12s %8s\n", "Component", "Metric", "Dense", "Sparse", "Ratio");
  out += buf;
  line("Attention", "Memory Access (GiB)", c.dense.total_attention_bytes() / kGiB, c.sparse.total_attention_bytes() / kGiB);
  line("Attention", "Compute (TiFLOP)", c.dense.total_attention_flops() / kTiFlop, c.sparse.total_attention_flops() / kTiFlop);
  line("MLP", "Memory Access (GiB)", c.dense.total_mlp_bytes() / kGiB, c.sparse.total_mlp_bytes() / kGiB);
  line("MLP", "Compute (TiFLOP)", c.dense.total_mlp_flops() / kTiFlop, c.sparse.total_mlp_flops() / kTiFlop);
  return out;
}

inline ModelConfig preset(const std::string& name) {
  if (name == "llama70b") return {80, 8192, 28672, 64, 8, 128, 128256, 131072};
  if (name == "llama8b") return {32, 4096, 14336, 32, 8, 128, 128256, 131072};
  if (name == "toy") return {4, 32, 128, 4, 2, 8, 64, 2048};
  throw ConfigError("unknown dims preset '" + name + "' (expected llama70b, llama8b or toy)");
}

struct Overhead {
  double tracing_flops_per_token = 0.0;
  double dense_flops_per_token = 0.0;
  double ratio = 0.0;
};

/// Per-token arithmetic added by sensitivity scoring, importance
/// accumulation, drift detection and (amortized) budget allocation,
/// relative to one dense forward token at the given context length.
inline Overhead overhead(const ModelConfig& dims, const DriftParams& drift, std::uint64_t context_len) {
  const double d = dims.hidden_dim, m = dims.ffn_dim, L = dims.num_layers;
  const double tau = static_cast<double>(drift.window);
  const double T = static_cast<double>(drift.reference_length());
  // Sensitivity: three dot products (6d) plus the displacement norm (3d).
  const double sens = 9.0 * d;
  // Importance: square and add per neuron.
  const double importance = 2.0 * m;
  // Detector: running centroid sum, plus one cosine (6d) per window.
  const double detector = d + 6.0 * d / tau;
  // Allocator: O(L) per iteration, at most L + 2 iterations, once per T tokens.
  const double allocator = 8.0 * L * (L + 2.0) / T;
  Overhead o;
  o.tracing_flops_per_token = L * (sens + importance) + detector + allocator;
  CostParams p;
  p.dims = dims;
  p.tokens = 1;
  p.context_len = context_len;
  const auto r = evaluate(p);
  o.dense_flops_per_token = r.total_attention_flops() + r.total_mlp_flops();
  o.ratio = o.tracing_flops_per_token / o.dense_flops_per_token;
  return o;
}

}  // namespace dart::cost
