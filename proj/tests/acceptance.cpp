// One PASS/FAIL line per acceptance criterion; exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dart/allocator.hpp"
#include "dart/costmodel.hpp"
#include "dart/harness.hpp"
#include "dart/model.hpp"
#include "dart/pruner.hpp"
#include "oracles.hpp"

using namespace dart;

namespace {

int failures = 0;

void verdict(bool ok, const std::string& id, const std::string& what) {
  std::printf("[%s] %s %s\n", ok ? "PASS" : "FAIL", id.c_str(), what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool within_rel(double got, double want, double tol) { return std::abs(got - want) <= tol * std::abs(want); }

void cost_ratios() {
  const auto t0 = std::chrono::steady_clock::now();
  cost::CostParams big;
  big.dims = cost::preset("llama70b");
  big.tokens = cost::calibrate_tokens(big, 53.91 * cost::kGiB);
  const auto r70 = cost::report_uniform(big, 0.7);

  cost::CostParams small;
  small.dims = cost::preset("llama8b");
  small.tokens = big.tokens;
  const auto r8 = cost::report_uniform(small, 0.7);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const double mem70 = 17.14 / 53.91, flop70 = 4.12 / 13.12, flop8 = 0.35 / 1.31;
  verdict(within_rel(r70.mlp_bytes_ratio, mem70, 0.02), "1a",
          fmt("70B MLP memory ratio %.4f vs %.4f (tokens=%llu)", r70.mlp_bytes_ratio, mem70,
              static_cast<unsigned long long>(big.tokens)));
  verdict(within_rel(r70.mlp_flops_ratio, flop70, 0.02), "1b",
          fmt("70B MLP FLOP ratio %.4f vs %.4f", r70.mlp_flops_ratio, flop70));
  verdict(within_rel(r8.mlp_flops_ratio, flop8, 0.02), "1c",
          fmt("8B MLP compute ratio %.4f vs %.4f", r8.mlp_flops_ratio, flop8));
  verdict(secs < 1.0, "1d", fmt("cost model runtime %.4f s", secs));
}

void attention_invariance() {
  Rng rng(11);
  bool ok = true;
  for (const char* name : {"llama70b", "llama8b", "toy"}) {
    cost::CostParams p;
    p.dims = cost::preset(name);
    p.tokens = 128;
    p.context_len = 512;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> plan(p.dims.num_layers);
      for (auto& r : plan) r = rng.uniform(0.0, 0.99);
      const auto c = cost::report(p, plan);
      ok &= c.dense.attention_flops == c.sparse.attention_flops && c.dense.attention_bytes == c.sparse.attention_bytes;
    }
  }
  verdict(ok, "2", "attention cost identical under 150 random sparsity plans");
}

void mask_oracle() {
  Rng rng(2024);
  std::size_t bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng.below(64);
    std::vector<double> s(m);
    const bool coarse = rng.below(2) == 0;
    for (auto& x : s) x = coarse ? static_cast<double>(rng.below(5)) : rng.uniform(0.0, 10.0);
    const double keep = rng.uniform();
    if (!(build_mask(std::span<const double>(s), keep) == oracle::stable_sort_top_k(s, keep_count(keep, m)))) ++bad;
  }
  verdict(bad == 0, "3", fmt("build_mask vs stable-sort top-k: %zu/1000 mismatches", bad));
}

void budget_conservation() {
  Rng rng(77);
  double worst_sum = 0, worst_oracle = 0;
  bool clamps = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t L = 1 + rng.below(16);
    AllocatorParams p;
    p.p_min = trial % 2 ? rng.uniform(0.0, 0.2) : 0.0;
    p.p_max = rng.uniform(0.5, 1.0);
    p.sparsity = rng.uniform(p.p_min + 0.01, p.p_max - 0.01);
    std::vector<double> imp(L), dep(L), w(L);
    for (std::size_t l = 0; l < L; ++l) {
      imp[l] = rng.uniform();
      dep[l] = rng.uniform(0.05, 1.0);
      w[l] = imp[l] * dep[l];
    }
    const auto a = allocate(imp, dep, p);
    const double sum = std::accumulate(a.ratios.begin(), a.ratios.end(), 0.0);
    worst_sum = std::max(worst_sum, std::abs(sum - p.sparsity * static_cast<double>(L)));
    for (double r : a.ratios) clamps &= r >= p.p_min - 1e-12 && r <= p.p_max + 1e-12;
    if (L <= 5 && p.p_min == 0.0) {
      const auto want = oracle::water_fill(w, p.sparsity * static_cast<double>(L), p.p_min, p.p_max);
      for (std::size_t l = 0; l < L; ++l) worst_oracle = std::max(worst_oracle, std::abs(a.ratios[l] - want[l]));
    }
  }
  verdict(worst_sum <= 1e-6 && clamps && worst_oracle <= 1e-6, "4",
          fmt("max |sum p - rho L| %.2e, clamps %s, max oracle gap %.2e", worst_sum, clamps ? "held" : "violated",
              worst_oracle));
}

void depth_endpoints() {
  const AllocatorParams p;
  const double d0 = depth_factor_at(0.0, p), d1 = depth_factor_at(1.0, p), dm = depth_factor_at(0.5, p);
  verdict(std::abs(d0 - 0.25) <= 1e-9 && std::abs(d1 - 0.35) <= 1e-9 && std::abs(dm - 1.0) <= 1e-9, "5",
          fmt("D(0)=%.12f D(1)=%.12f D(0.5)=%.12f", d0, d1, dm));
}

void masked_ffn() {
  const ModelConfig c{4, 32, 128, 4, 2, 8, 64, 2048};
  const auto w = synth_model(21, c);
  Rng rng(5);
  std::vector<std::uint32_t> toks(12);
  for (auto& t : toks) t = static_cast<std::uint32_t>(rng.below(c.vocab_size));
  MaskSet ones;
  for (std::size_t l = 0; l < c.num_layers; ++l) ones.push_back(NeuronMask::dense(l, c.ffn_dim));
  KvCache a(c), b(c);
  bool exact = true;
  for (auto t : toks) exact &= forward_token(w, t, a).logits == forward_token(w, t, b, ones).logits;

  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto& L = w.layers[static_cast<std::size_t>(trial) % c.num_layers];
    NeuronMask mask{0, std::vector<std::uint8_t>(c.ffn_dim, 0), 0};
    for (auto& bit : mask.bits)
      if (rng.below(2)) bit = 1, ++mask.k;
    Vector y(c.hidden_dim);
    for (auto& v : y) v = static_cast<float>(rng.normal());
    const auto got = ffn_step(c, L, y, &mask).z;
    const auto want = oracle::ffn_column_deletion(L, y, mask);
    for (std::size_t i = 0; i < c.hidden_dim; ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  verdict(exact && worst <= 1e-6, "6",
          fmt("all-ones mask %s; random masks max |z - oracle| %.2e over 100 trials",
              exact ? "bit-identical" : "differs", worst));
}

void kv_cache() {
  const ModelConfig c{4, 32, 128, 4, 2, 8, 64, 2048};
  Rng rng(6);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = synth_model(seed, c);
    std::vector<std::uint32_t> toks(12);
    for (auto& t : toks) t = static_cast<std::uint32_t>(rng.below(c.vocab_size));
    const auto want = oracle::forward(w, toks);
    KvCache cache(c);
    for (std::size_t i = 0; i < toks.size(); ++i) {
      const auto got = forward_token(w, toks[i], cache).logits;
      for (std::size_t v = 0; v < got.size(); ++v) worst = std::max(worst, std::abs(got[v] - want[i][v]));
    }
  }
  verdict(worst <= 1e-5, "7", fmt("cached decode vs full recompute: max |dlogit| %.2e over 10x12 tokens", worst));
}

void drift_delay() {
  RunConfig c;
  c.detect_runs = 20;
  c.detect_windows = 50;
  c.detect_switch = 200;
  const auto sw = run_detector_bench(c);
  const std::size_t bound = (c.drift.counter_threshold + 1) * c.drift.window;
  const bool delay_ok = sw.metrics.detected_runs == c.detect_runs && sw.metrics.max_delay && *sw.metrics.max_delay <= bound;
  verdict(delay_ok, "8a",
          fmt("orthogonal switch detected in %zu/20 runs, max delay %zu <= %zu", sw.metrics.detected_runs,
              sw.metrics.max_delay.value_or(0), bound));

  c.detect_switch = -1;
  const auto st = run_detector_bench(c);
  verdict(st.metrics.runs_without_false_events >= 18, "8b",
          fmt("stationary 50-window streams with zero events: %zu/20 (window trigger rate %.3f)",
              st.metrics.runs_without_false_events, st.metrics.false_trigger_rate));
}

void drift_recovery_check() {
  std::size_t good = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RunConfig c;
    c.seed = seed;
    c.alloc.sparsity = 0.5;
    c.regimes = 2;
    c.switch_points = {200};
    c.gen_tokens = 400;
    const auto r = drift_recovery(c);
    const bool ok = r.recovered && r.post_overlap > r.stale_overlap;
    good += ok;
    detail += fmt(" %llu:%.3f/%.3f", static_cast<unsigned long long>(seed), r.post_overlap, r.stale_overlap);
  }
  verdict(good == 10, "9", fmt("post-reprune overlap beats stale mask in %zu/10 seeds (post/stale):", good) + detail);
}

void replay_determinism() {
  RunConfig c;
  c.seed = 3;
  c.regimes = 2;
  c.switch_points = {200};
  std::ostringstream a, b;
  run_generate(c, &a);
  run_generate(c, &b);
  verdict(a.str() == b.str() && !a.str().empty(), "10",
          fmt("two runs, same config: traces %s (%zu bytes)", a.str() == b.str() ? "byte-identical" : "differ",
              a.str().size()));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  cost_ratios();
  attention_invariance();
  mask_oracle();
  budget_conservation();
  depth_endpoints();
  masked_ffn();
  kv_cache();
  drift_delay();
  drift_recovery_check();
  replay_determinism();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%d failing, %.1f s\n", failures, secs);
  return failures ? 1 : 0;
}
