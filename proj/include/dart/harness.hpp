#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dart/config.hpp"
#include "dart/engine.hpp"
#include "dart/model.hpp"
#include "dart/pruner.hpp"
#include "dart/rng.hpp"
#include "dart/trace.hpp"
#include "dart/tracer.hpp"
#include "dart/weights_io.hpp"
#include "dart/workload.hpp"

namespace dart {

// Salts for splitting the run seed into independent streams.
inline constexpr std::uint64_t kPromptSalt = 2;
inline constexpr std::uint64_t kSampleSalt = 3;
inline constexpr std::uint64_t kWorkloadSalt = 4;

inline ModelWeights load_model(const RunConfig& c) {
  if (!c.model_file.empty()) return load_weights(c.model_file);
  return synth_model(c.seed, c.model);
}

inline std::vector<std::uint32_t> resolve_prompt(const RunConfig& c, const ModelConfig& model) {
  if (!c.prompt.empty()) {
    for (auto t : c.prompt)
      if (t >= model.vocab_size) throw ConfigError("config: prompt token " + std::to_string(t) + " >= vocab size");
    return c.prompt;
  }
  Rng rng(Rng::mix(c.seed, kPromptSalt));
  std::vector<std::uint32_t> p(c.prompt_len);
  for (auto& t : p) t = static_cast<std::uint32_t>(rng.below(model.vocab_size));
  return p;
}

inline SyntheticWorkload make_workload(const RunConfig& c, const ModelConfig& model) {
  return SyntheticWorkload(Rng::mix(c.seed, kWorkloadSalt), model.hidden_dim, c.regimes, c.switch_points,
                           c.regime_strength, c.noise);
}

/// Temperature sampling; temperature 0 is greedy.
class Sampler {
 public:
  Sampler(std::uint64_t seed, double temperature) : rng_(Rng::mix(seed, kSampleSalt)), temperature_(temperature) {}

  std::uint32_t operator()(std::span<const float> logits) {
    if (temperature_ <= 0.0) return argmax(logits);
    Vector scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = static_cast<float>(logits[i] / temperature_);
    const Vector probs = softmax(scaled);
    const double r = rng_.uniform();
    double acc = 0.0;
    for (std::uint32_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (r < acc) return i;
    }
    return static_cast<std::uint32_t>(probs.size() - 1);
  }

 private:
  Rng rng_;
  double temperature_;
};

struct GenerateResult {
  std::vector<std::uint32_t> tokens;      // every fed token, prompt included
  std::vector<std::size_t> regimes;       // regime per position
  std::vector<TokenStep> steps;           // logits dropped
  std::vector<MaskBuild> builds;
  std::size_t prompt_len = 0;
  std::size_t reprune_events = 0;

  nlohmann::ordered_json summary() const {
    nlohmann::ordered_json j;
    j["tokens"] = tokens.size();
    j["prompt_len"] = prompt_len;
    j["generated"] = std::vector<std::uint32_t>(tokens.begin() + static_cast<std::ptrdiff_t>(prompt_len), tokens.end());
    j["reprune_events"] = reprune_events;
    j["mask_builds"] = builds.size();
    std::vector<std::size_t> event_positions;
    for (const auto& s : steps)
      if (s.event) event_positions.push_back(s.position);
    j["event_positions"] = event_positions;
    double density = 0.0;
    std::size_t n = 0;
    for (const auto& s : steps)
      if (s.phase == Phase::decode) {
        for (double d : s.density) density += d;
        n += s.density.size();
      }
    j["mean_decode_density"] = n ? density / static_cast<double>(n) : 1.0;
    if (!builds.empty()) j["final_ratios"] = builds.back().budget.ratios;
    return j;
  }
};

/// End-to-end generation with context-aware pruning and drift tracing.
/// When `trace` is given, every token and mask build is logged as JSONL.
inline GenerateResult run_generate(const RunConfig& c, std::ostream* trace = nullptr) {
  c.validate();
  const ModelWeights w = load_model(c);
  const auto prompt = resolve_prompt(c, w.config);
  if (prompt.size() + c.gen_tokens > w.config.max_seq) throw ConfigError("config: prompt + gen_tokens exceeds max_seq");
  auto workload = make_workload(c, w.config);
  Sampler sample(c.seed, c.temperature);
  DartEngine engine(w, c.dart_params());

  if (trace) write_line(*trace, config_record(c));
  GenerateResult res;
  res.prompt_len = prompt.size();
  const std::size_t total = prompt.size() + c.gen_tokens;
  std::uint32_t next = prompt.front();
  for (std::size_t pos = 0; pos < total; ++pos) {
    const std::uint32_t input = pos < prompt.size() ? prompt[pos] : next;
    const std::size_t regime = workload.regime_at(pos);
    const Vector off = workload.offset(pos);
    TokenStep st = engine.feed(input, off);
    if (pos + 1 >= prompt.size()) next = sample(st.logits);
    st.logits.clear();
    if (trace) {
      write_line(*trace, token_record(st, regime));
      if (st.build) write_line(*trace, build_record(*st.build));
    }
    res.tokens.push_back(input);
    res.regimes.push_back(regime);
    res.steps.push_back(std::move(st));
  }
  if (auto b = engine.finish(); b && trace) write_line(*trace, build_record(*b));
  res.builds = engine.builds();
  res.reprune_events = engine.events();
  return res;
}

/// The same workload and sampling schedule through the unpruned model.
inline std::vector<std::uint32_t> run_dense_generate(const RunConfig& c) {
  c.validate();
  const ModelWeights w = load_model(c);
  const auto prompt = resolve_prompt(c, w.config);
  auto workload = make_workload(c, w.config);
  Sampler sample(c.seed, c.temperature);
  KvCache cache(w.config);
  std::vector<std::uint32_t> tokens;
  std::uint32_t next = prompt.front();
  for (std::size_t pos = 0; pos < prompt.size() + c.gen_tokens; ++pos) {
    const std::uint32_t input = pos < prompt.size() ? prompt[pos] : next;
    const Vector off = workload.offset(pos);
    ForwardOptions opts;
    opts.embed_offset = off;
    const auto r = forward_token(w, input, cache, {}, opts);
    if (pos + 1 >= prompt.size()) next = sample(r.logits);
    tokens.push_back(input);
  }
  return tokens;
}

/// Jaccard overlap of kept-neuron sets, averaged over layers.
inline double mask_overlap(const MaskSet& a, const MaskSet& b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("mask_overlap: mask sets differ in size");
  double total = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].size() != b[l].size()) throw DimensionError("mask_overlap: layer widths differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a[l].size(); ++i) {
      inter += a[l].kept(i) && b[l].kept(i);
      uni += a[l].kept(i) || b[l].kept(i);
    }
    total += uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
  }
  return total / static_cast<double>(a.size());
}

/// Masks a dense run builds when the workload sits in `regime` from the
/// first token on (same prompt, sampler and budget parameters).
inline MaskSet regime_oracle_masks(const RunConfig& c, std::size_t regime) {
  c.validate();
  const ModelWeights w = load_model(c);
  const auto prompt = resolve_prompt(c, w.config);
  auto workload = make_workload(c, w.config);
  workload.force_regime(regime);
  Sampler sample(c.seed, c.temperature);
  DartEngine engine(w, c.dart_params());
  std::uint32_t next = prompt.front();
  for (std::size_t pos = 0; engine.builds().empty(); ++pos) {
    if (pos >= w.config.max_seq) throw ConfigError("oracle: max_seq reached before the first mask build");
    const std::uint32_t input = pos < prompt.size() ? prompt[pos] : next;
    const Vector off = workload.offset(pos);
    const auto st = engine.feed(input, off);
    if (pos + 1 >= prompt.size()) next = sample(st.logits);
  }
  return engine.builds().front().masks;
}

struct RecoveryResult {
  bool recovered = false;               // a post-switch reprune build exists
  std::size_t switch_at = 0;
  std::optional<std::size_t> event_at;  // first event whose window lies after the switch
  std::size_t stale_build_pos = 0;
  std::size_t post_build_pos = 0;
  double stale_overlap = 0.0;           // stale masks vs regime oracle
  double post_overlap = 0.0;            // post-reprune masks vs regime oracle
};

/// Two-regime drift recovery: compares the masks in force just before the
/// first switch and the masks rebuilt after the first post-switch event
/// with the masks a dense run of the second regime would build.
inline RecoveryResult drift_recovery(const RunConfig& c) {
  if (c.regimes < 2 || c.switch_points.empty()) throw ConfigError("recovery: needs >= 2 regimes and a switch point");
  const auto gen = run_generate(c);
  RecoveryResult r;
  const std::size_t sw = c.switch_points.front();
  r.switch_at = sw;
  const MaskBuild* stale = nullptr;
  for (const auto& b : gen.builds)
    if (b.position <= sw) stale = &b;
  if (stale == nullptr) throw ConfigError("recovery: no masks were built before the switch point");
  r.stale_build_pos = stale->position;
  const std::size_t tau = c.drift.window;
  for (const auto& s : gen.steps)
    if (s.event && s.position + 1 >= sw + tau) {
      r.event_at = s.position;
      break;
    }
  const auto oracle = regime_oracle_masks(c, 1);
  r.stale_overlap = mask_overlap(stale->masks, oracle);
  if (!r.event_at) return r;
  for (const auto& b : gen.builds)
    if (b.position > *r.event_at && !b.initial) {
      r.recovered = true;
      r.post_build_pos = b.position;
      r.post_overlap = mask_overlap(b.masks, oracle);
      break;
    }
  return r;
}

/// KL(p || q) between the softmax distributions of two logit vectors.
inline double logit_kl(std::span<const float> p_logits, std::span<const float> q_logits) {
  const Vector p = softmax(p_logits);
  const Vector q = softmax(q_logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0f) kl += p[i] * (std::log(static_cast<double>(p[i])) - std::log(std::max(1e-30, static_cast<double>(q[i]))));
  return std::max(0.0, kl);
}

struct SweepRow {
  std::size_t layer = 0;
  double mean_sensitivity = 0.0;
  double kl = 0.0;          // mean over evaluated tokens
  std::size_t match_len = 0;  // greedy tokens identical to the dense continuation
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::size_t eval_tokens = 0;
  double sparsity = 0.0;

  std::string csv() const {
    std::string out = "layer,mean_sensitivity,kl,match_len,eval_tokens\n";
    char buf[160];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%zu,%zu\n", r.layer, r.mean_sensitivity, r.kl, r.match_len,
                    eval_tokens);
      out += buf;
    }
    return out;
  }
};

/// Prune one layer at a time to `sweep_sparsity` and measure divergence from
/// the dense model on the continuation that follows the statistics window.
inline SweepResult run_layer_sweep(const RunConfig& c) {
  c.validate();
  const ModelWeights w = load_model(c);
  const auto& cfg = w.config;
  const auto prompt = resolve_prompt(c, cfg);
  auto workload = make_workload(c, cfg);
  Sampler sample(c.seed, c.temperature);
  const std::size_t T = c.drift.reference_length();
  const std::size_t prefix = std::max(prompt.size(), T);
  const std::size_t E = c.eval_tokens;
  if (prefix + E > cfg.max_seq) throw ConfigError("sweep: prefix + eval tokens exceed max_seq");

  std::vector<Vector> offsets;
  for (std::size_t pos = 0; pos < prefix + E; ++pos) offsets.push_back(workload.offset(pos));

  // Dense prefix: importance over the first T tokens, S-bar alongside.
  KvCache cache(cfg);
  ImportanceAccumulator acc(cfg.num_layers, cfg.ffn_dim, T);
  std::vector<double> sens_sum(cfg.num_layers, 0.0);
  std::vector<std::uint32_t> tokens;
  std::uint32_t next = prompt.front();
  StepResult last;
  for (std::size_t pos = 0; pos < prefix; ++pos) {
    const std::uint32_t input = pos < prompt.size() ? prompt[pos] : next;
    ForwardOptions opts;
    opts.embed_offset = offsets[pos];
    last = forward_token(w, input, cache, {}, opts);
    if (pos < T)
      for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        acc.accumulate(l, last.trace.layers[l].u);
        sens_sum[l] += sensitivity(last.trace.layers[l].y, last.trace.layers[l].z);
      }
    if (pos + 1 >= prompt.size()) next = sample(last.logits);
    tokens.push_back(input);
  }
  const KvCache snapshot = cache;
  const std::uint32_t first_eval = next;

  // Dense teacher-forced continuation and dense greedy continuation.
  auto continuation = [&](const MaskSet& masks, bool greedy, const std::vector<std::uint32_t>* forced,
                          std::vector<Vector>* logits_out) {
    KvCache kv = snapshot;
    std::vector<std::uint32_t> out;
    std::uint32_t in = first_eval;
    for (std::size_t i = 0; i < E; ++i) {
      ForwardOptions opts;
      opts.embed_offset = offsets[prefix + i];
      auto r = forward_token(w, in, kv, masks, opts);
      const std::uint32_t pred = argmax(r.logits);
      out.push_back(pred);
      if (logits_out) logits_out->push_back(std::move(r.logits));
      in = greedy ? pred : (*forced)[i];
    }
    return out;
  };
  std::vector<std::uint32_t> forced_inputs;
  {
    // Teacher-forcing inputs: sampled continuation of the dense model.
    KvCache kv = snapshot;
    std::uint32_t in = first_eval;
    for (std::size_t i = 0; i < E; ++i) {
      ForwardOptions opts;
      opts.embed_offset = offsets[prefix + i];
      const auto r = forward_token(w, in, kv, {}, opts);
      in = sample(r.logits);
      forced_inputs.push_back(in);
    }
  }
  std::vector<Vector> dense_logits;
  continuation({}, false, &forced_inputs, &dense_logits);
  const auto dense_greedy = continuation({}, true, nullptr, nullptr);

  SweepResult res;
  res.eval_tokens = E;
  res.sparsity = c.sweep_sparsity;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    MaskSet masks;
    for (std::size_t j = 0; j < cfg.num_layers; ++j)
      masks.push_back(j == l ? mask_for_layer(acc, l, c.sweep_sparsity) : NeuronMask::dense(j, cfg.ffn_dim));
    std::vector<Vector> pruned_logits;
    continuation(masks, false, &forced_inputs, &pruned_logits);
    const auto pruned_greedy = continuation(masks, true, nullptr, nullptr);
    SweepRow row;
    row.layer = l;
    row.mean_sensitivity = sens_sum[l] / static_cast<double>(std::min(prefix, T));
    for (std::size_t i = 0; i < E; ++i) row.kl += logit_kl(dense_logits[i], pruned_logits[i]);
    row.kl = E ? row.kl / static_cast<double>(E) : 0.0;
    while (row.match_len < E && pruned_greedy[row.match_len] == dense_greedy[row.match_len]) ++row.match_len;
    res.rows.push_back(row);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Detector benchmark on synthetic attention streams.

struct DetectWindow {
  std::size_t run = 0;
  std::size_t window = 0;
  std::size_t end = 0;  // stream index of the window's last token
  double alignment = 0.0;
};

struct DetectReference {
  std::size_t run = 0;
  double mu = 0.0;
  double sigma = 0.0;
};

/// Everything needed to recompute detection metrics.
struct DetectTrajectory {
  std::size_t window = 10;
  double delta = 0.5;
  std::size_t c0 = 3;
  std::int64_t switch_at = -1;
  std::size_t runs = 0;
  std::vector<DetectReference> references;
  std::vector<DetectWindow> windows;
};

struct RunMetrics {
  std::vector<std::size_t> event_ends;
  std::size_t false_events = 0;     // events whose window ends before the switch
  std::optional<std::size_t> delay; // tokens from switch to first later event, inclusive
  std::size_t pre_switch_windows = 0;
  std::size_t pre_switch_triggers = 0;
};

struct DetectMetrics {
  std::vector<RunMetrics> runs;
  std::size_t detected_runs = 0;
  std::size_t runs_without_false_events = 0;
  std::optional<std::size_t> max_delay;
  double mean_delay = 0.0;
  double false_trigger_rate = 0.0;  // triggered pre-switch windows / pre-switch windows

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["runs"] = runs.size();
    j["detected_runs"] = detected_runs;
    j["runs_without_false_events"] = runs_without_false_events;
    j["max_delay"] = max_delay ? nlohmann::ordered_json(*max_delay) : nlohmann::ordered_json(nullptr);
    j["mean_delay"] = mean_delay;
    j["false_trigger_rate"] = false_trigger_rate;
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (const auto& r : runs)
      per.push_back({{"event_ends", r.event_ends},
                     {"false_events", r.false_events},
                     {"delay", r.delay ? nlohmann::ordered_json(*r.delay) : nlohmann::ordered_json(nullptr)},
                     {"pre_switch_windows", r.pre_switch_windows},
                     {"pre_switch_triggers", r.pre_switch_triggers}});
    j["per_run"] = per;
    return j;
  }
};

/// Replays trigger, counter and event decisions from recorded alignments.
inline DetectMetrics detect_metrics(const DetectTrajectory& t) {
  DetectMetrics m;
  m.runs.resize(t.runs);
  std::vector<std::size_t> counters(t.runs, 0);
  std::vector<const DetectReference*> refs(t.runs, nullptr);
  for (const auto& r : t.references) refs.at(r.run) = &r;
  for (const auto& w : t.windows) {
    const auto* ref = refs.at(w.run);
    if (ref == nullptr) throw FormatError("detect trajectory: window without reference for run " + std::to_string(w.run));
    auto& rm = m.runs[w.run];
    const bool trig = drift_check(w.alignment, ref->mu, ref->sigma, t.delta);
    const bool before = t.switch_at < 0 || static_cast<std::int64_t>(w.end) < t.switch_at;
    if (before) {
      ++rm.pre_switch_windows;
      if (trig) ++rm.pre_switch_triggers;
    }
    auto& c = counters[w.run];
    c = update_counter(c, trig);
    if (c >= t.c0) {
      c = 0;
      rm.event_ends.push_back(w.end);
      if (before) {
        ++rm.false_events;
      } else if (!rm.delay) {
        rm.delay = w.end - static_cast<std::size_t>(t.switch_at) + 1;
      }
    }
  }
  std::size_t windows = 0, triggers = 0, delay_sum = 0;
  for (const auto& r : m.runs) {
    windows += r.pre_switch_windows;
    triggers += r.pre_switch_triggers;
    if (r.false_events == 0) ++m.runs_without_false_events;
    if (r.delay) {
      ++m.detected_runs;
      delay_sum += *r.delay;
      m.max_delay = std::max(m.max_delay.value_or(0), *r.delay);
    }
  }
  m.mean_delay = m.detected_runs ? static_cast<double>(delay_sum) / static_cast<double>(m.detected_runs) : 0.0;
  m.false_trigger_rate = windows ? static_cast<double>(triggers) / static_cast<double>(windows) : 0.0;
  return m;
}

struct DetectResult {
  DetectTrajectory trajectory;
  DetectMetrics metrics;
  /// Events reported live by the detector, per run (window end indices).
  std::vector<std::vector<std::size_t>> live_events;
};

/// Drift detector on synthetic streams: reference from regime 0, then
/// `detect_windows` windows that switch to an orthogonal regime at
/// `detect_switch` (or never). `scale` multiplies every vector.
inline DetectResult run_detector_bench(const RunConfig& c, double scale = 1.0) {
  c.validate();
  DetectResult res;
  auto& t = res.trajectory;
  t.window = c.drift.window;
  t.delta = c.drift.delta;
  t.c0 = c.drift.counter_threshold;
  t.switch_at = c.detect_switch;
  t.runs = c.detect_runs;
  const std::size_t tau = c.drift.window;
  for (std::size_t run = 0; run < c.detect_runs; ++run) {
    VectorStream stream(Rng::mix(c.seed, 100 + run), c.detect_dim, 2, c.detect_noise);
    auto scaled = [&](Vector v) {
      for (auto& x : v) x = static_cast<float>(x * scale);
      return v;
    };
    std::vector<Vector> ref;
    for (std::size_t i = 0; i < c.drift.reference_length(); ++i) ref.push_back(scaled(stream.next(0)));
    DriftDetector det(c.drift);
    det.set_reference(ref);
    t.references.push_back({run, det.reference().mu, det.reference().sigma});
    res.live_events.emplace_back();
    const std::size_t n = c.detect_windows * tau;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t regime = (c.detect_switch >= 0 && static_cast<std::int64_t>(i) >= c.detect_switch) ? 1 : 0;
      const auto ds = det.step(scaled(stream.next(regime)));
      if (ds.window_complete) {
        t.windows.push_back({run, i / tau, i, ds.alignment});
        if (ds.reprune_requested) res.live_events.back().push_back(i);
      }
    }
  }
  res.metrics = detect_metrics(t);
  return res;
}

inline void write_trajectory(std::ostream& os, const DetectTrajectory& t) {
  write_line(os, ojson{{"type", "detect_config"},
                       {"window", t.window},
                       {"delta", t.delta},
                       {"c0", t.c0},
                       {"switch_at", t.switch_at},
                       {"runs", t.runs}});
  for (const auto& r : t.references)
    write_line(os, ojson{{"type", "reference"}, {"run", r.run}, {"mu", r.mu}, {"sigma", r.sigma}});
  for (const auto& w : t.windows)
    write_line(os, ojson{{"type", "window"}, {"run", w.run}, {"window", w.window}, {"end", w.end}, {"alignment", w.alignment}});
}

inline DetectTrajectory read_trajectory(std::istream& is, const std::string& origin = "trajectory") {
  const auto records = read_jsonl(is, origin);
  DetectTrajectory t;
  bool have_config = false;
  std::size_t lineno = 0;
  for (const auto& j : records) {
    ++lineno;
    try {
      const auto type = j.at("type").get<std::string>();
      if (type == "detect_config") {
        t.window = j.at("window").get<std::size_t>();
        t.delta = j.at("delta").get<double>();
        t.c0 = j.at("c0").get<std::size_t>();
        t.switch_at = j.at("switch_at").get<std::int64_t>();
        t.runs = j.at("runs").get<std::size_t>();
        have_config = true;
      } else if (type == "reference") {
        t.references.push_back({j.at("run").get<std::size_t>(), j.at("mu").get<double>(), j.at("sigma").get<double>()});
      } else if (type == "window") {
        t.windows.push_back({j.at("run").get<std::size_t>(), j.at("window").get<std::size_t>(),
                             j.at("end").get<std::size_t>(), j.at("alignment").get<double>()});
      } else {
        throw FormatError(origin + ": record " + std::to_string(lineno) + ": unknown type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(origin + ": record " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_config) throw FormatError(origin + ": missing detect_config record");
  for (const auto& r : t.references)
    if (r.run >= t.runs) throw FormatError(origin + ": reference run index out of range");
  for (const auto& w : t.windows)
    if (w.run >= t.runs) throw FormatError(origin + ": window run index out of range");
  return t;
}

}  // namespace dart
