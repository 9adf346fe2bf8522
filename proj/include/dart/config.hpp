#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dart/allocator.hpp"
#include "dart/engine.hpp"
#include "dart/error.hpp"
#include "dart/model.hpp"
#include "dart/tracer.hpp"
#include "json.hpp"

namespace dart {

/// All knobs of a harness run. Every random draw derives from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;

  // Model: a weight file, or synthetic weights from (seed, dims).
  std::string model_file;
  ModelConfig model{4, 32, 128, 4, 2, 8, 64, 2048};

  AllocatorParams alloc;
  DriftParams drift;
  bool tracing = true;

  // Generation.
  std::size_t gen_tokens = 400;
  std::vector<std::uint32_t> prompt;  // empty = random prompt of prompt_len tokens
  std::size_t prompt_len = 16;
  double temperature = 0.8;           // 0 = greedy

  // Synthetic workload.
  std::size_t regimes = 1;
  std::vector<std::size_t> switch_points;
  double regime_strength = 3.0;
  double noise = 0.1;

  // Layer sweep.
  double sweep_sparsity = 0.7;
  std::size_t eval_tokens = 32;

  // Detector bench.
  std::size_t detect_dim = 64;
  std::size_t detect_windows = 50;
  std::int64_t detect_switch = -1;  // token index within the stream; -1 = stationary
  std::size_t detect_runs = 20;
  double detect_noise = 0.1;

  DartParams dart_params() const { return {alloc, drift, tracing}; }

  void validate() const {
    if (model_file.empty()) {
      try {
        model.validate();
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    }
    alloc.validate();
    drift.validate();
    if (!(temperature >= 0.0)) throw ConfigError("config: temperature must be >= 0");
    if (regimes == 0) throw ConfigError("config: regimes must be >= 1");
    for (std::size_t i = 1; i < switch_points.size(); ++i)
      if (switch_points[i] <= switch_points[i - 1]) throw ConfigError("config: switch_points must be strictly increasing");
    if (!(regime_strength >= 0.0) || !(noise >= 0.0)) throw ConfigError("config: regime_strength and noise must be >= 0");
    if (!(sweep_sparsity >= 0.0 && sweep_sparsity <= 1.0)) throw ConfigError("config: sweep_sparsity must be in [0, 1]");
    if (prompt.empty() && prompt_len == 0) throw ConfigError("config: prompt_len must be >= 1 when no prompt is given");
    if (detect_dim == 0 || detect_runs == 0) throw ConfigError("config: detect_dim and detect_runs must be >= 1");
    if (!(detect_noise >= 0.0)) throw ConfigError("config: detect_noise must be >= 0");
    if (model_file.empty()) {
      const std::size_t plen = prompt.empty() ? prompt_len : prompt.size();
      if (plen + gen_tokens > model.max_seq)
        throw ConfigError("config: prompt + gen_tokens (" + std::to_string(plen + gen_tokens) + ") exceeds max_seq (" +
                          std::to_string(model.max_seq) + ")");
      for (auto t : prompt)
        if (t >= model.vocab_size) throw ConfigError("config: prompt token " + std::to_string(t) + " >= vocab size");
    }
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (is.fail() || !(is >> std::ws).eof()) throw ConfigError("config: bad value for '" + key + "': '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: bad boolean for '" + key + "': '" + v + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, std::string v) {
  for (auto& c : v)
    if (c == ',') c = ' ';
  std::istringstream is(v);
  std::vector<T> out;
  std::string item;
  while (is >> item) out.push_back(parse_number<T>(key, item));
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <class T, class F>
Setter num(F field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_number<T>(k, v); };
}

inline const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", num<std::uint64_t>([](RunConfig& c) -> auto& { return c.seed; })},
      {"model_file", [](RunConfig& c, const std::string&, const std::string& v) { c.model_file = v; }},
      {"layers", num<std::uint32_t>([](RunConfig& c) -> auto& { return c.model.num_layers; })},
      {"hidden", num<std::uint32_t>([](RunConfig& c) -> auto& { return c.model.hidden_dim; })},
      {"ffn", num<std::uint32_t>([](RunConfig& c) -> auto& { return c.model.ffn_dim; })},
      {"heads", num<std::uint32_t>([](RunConfig& c) -> auto& { return c.model.num_heads; })},
      {"kv_groups", num<std::uint32_t>([](RunConfig& c) -> auto& { return c.model.num_kv_groups; })},
      {"head_dim", num<std::uint32_t>([](RunConfig& c) -> auto& { return c.model.head_dim; })},
      {"vocab", num<std::uint32_t>([](RunConfig& c) -> auto& { return c.model.vocab_size; })},
      {"max_seq", num<std::uint32_t>([](RunConfig& c) -> auto& { return c.model.max_seq; })},
      {"sparsity", num<double>([](RunConfig& c) -> auto& { return c.alloc.sparsity; })},
      {"p_min", num<double>([](RunConfig& c) -> auto& { return c.alloc.p_min; })},
      {"p_max", num<double>([](RunConfig& c) -> auto& { return c.alloc.p_max; })},
      {"alpha_e", num<double>([](RunConfig& c) -> auto& { return c.alloc.alpha_e; })},
      {"alpha_l", num<double>([](RunConfig& c) -> auto& { return c.alloc.alpha_l; })},
      {"beta_e", num<double>([](RunConfig& c) -> auto& { return c.alloc.beta_e; })},
      {"beta_l", num<double>([](RunConfig& c) -> auto& { return c.alloc.beta_l; })},
      {"window", num<std::size_t>([](RunConfig& c) -> auto& { return c.drift.window; })},
      {"ref_windows", num<std::size_t>([](RunConfig& c) -> auto& { return c.drift.ref_windows; })},
      {"delta", num<double>([](RunConfig& c) -> auto& { return c.drift.delta; })},
      {"c0", num<std::size_t>([](RunConfig& c) -> auto& { return c.drift.counter_threshold; })},
      {"tracing", [](RunConfig& c, const std::string& k, const std::string& v) { c.tracing = parse_bool(k, v); }},
      {"gen_tokens", num<std::size_t>([](RunConfig& c) -> auto& { return c.gen_tokens; })},
      {"prompt", [](RunConfig& c, const std::string& k, const std::string& v) { c.prompt = parse_list<std::uint32_t>(k, v); }},
      {"prompt_len", num<std::size_t>([](RunConfig& c) -> auto& { return c.prompt_len; })},
      {"temperature", num<double>([](RunConfig& c) -> auto& { return c.temperature; })},
      {"regimes", num<std::size_t>([](RunConfig& c) -> auto& { return c.regimes; })},
      {"switch_points",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.switch_points = parse_list<std::size_t>(k, v); }},
      {"regime_strength", num<double>([](RunConfig& c) -> auto& { return c.regime_strength; })},
      {"noise", num<double>([](RunConfig& c) -> auto& { return c.noise; })},
      {"sweep_sparsity", num<double>([](RunConfig& c) -> auto& { return c.sweep_sparsity; })},
      {"eval_tokens", num<std::size_t>([](RunConfig& c) -> auto& { return c.eval_tokens; })},
      {"detect_dim", num<std::size_t>([](RunConfig& c) -> auto& { return c.detect_dim; })},
      {"detect_windows", num<std::size_t>([](RunConfig& c) -> auto& { return c.detect_windows; })},
      {"detect_switch", num<std::int64_t>([](RunConfig& c) -> auto& { return c.detect_switch; })},
      {"detect_runs", num<std::size_t>([](RunConfig& c) -> auto& { return c.detect_runs; })},
      {"detect_noise", num<double>([](RunConfig& c) -> auto& { return c.detect_noise; })},
  };
  return table;
}

}  // namespace detail

/// Apply one `key = value` assignment.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const auto& table = detail::setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second(c, key, value);
}

/// Parse `key = value` lines; '#' starts a comment.
inline void apply_config_text(RunConfig& c, std::istream& is, const std::string& origin = "<config>") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set_config_value(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  RunConfig c;
  apply_config_text(c, is, path);
  return c;
}

/// DART_SEED, when set, replaces the configured seed.
inline void apply_env_overrides(RunConfig& c) {
  if (const char* s = std::getenv("DART_SEED"); s != nullptr && *s != '\0')
    c.seed = detail::parse_number<std::uint64_t>("DART_SEED", s);
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["model_file"] = c.model_file;
  j["layers"] = c.model.num_layers;
  j["hidden"] = c.model.hidden_dim;
  j["ffn"] = c.model.ffn_dim;
  j["heads"] = c.model.num_heads;
  j["kv_groups"] = c.model.num_kv_groups;
  j["head_dim"] = c.model.head_dim;
  j["vocab"] = c.model.vocab_size;
  j["max_seq"] = c.model.max_seq;
  j["sparsity"] = c.alloc.sparsity;
  j["p_min"] = c.alloc.p_min;
  j["p_max"] = c.alloc.p_max;
  j["alpha_e"] = c.alloc.alpha_e;
  j["alpha_l"] = c.alloc.alpha_l;
  j["beta_e"] = c.alloc.beta_e;
  j["beta_l"] = c.alloc.beta_l;
  j["window"] = c.drift.window;
  j["ref_windows"] = c.drift.ref_windows;
  j["delta"] = c.drift.delta;
  j["c0"] = c.drift.counter_threshold;
  j["tracing"] = c.tracing;
  j["gen_tokens"] = c.gen_tokens;
  j["prompt"] = c.prompt;
  j["prompt_len"] = c.prompt_len;
  j["temperature"] = c.temperature;
  j["regimes"] = c.regimes;
  j["switch_points"] = c.switch_points;
  j["regime_strength"] = c.regime_strength;
  j["noise"] = c.noise;
  j["sweep_sparsity"] = c.sweep_sparsity;
  j["eval_tokens"] = c.eval_tokens;
  j["detect_dim"] = c.detect_dim;
  j["detect_windows"] = c.detect_windows;
  j["detect_switch"] = c.detect_switch;
  j["detect_runs"] = c.detect_runs;
  j["detect_noise"] = c.detect_noise;
  return j;
}

inline RunConfig config_from_json(const nlohmann::ordered_json& j) {
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.model_file = j.at("model_file").get<std::string>();
    c.model.num_layers = j.at("layers").get<std::uint32_t>();
    c.model.hidden_dim = j.at("hidden").get<std::uint32_t>();
    c.model.ffn_dim = j.at("ffn").get<std::uint32_t>();
    c.model.num_heads = j.at("heads").get<std::uint32_t>();
    c.model.num_kv_groups = j.at("kv_groups").get<std::uint32_t>();
    c.model.head_dim = j.at("head_dim").get<std::uint32_t>();
    c.model.vocab_size = j.at("vocab").get<std::uint32_t>();
    c.model.max_seq = j.at("max_seq").get<std::uint32_t>();
    c.alloc.sparsity = j.at("sparsity").get<double>();
    c.alloc.p_min = j.at("p_min").get<double>();
    c.alloc.p_max = j.at("p_max").get<double>();
    c.alloc.alpha_e = j.at("alpha_e").get<double>();
    c.alloc.alpha_l = j.at("alpha_l").get<double>();
    c.alloc.beta_e = j.at("beta_e").get<double>();
    c.alloc.beta_l = j.at("beta_l").get<double>();
    c.drift.window = j.at("window").get<std::size_t>();
    c.drift.ref_windows = j.at("ref_windows").get<std::size_t>();
    c.drift.delta = j.at("delta").get<double>();
    c.drift.counter_threshold = j.at("c0").get<std::size_t>();
    c.tracing = j.at("tracing").get<bool>();
    c.gen_tokens = j.at("gen_tokens").get<std::size_t>();
    c.prompt = j.at("prompt").get<std::vector<std::uint32_t>>();
    c.prompt_len = j.at("prompt_len").get<std::size_t>();
    c.temperature = j.at("temperature").get<double>();
    c.regimes = j.at("regimes").get<std::size_t>();
    c.switch_points = j.at("switch_points").get<std::vector<std::size_t>>();
    c.regime_strength = j.at("regime_strength").get<double>();
    c.noise = j.at("noise").get<double>();
    c.sweep_sparsity = j.at("sweep_sparsity").get<double>();
    c.eval_tokens = j.at("eval_tokens").get<std::size_t>();
    c.detect_dim = j.at("detect_dim").get<std::size_t>();
    c.detect_windows = j.at("detect_windows").get<std::size_t>();
    c.detect_switch = j.at("detect_switch").get<std::int64_t>();
    c.detect_runs = j.at("detect_runs").get<std::size_t>();
    c.detect_noise = j.at("detect_noise").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config record: ") + e.what());
  }
  return c;
}

}  // namespace dart
