#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "dart/config.hpp"
#include "dart/engine.hpp"
#include "dart/error.hpp"
#include "dart/mask.hpp"
#include "json.hpp"

// JSONL trace: one object per line.
//   {"type":"config","config":{...}}            first line; enough to replay the run
//   {"type":"token","pos":..,"token":..,...}     one per processed token
//   {"type":"build","pos":..,"masks":[hex..]}    after every mask (re)construction

namespace dart {

using ojson = nlohmann::ordered_json;

inline ojson config_record(const RunConfig& c) { return ojson{{"type", "config"}, {"config", to_json(c)}}; }

inline ojson token_record(const TokenStep& st, std::size_t regime) {
  ojson j;
  j["type"] = "token";
  j["pos"] = st.position;
  j["token"] = st.token;
  j["regime"] = regime;
  j["phase"] = phase_name(st.phase);
  j["sensitivity"] = st.sensitivity;
  j["alignment"] = st.alignment ? ojson(*st.alignment) : ojson(nullptr);
  j["mu"] = st.mu;
  j["sigma"] = st.sigma;
  j["counter"] = st.counter;
  j["triggered"] = st.triggered;
  j["event"] = st.event;
  j["density"] = st.density;
  return j;
}

inline ojson build_record(const MaskBuild& b) {
  ojson j;
  j["type"] = "build";
  j["pos"] = b.position;
  j["initial"] = b.initial;
  j["partial"] = b.partial;
  j["tokens_used"] = b.tokens_used;
  j["mean_sensitivity"] = b.budget.mean_sensitivity;
  j["importance"] = b.budget.importance;
  j["depth"] = b.budget.depth;
  j["ratios"] = b.budget.ratios;
  j["uniform_fallback"] = b.budget.uniform_fallback;
  j["mu"] = b.mu;
  j["sigma"] = b.sigma;
  std::vector<std::string> masks;
  for (const auto& m : b.masks) masks.push_back(pack_mask_hex(m));
  j["masks"] = masks;
  return j;
}

inline void write_line(std::ostream& os, const ojson& j) { os << j.dump() << '\n'; }

/// Parse every line of a JSONL stream; errors carry 1-based line numbers.
inline std::vector<ojson> read_jsonl(std::istream& is, const std::string& origin = "trace") {
  std::vector<ojson> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = ojson::parse(line);
      if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
        throw FormatError(origin + ":" + std::to_string(lineno) + ": record has no string 'type' field");
      out.push_back(std::move(j));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
  }
  return out;
}

/// Config stored in the first record of a generation trace.
inline RunConfig config_from_trace(const std::vector<ojson>& records) {
  if (records.empty() || records.front()["type"] != "config" || !records.front().contains("config"))
    throw FormatError("trace:1: first record must be the run config");
  return config_from_json(records.front()["config"]);
}

}  // namespace dart
