// dart — command-line front end for the toy pruning engine.
//
//   dart generate    [--config F] [--set k=v ...] [--trace out.jsonl] [--replay in.jsonl]
//   dart sweep       [--config F] [--set k=v ...] [--csv out.csv] [--heatmap out.svg]
//   dart detect      [--config F] [--set k=v ...] [--trajectory out.jsonl] [--replay in.jsonl]
//   dart cost        --dims llama70b --rho 0.7 [--json out.json] ...
//   dart plot        --trace in.jsonl | --trajectory in.jsonl | --sweep in.csv  --out prefix
//   dart synth-model [--config F] [--set k=v ...] --out model.bin
//
// Exit codes: 0 ok, 1 runtime/format error, 2 config error, 3 infeasible budget.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dart/config.hpp"
#include "dart/costmodel.hpp"
#include "dart/error.hpp"
#include "dart/harness.hpp"
#include "dart/plot.hpp"
#include "dart/trace.hpp"
#include "dart/weights_io.hpp"

namespace {

using dart::ConfigError;
using dart::RunConfig;

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "key = value config file");
    app->add_option("-s,--set", sets, "override one key (key=value); repeatable");
  }

  // File first, then DART_SEED, then explicit --set overrides.
  RunConfig resolve() const {
    RunConfig c = file.empty() ? RunConfig{} : dart::load_config_file(file);
    dart::apply_env_overrides(c);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      dart::set_config_value(c, dart::detail::trim(kv.substr(0, eq)), dart::detail::trim(kv.substr(eq + 1)));
    }
    c.validate();
    return c;
  }
};

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open output file: " + path);
  return os;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open input file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  auto os = open_out(path);
  os << content;
}

int cmd_generate(const ConfigFlags& flags, const std::string& trace_path, const std::string& replay) {
  RunConfig c;
  std::string original;
  if (!replay.empty()) {
    original = slurp(replay);
    std::istringstream is(original);
    c = dart::config_from_trace(dart::read_jsonl(is, replay));
    c.validate();
  } else {
    c = flags.resolve();
  }
  std::ostringstream trace;
  const auto res = dart::run_generate(c, &trace);
  if (!trace_path.empty()) write_file(trace_path, trace.str());
  nlohmann::ordered_json summary{{"seed", c.seed}};
  summary.update(res.summary());
  if (!replay.empty()) summary["replay_identical"] = trace.str() == original;
  std::cout << summary.dump(2) << '\n';
  return replay.empty() || trace.str() == original ? 0 : 1;
}

int cmd_sweep(const ConfigFlags& flags, const std::string& csv_path, const std::string& heatmap) {
  const RunConfig c = flags.resolve();
  const auto res = dart::run_layer_sweep(c);
  const std::string csv = res.csv();
  if (csv_path.empty())
    std::cout << csv;
  else
    write_file(csv_path, csv);
  if (!heatmap.empty()) {
    std::istringstream is(csv);
    write_file(heatmap, dart::plot::sweep_heatmap(is));
  }
  return 0;
}

int cmd_detect(const ConfigFlags& flags, const std::string& traj_path, const std::string& replay) {
  dart::DetectTrajectory t;
  if (!replay.empty()) {
    std::ifstream is(replay);
    if (!is) throw std::runtime_error("cannot open input file: " + replay);
    t = dart::read_trajectory(is, replay);
  } else {
    const auto res = dart::run_detector_bench(flags.resolve());
    t = res.trajectory;
  }
  if (!traj_path.empty()) {
    auto os = open_out(traj_path);
    dart::write_trajectory(os, t);
  }
  std::cout << dart::detect_metrics(t).to_json().dump(2) << '\n';
  return 0;
}

struct CostFlags {
  std::string dims = "llama70b";
  double rho = 0.7;
  std::string plan;
  std::uint32_t weight_bytes = 1;
  std::uint32_t act_bytes = 2;
  std::uint64_t tokens = 1;
  std::uint64_t context = 0;
  double anchor_gib = 0.0;
  std::string layout = "masked";
  std::string json_path;
  bool overhead = false;
};

int cmd_cost(const CostFlags& f) {
  dart::cost::CostParams p;
  p.dims = dart::cost::preset(f.dims);
  p.weight_bytes = f.weight_bytes;
  p.act_bytes = f.act_bytes;
  p.tokens = f.tokens;
  p.context_len = f.context;
  if (f.layout == "masked")
    p.layout = dart::cost::ActivationLayout::masked;
  else if (f.layout == "compacted")
    p.layout = dart::cost::ActivationLayout::compacted;
  else
    throw ConfigError("cost: --layout must be masked or compacted");
  p.validate();
  if (f.anchor_gib > 0.0) p.tokens = dart::cost::calibrate_tokens(p, f.anchor_gib * dart::cost::kGiB);
  std::vector<double> ratios;
  if (!f.plan.empty()) {
    ratios = dart::detail::parse_list<double>("plan", f.plan);
  } else {
    if (!(f.rho >= 0.0 && f.rho < 1.0)) throw ConfigError("cost: --rho must be in [0, 1)");
    ratios.assign(p.dims.num_layers, f.rho);
  }
  const auto cmp = dart::cost::report(p, ratios);
  std::cout << "dims=" << f.dims << " tokens=" << p.tokens << " layout=" << f.layout << '\n' << dart::cost::to_table(cmp);
  auto j = dart::cost::to_json(p, cmp);
  if (f.overhead) {
    const auto o = dart::cost::overhead(p.dims, dart::DriftParams{}, f.context);
    j["overhead"] = {{"tracing_flops_per_token", o.tracing_flops_per_token},
                     {"dense_flops_per_token", o.dense_flops_per_token},
                     {"ratio", o.ratio}};
    std::cout << "tracing overhead: " << o.ratio * 100.0 << "% of dense forward FLOPs\n";
  }
  if (!f.json_path.empty()) write_file(f.json_path, j.dump(2) + "\n");
  return 0;
}

int cmd_plot(const std::string& trace, const std::string& traj, const std::string& sweep, const std::string& out) {
  int made = 0;
  if (!trace.empty()) {
    std::ifstream is(trace);
    if (!is) throw std::runtime_error("cannot open input file: " + trace);
    const auto records = dart::read_jsonl(is, trace);
    write_file(out + "_alignment.svg", dart::plot::render(dart::plot::trajectory_from_trace(records)));
    write_file(out + "_density.svg", dart::plot::render(dart::plot::density_from_trace(records)));
    made += 2;
  }
  if (!traj.empty()) {
    std::ifstream is(traj);
    if (!is) throw std::runtime_error("cannot open input file: " + traj);
    const auto t = dart::read_trajectory(is, traj);
    write_file(out + "_detect.svg", dart::plot::render(dart::plot::trajectory_from_detect(t)));
    ++made;
  }
  if (!sweep.empty()) {
    std::ifstream is(sweep);
    if (!is) throw std::runtime_error("cannot open input file: " + sweep);
    write_file(out + "_sweep.svg", dart::plot::sweep_heatmap(is));
    ++made;
  }
  if (made == 0) throw ConfigError("plot: give at least one of --trace, --trajectory, --sweep");
  std::cout << "wrote " << made << " image(s) with prefix " << out << '\n';
  return 0;
}

int cmd_synth(const ConfigFlags& flags, const std::string& out) {
  const RunConfig c = flags.resolve();
  const auto w = dart::synth_model(c.seed, c.model);
  dart::save_weights(out, w);
  std::cout << "wrote " << out << " (" << dart::weight_file_size(c.model) << " bytes)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware FFN pruning on a toy GQA transformer"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, sweep_flags, detect_flags, synth_flags;
  std::string trace_out, gen_replay, csv_out, heatmap_out, traj_out, detect_replay;
  std::string plot_trace, plot_traj, plot_sweep, plot_out = "plot";
  std::string synth_out;
  CostFlags cost;

  auto* gen = app.add_subcommand("generate", "generate tokens with pruning and drift tracing");
  gen_flags.attach(gen);
  gen->add_option("--trace", trace_out, "write the JSONL trace here");
  gen->add_option("--replay", gen_replay, "rerun from a trace's config record and compare");

  auto* sweep = app.add_subcommand("sweep", "prune one layer at a time and measure divergence");
  sweep_flags.attach(sweep);
  sweep->add_option("--csv", csv_out, "CSV output (default stdout)");
  sweep->add_option("--heatmap", heatmap_out, "SVG heatmap output");

  auto* detect = app.add_subcommand("detect", "drift detector benchmark on synthetic streams");
  detect_flags.attach(detect);
  detect->add_option("--trajectory", traj_out, "write the alignment trajectory (JSONL)");
  detect->add_option("--replay", detect_replay, "recompute metrics from a trajectory file");

  auto* costc = app.add_subcommand("cost", "analytic FLOP / memory-traffic model");
  costc->add_option("--dims", cost.dims, "llama70b | llama8b | toy")->capture_default_str();
  costc->add_option("--rho", cost.rho, "uniform pruning ratio")->capture_default_str();
  costc->add_option("--plan", cost.plan, "per-layer pruning ratios, comma separated");
  costc->add_option("--weight-bytes", cost.weight_bytes, "bytes per weight (1, 2, 4)")->capture_default_str();
  costc->add_option("--act-bytes", cost.act_bytes, "bytes per activation (1, 2, 4)")->capture_default_str();
  costc->add_option("--tokens", cost.tokens, "tokens per measurement")->capture_default_str();
  costc->add_option("--context", cost.context, "cached tokens before the measured ones")->capture_default_str();
  costc->add_option("--calibrate", cost.anchor_gib, "solve tokens so dense MLP traffic equals this many GiB");
  costc->add_option("--layout", cost.layout, "masked | compacted")->capture_default_str();
  costc->add_option("--json", cost.json_path, "JSON output path");
  costc->add_flag("--overhead", cost.overhead, "also report tracing overhead");

  auto* plot = app.add_subcommand("plot", "render SVG figures from traces and sweep tables");
  plot->add_option("--trace", plot_trace, "generation trace (JSONL)");
  plot->add_option("--trajectory", plot_traj, "detector trajectory (JSONL)");
  plot->add_option("--sweep", plot_sweep, "sweep CSV");
  plot->add_option("-o,--out", plot_out, "output file prefix")->capture_default_str();

  auto* synth = app.add_subcommand("synth-model", "write seeded synthetic weights");
  synth_flags.attach(synth);
  synth->add_option("-o,--out", synth_out, "weight file path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) return cmd_generate(gen_flags, trace_out, gen_replay);
    if (*sweep) return cmd_sweep(sweep_flags, csv_out, heatmap_out);
    if (*detect) return cmd_detect(detect_flags, traj_out, detect_replay);
    if (*costc) return cmd_cost(cost);
    if (*plot) return cmd_plot(plot_trace, plot_traj, plot_sweep, plot_out);
    if (*synth) return cmd_synth(synth_flags, synth_out);
  } catch (const dart::InfeasibleBudget& e) {
    std::cerr << "infeasible budget: " << e.what() << '\n';
    return 3;
  } catch (const dart::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
