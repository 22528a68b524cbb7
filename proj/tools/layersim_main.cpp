#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "layersim/config.hpp"
#include "layersim/engine.hpp"
#include "layersim/errors.hpp"

namespace fs = std::filesystem;
using namespace layersim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSimulation = 3;

struct CommonOpts {
  std::string config_path;
  std::string policy_override;
  bool no_slo_scheduler = false;
  std::int64_t seed_override = -1;
  std::string out_override;
  bool transfer_log = false;
  bool decision_log = false;
  bool emit_effective = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "scenario config file")->required();
  cmd->add_option("--policy", opts.policy_override, "baseline or layerkv")
      ->check(CLI::IsMember({"baseline", "layerkv"}));
  cmd->add_flag("--no-slo-scheduler", opts.no_slo_scheduler,
                "disable the SLO-aware admission logic (layerkv ablation)");
  cmd->add_option("--seed", opts.seed_override, "override [run] seed");
  cmd->add_option("--out", opts.out_override, "override [run] out_dir");
  cmd->add_flag("--transfer-log", opts.transfer_log, "write transfer_log.csv");
  cmd->add_flag("--decision-log", opts.decision_log, "write decision_log.csv");
  cmd->add_flag("--emit-effective-config", opts.emit_effective,
                "print the fully resolved config and exit");
}

ScenarioConfig load_scenario(const CommonOpts& opts) {
  ScenarioConfig cfg = ScenarioConfig::from_file(opts.config_path);
  if (!opts.policy_override.empty()) {
    cfg.policy.kind = opts.policy_override == "baseline" ? PolicyKind::BaselineRequestWise
                                                         : PolicyKind::LayerKv;
  }
  if (opts.no_slo_scheduler) cfg.policy.slo_scheduler_enabled = false;
  if (opts.seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(opts.seed_override);
    cfg.seed_set = true;
  }
  if (!opts.out_override.empty()) cfg.out_dir = opts.out_override;
  return cfg;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw SimulationError("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

std::string summary_header() {
  return "policy,slo_scheduler,requests,mean_ttft_s,p50_ttft_s,p99_ttft_s,mean_tpot_s,"
         "mean_queuing_s,mean_prefill_s,queuing_fraction,throughput_tokens_per_s,"
         "violation_rate,violations_ttft,violations_tpot,completed\n";
}

std::string summary_row(const ScenarioConfig& cfg, const MetricsReport& rep) {
  std::ostringstream os;
  os << (cfg.policy.kind == PolicyKind::BaselineRequestWise ? "baseline" : "layerkv") << ','
     << (cfg.policy.slo_scheduler_enabled ? 1 : 0) << ',' << rep.per_request.size() << ','
     << format_double(rep.mean_ttft) << ',' << format_double(rep.p50_ttft) << ','
     << format_double(rep.p99_ttft) << ',' << format_double(rep.mean_tpot) << ','
     << format_double(rep.mean_queuing) << ',' << format_double(rep.mean_prefill) << ','
     << format_double(rep.queuing_fraction) << ','
     << format_double(rep.throughput_tokens_per_s) << ','
     << format_double(rep.violation_rate) << ',' << rep.violations_ttft << ','
     << rep.violations_tpot << ',' << (rep.completed ? 1 : 0) << "\n";
  return os.str();
}

void write_logs(const ScenarioConfig& cfg, const Engine& engine, const fs::path& dir,
                const CommonOpts& opts) {
  if (opts.transfer_log) {
    std::ostringstream os;
    os << "submit_s,start_s,end_s,bytes,direction,deferrals\n";
    for (const auto& row : engine.transfer_log()) {
      os << format_double(row.submit) << ',' << format_double(row.start) << ','
         << format_double(row.end) << ',' << format_double(row.bytes) << ','
         << (row.direction == Direction::DeviceToHost ? "d2h" : "h2d") << ','
         << row.deferrals << "\n";
    }
    write_file_atomic(dir / "transfer_log.csv", os.str());
  }
  if (opts.decision_log) {
    std::ostringstream os;
    os << "time_s,min_budget_s,admitted,offload_plan\n";
    for (const auto& row : engine.decision_log()) {
      const char* plan = row.plan == OffloadPlanKind::None
                             ? "none"
                             : (row.plan == OffloadPlanKind::Half ? "half" : "full");
      os << format_double(row.time) << ',' << format_double(row.min_budget) << ','
         << row.admitted << ',' << plan << "\n";
    }
    write_file_atomic(dir / "decision_log.csv", os.str());
  }
  (void)cfg;
}

MetricsReport run_engine(const ScenarioConfig& cfg, const Trace& trace,
                         const CommonOpts& opts, const fs::path& dir) {
  EngineConfig ecfg = cfg.engine_config();
  ecfg.keep_transfer_log = opts.transfer_log;
  ecfg.keep_decision_log = opts.decision_log;
  Engine engine(ecfg, trace);
  MetricsReport rep = engine.run();
  fs::create_directories(dir);
  rep.write_requests_csv((dir / "requests.csv").string());
  write_file_atomic(dir / "summary.json", rep.to_json() + "\n");
  write_logs(cfg, engine, dir, opts);
  return rep;
}

int cmd_run(const CommonOpts& opts) {
  ScenarioConfig cfg = load_scenario(opts);
  if (opts.emit_effective) {
    std::cout << cfg.effective_config_text();
    return kExitOk;
  }
  bool warned = false;
  Trace trace = cfg.make_trace(&warned);
  if (warned) {
    std::cerr << "warning: trace records were out of arrival order; sorted on load\n";
  }
  fs::path dir(cfg.out_dir);
  MetricsReport rep = run_engine(cfg, trace, opts, dir);
  write_file_atomic(dir / "summary.csv", summary_header() + summary_row(cfg, rep));
  write_file_atomic(dir / "effective_config", cfg.effective_config_text());
  std::cout << rep.to_json() << "\n";
  if (!rep.completed) {
    std::cerr << "error: simulation hit the wall-clock cap before finishing\n";
    return kExitSimulation;
  }
  return kExitOk;
}

int cmd_sweep(const CommonOpts& opts, const std::string& axis,
              const std::vector<double>& values) {
  if (values.empty()) {
    std::cerr << "error: sweep requires a non-empty --values list\n";
    return kExitConfig;
  }
  ScenarioConfig base = load_scenario(opts);
  if (opts.emit_effective) {
    std::cout << base.effective_config_text();
    return kExitOk;
  }
  if (axis == "context_length" && base.workload.kind != WorkloadConfig::Kind::Fixed) {
    throw ConfigError("context_length sweeps require a fixed workload");
  }
  fs::path dir(base.out_dir);
  fs::create_directories(dir);
  std::ostringstream merged;
  merged << "axis,value,status," << summary_header().substr(0, summary_header().size());
  bool any_failed = false;
  for (double v : values) {
    ScenarioConfig cfg = base;
    if (axis == "context_length") {
      cfg.workload.prompt_tokens = static_cast<int>(v);
    } else if (axis == "arrival_rate") {
      cfg.workload.rate = v;
    } else {  // dop
      cfg.hw.n_gpus = static_cast<int>(v);
    }
    std::ostringstream point_name;
    point_name << "point_" << axis << "_" << format_double(v);
    fs::path point_dir = dir / point_name.str();
    try {
      Trace trace = cfg.make_trace();
      MetricsReport rep = run_engine(cfg, trace, opts, point_dir);
      merged << axis << ',' << format_double(v) << ",ok,"
             << summary_row(cfg, rep);
      if (!rep.completed) any_failed = true;
    } catch (const std::exception& e) {
      std::cerr << "point " << axis << "=" << format_double(v) << " failed: " << e.what()
                << "\n";
      merged << axis << ',' << format_double(v) << ",error,\n";
      any_failed = true;
    }
  }
  write_file_atomic(dir / "summary.csv", merged.str());
  std::cout << "sweep summary written to " << (dir / "summary.csv").string() << "\n";
  return any_failed ? kExitSimulation : kExitOk;
}

int cmd_compare(const CommonOpts& opts) {
  ScenarioConfig base = load_scenario(opts);
  if (opts.emit_effective) {
    std::cout << base.effective_config_text();
    return kExitOk;
  }
  Trace trace = base.make_trace();  // one trace, shared by all three policies
  fs::path dir(base.out_dir);
  fs::create_directories(dir);

  struct Variant {
    const char* name;
    PolicyKind kind;
    bool slo;
  };
  const Variant variants[] = {
      {"baseline", PolicyKind::BaselineRequestWise, true},
      {"layerkv", PolicyKind::LayerKv, true},
      {"layerkv_no_slo", PolicyKind::LayerKv, false},
  };
  std::vector<MetricsReport> reports;
  for (const auto& v : variants) {
    ScenarioConfig cfg = base;
    cfg.policy.kind = v.kind;
    cfg.policy.slo_scheduler_enabled = v.slo;
    reports.push_back(run_engine(cfg, trace, opts, dir / v.name));
  }

  const MetricsReport& ref = reports[0];
  auto ratio = [](double a, double b) { return b != 0.0 ? a / b : 0.0; };
  std::ostringstream os;
  os << "variant,mean_ttft_s,p99_ttft_s,mean_tpot_s,throughput_tokens_per_s,"
        "violation_rate,ttft_ratio_vs_baseline,p99_ratio_vs_baseline,"
        "throughput_ratio_vs_baseline\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const MetricsReport& r = reports[i];
    os << variants[i].name << ',' << format_double(r.mean_ttft) << ','
       << format_double(r.p99_ttft) << ',' << format_double(r.mean_tpot) << ','
       << format_double(r.throughput_tokens_per_s) << ','
       << format_double(r.violation_rate) << ',' << format_double(ratio(r.mean_ttft, ref.mean_ttft))
       << ',' << format_double(ratio(r.p99_ttft, ref.p99_ttft)) << ','
       << format_double(ratio(r.throughput_tokens_per_s, ref.throughput_tokens_per_s)) << "\n";
  }
  write_file_atomic(dir / "summary.csv", os.str());
  std::cout << os.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layersim: discrete-event simulator of an LLM serving engine with "
               "layer-wise KV offloading and SLO-aware admission"};
  app.require_subcommand(1);

  CommonOpts run_opts, sweep_opts, compare_opts;
  std::string axis;
  std::vector<double> values;

  CLI::App* run = app.add_subcommand("run", "run one scenario");
  add_common(run, run_opts);

  CLI::App* sweep = app.add_subcommand("sweep", "run one scenario across an axis");
  add_common(sweep, sweep_opts);
  sweep->add_option("--axis", axis, "context_length, arrival_rate, or dop")
      ->required()
      ->check(CLI::IsMember({"context_length", "arrival_rate", "dop"}));
  sweep->add_option("--values", values, "axis values")->required()->delimiter(',');

  CLI::App* compare = app.add_subcommand("compare",
                                         "baseline vs layerkv vs layerkv without the "
                                         "SLO scheduler on one trace");
  add_common(compare, compare_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(run_opts);
    if (sweep->parsed()) return cmd_sweep(sweep_opts, axis, values);
    if (compare->parsed()) return cmd_compare(compare_opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SimulationError& e) {
    std::cerr << "simulation error: " << e.what() << "\n";
    return kExitSimulation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSimulation;
  }
  return kExitOk;
}
