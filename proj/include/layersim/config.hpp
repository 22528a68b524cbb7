#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "layersim/engine.hpp"
#include "layersim/workload.hpp"

namespace layersim {

// Minimal INI-style reader: [section] headers, key = value lines, '#' or ';'
// comments. Values are numbers, booleans, or (optionally quoted) strings.
// Accessed keys are tracked so unknown keys can be reported.
class IniFile {
 public:
  static IniFile parse_file(const std::string& path);
  static IniFile parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  // Throws ConfigError naming any key that was never read.
  void check_all_consumed() const;

 private:
  std::string origin_;
  std::map<std::string, std::map<std::string, std::string>> values_;
  mutable std::set<std::string> consumed_;

  const std::string* find(const std::string& section, const std::string& key) const;
};

struct WorkloadConfig {
  enum class Kind { Fixed, ShareGpt, TraceFile };
  Kind kind = Kind::Fixed;
  int n = 100;
  int prompt_tokens = 512;
  int output_tokens = 128;
  double rate = 1.0;
  std::string path;  // trace kind only
  ShareGptParams sharegpt;
};

// Architecture constants for a named preset (llama2-7b, yi-34b-gqa,
// llama3.1-70b-gqa); values follow the public model cards, see README.
ModelSpec model_preset(const std::string& name);

// Single 48 GB accelerator with a 32 GB/s host link.
HardwareSpec default_hardware();

struct ScenarioConfig {
  ModelSpec model = model_preset("llama2-7b");
  HardwareSpec hw = default_hardware();
  CostParams cost;
  SLOSpec slo;
  Policy policy;
  SchedulerConfig scheduler;
  PoolSizing sizing;
  WorkloadConfig workload;
  std::int64_t max_batch_tokens = 131072;
  double max_sim_time = 86400.0;
  double chunk_bytes = 16.0 * 1024 * 1024;
  int force_retained_layers = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = "out";

  static ScenarioConfig from_file(const std::string& path);
  static ScenarioConfig from_ini(const IniFile& ini);

  // Every resolved value, re-parseable by from_file (exact round-trip).
  std::string effective_config_text() const;

  Trace make_trace(bool* warned_unsorted = nullptr) const;
  EngineConfig engine_config() const;  // sizes the pools; throws ConfigError
};

}  // namespace layersim
