#include "layersim/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "layersim/errors.hpp"

namespace layersim {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string exact_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

IniFile IniFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

IniFile IniFile::parse_string(const std::string& text, const std::string& origin) {
  IniFile ini;
  ini.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    ini.values_[section][key] = value;
  }
  return ini;
}

const std::string* IniFile::find(const std::string& section, const std::string& key) const {
  auto s = values_.find(section);
  if (s == values_.end()) return nullptr;
  auto k = s->second.find(key);
  if (k == s->second.end()) return nullptr;
  consumed_.insert(section + "." + key);
  return &k->second;
}

bool IniFile::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string IniFile::get_string(const std::string& section, const std::string& key,
                                const std::string& fallback) const {
  const std::string* v = find(section, key);
  return v ? *v : fallback;
}

double IniFile::get_double(const std::string& section, const std::string& key,
                           double fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    double d = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": [" + section + "] " + key + " = '" + *v +
                      "' is not a number");
  }
}

std::int64_t IniFile::get_int(const std::string& section, const std::string& key,
                              std::int64_t fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    // Scientific notation is accepted for large counts (e.g. 7e9).
    double d = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::int64_t>(d);
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": [" + section + "] " + key + " = '" + *v +
                      "' is not an integer");
  }
}

bool IniFile::get_bool(const std::string& section, const std::string& key,
                       bool fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw ConfigError(origin_ + ": [" + section + "] " + key + " = '" + *v +
                    "' is not a boolean");
}

void IniFile::check_all_consumed() const {
  std::string unknown;
  for (const auto& [section, keys] : values_) {
    for (const auto& [key, value] : keys) {
      std::string id = section + "." + key;
      if (!consumed_.count(id)) unknown += (unknown.empty() ? "" : ", ") + id;
    }
  }
  if (!unknown.empty()) {
    throw ConfigError(origin_ + ": unknown config keys: " + unknown);
  }
}

ModelSpec model_preset(const std::string& name) {
  ModelSpec m;
  if (name == "llama2-7b") {
    m = {32, 32, 32, 128, 4096, 7.0e9, 2};
  } else if (name == "yi-34b-gqa") {
    m = {60, 56, 8, 128, 7168, 34.4e9, 2};
  } else if (name == "llama3.1-70b-gqa") {
    m = {80, 64, 8, 128, 8192, 70.6e9, 2};
  } else {
    throw ConfigError("unknown model preset '" + name + "'");
  }
  m.validate();
  return m;
}

HardwareSpec default_hardware() {
  HardwareSpec hw;
  hw.flops = 1.0e14;
  hw.hbm_bandwidth = 8.64e11;
  hw.pcie_bandwidth = 3.2e10;
  hw.nvlink = false;
  hw.n_gpus = 1;
  hw.gpu_mem = 48e9;
  hw.kv_reserve_fraction = 0.9;
  return hw;
}

ScenarioConfig ScenarioConfig::from_file(const std::string& path) {
  return from_ini(IniFile::parse_file(path));
}

ScenarioConfig ScenarioConfig::from_ini(const IniFile& ini) {
  ScenarioConfig c;

  if (ini.has("model", "preset")) {
    c.model = model_preset(ini.get_string("model", "preset", ""));
  }
  c.model.n_layers = static_cast<int>(ini.get_int("model", "n_layers", c.model.n_layers));
  c.model.n_heads = static_cast<int>(ini.get_int("model", "n_heads", c.model.n_heads));
  c.model.n_kv_heads = static_cast<int>(ini.get_int("model", "n_kv_heads", c.model.n_kv_heads));
  c.model.d_head = static_cast<int>(ini.get_int("model", "d_head", c.model.d_head));
  c.model.hidden = ini.get_int("model", "hidden", c.model.hidden);
  c.model.n_param = ini.get_double("model", "n_param", c.model.n_param);
  c.model.f_precision = static_cast<int>(ini.get_int("model", "f_precision", c.model.f_precision));

  c.hw.flops = ini.get_double("hardware", "flops", c.hw.flops);
  c.hw.hbm_bandwidth = ini.get_double("hardware", "hbm_bandwidth", c.hw.hbm_bandwidth);
  c.hw.pcie_bandwidth = ini.get_double("hardware", "pcie_bandwidth", c.hw.pcie_bandwidth);
  c.hw.nvlink = ini.get_bool("hardware", "nvlink", c.hw.nvlink);
  c.hw.n_gpus = static_cast<int>(ini.get_int("hardware", "n_gpus", c.hw.n_gpus));
  c.hw.gpu_mem = ini.get_double("hardware", "gpu_mem", c.hw.gpu_mem);
  c.hw.kv_reserve_fraction =
      ini.get_double("hardware", "kv_reserve_fraction", c.hw.kv_reserve_fraction);

  c.cost.alpha = ini.get_double("cost", "alpha", c.cost.alpha);
  c.cost.beta = ini.get_double("cost", "beta", c.cost.beta);
  c.cost.gamma = ini.get_double("cost", "gamma", c.cost.gamma);
  c.cost.delta = ini.get_double("cost", "delta", c.cost.delta);

  c.slo.ttft_slo = ini.get_double("slo", "ttft_slo", c.slo.ttft_slo);
  c.slo.tpot_slo = ini.get_double("slo", "tpot_slo", c.slo.tpot_slo);

  std::string policy = ini.get_string("policy", "name", "layerkv");
  if (policy == "baseline") {
    c.policy.kind = PolicyKind::BaselineRequestWise;
  } else if (policy == "layerkv") {
    c.policy.kind = PolicyKind::LayerKv;
  } else {
    throw ConfigError("unknown policy '" + policy + "' (expected baseline or layerkv)");
  }
  c.policy.slo_scheduler_enabled =
      ini.get_bool("policy", "slo_scheduler", c.policy.slo_scheduler_enabled);
  c.force_retained_layers = static_cast<int>(
      ini.get_int("policy", "force_retained_layers", c.force_retained_layers));

  c.scheduler.threshold_fraction =
      ini.get_double("scheduler", "threshold_fraction", c.scheduler.threshold_fraction);
  c.scheduler.horizon = static_cast<int>(ini.get_int("scheduler", "horizon", c.scheduler.horizon));
  c.scheduler.predictor_accuracy =
      ini.get_double("scheduler", "predictor_accuracy", c.scheduler.predictor_accuracy);

  c.sizing.max_input_tokens = ini.get_int("kv", "max_input_tokens", c.sizing.max_input_tokens);
  c.sizing.tokens_per_block =
      static_cast<int>(ini.get_int("kv", "tokens_per_block", c.sizing.tokens_per_block));
  c.sizing.activation_layers_factor =
      ini.get_double("kv", "activation_layers_factor", c.sizing.activation_layers_factor);
  c.sizing.cpu_pool_multiple =
      ini.get_double("kv", "cpu_pool_multiple", c.sizing.cpu_pool_multiple);

  c.max_batch_tokens = ini.get_int("engine", "max_batch_tokens", c.max_batch_tokens);
  c.max_sim_time = ini.get_double("engine", "max_sim_time", c.max_sim_time);
  c.chunk_bytes = ini.get_double("engine", "chunk_bytes", c.chunk_bytes);

  std::string kind = ini.get_string("workload", "kind", "fixed");
  if (kind == "fixed") {
    c.workload.kind = WorkloadConfig::Kind::Fixed;
  } else if (kind == "sharegpt") {
    c.workload.kind = WorkloadConfig::Kind::ShareGpt;
  } else if (kind == "trace") {
    c.workload.kind = WorkloadConfig::Kind::TraceFile;
  } else {
    throw ConfigError("unknown workload kind '" + kind + "'");
  }
  c.workload.n = static_cast<int>(ini.get_int("workload", "n", c.workload.n));
  c.workload.prompt_tokens =
      static_cast<int>(ini.get_int("workload", "prompt_tokens", c.workload.prompt_tokens));
  c.workload.output_tokens =
      static_cast<int>(ini.get_int("workload", "output_tokens", c.workload.output_tokens));
  c.workload.rate = ini.get_double("workload", "rate", c.workload.rate);
  c.workload.path = ini.get_string("workload", "path", c.workload.path);
  c.workload.sharegpt.mu = ini.get_double("workload", "sharegpt_mu", c.workload.sharegpt.mu);
  c.workload.sharegpt.sigma =
      ini.get_double("workload", "sharegpt_sigma", c.workload.sharegpt.sigma);
  c.workload.sharegpt.min_len =
      static_cast<int>(ini.get_int("workload", "sharegpt_min_len", c.workload.sharegpt.min_len));
  c.workload.sharegpt.max_len =
      static_cast<int>(ini.get_int("workload", "sharegpt_max_len", c.workload.sharegpt.max_len));

  c.seed_set = ini.has("run", "seed");
  c.seed = static_cast<std::uint64_t>(ini.get_int("run", "seed", 0));
  c.out_dir = ini.get_string("run", "out_dir", c.out_dir);

  ini.check_all_consumed();

  c.model.validate();
  c.hw.validate();
  c.cost.validate();
  c.slo.validate();
  if (c.workload.kind != WorkloadConfig::Kind::TraceFile && !c.seed_set) {
    throw ConfigError("stochastic workloads require [run] seed");
  }
  if (c.workload.kind == WorkloadConfig::Kind::TraceFile && c.workload.path.empty()) {
    throw ConfigError("[workload] kind = trace requires path");
  }
  return c;
}

std::string ScenarioConfig::effective_config_text() const {
  std::ostringstream os;
  os << "[model]\n";
  os << "n_layers = " << model.n_layers << "\n";
  os << "n_heads = " << model.n_heads << "\n";
  os << "n_kv_heads = " << model.n_kv_heads << "\n";
  os << "d_head = " << model.d_head << "\n";
  os << "hidden = " << model.hidden << "\n";
  os << "n_param = " << exact_double(model.n_param) << "\n";
  os << "f_precision = " << model.f_precision << "\n";
  os << "\n[hardware]\n";
  os << "flops = " << exact_double(hw.flops) << "\n";
  os << "hbm_bandwidth = " << exact_double(hw.hbm_bandwidth) << "\n";
  os << "pcie_bandwidth = " << exact_double(hw.pcie_bandwidth) << "\n";
  os << "nvlink = " << (hw.nvlink ? "true" : "false") << "\n";
  os << "n_gpus = " << hw.n_gpus << "\n";
  os << "gpu_mem = " << exact_double(hw.gpu_mem) << "\n";
  os << "kv_reserve_fraction = " << exact_double(hw.kv_reserve_fraction) << "\n";
  os << "\n[cost]\n";
  os << "alpha = " << exact_double(cost.alpha) << "\n";
  os << "beta = " << exact_double(cost.beta) << "\n";
  os << "gamma = " << exact_double(cost.gamma) << "\n";
  os << "delta = " << exact_double(cost.delta) << "\n";
  os << "\n[slo]\n";
  os << "ttft_slo = " << exact_double(slo.ttft_slo) << "\n";
  os << "tpot_slo = " << exact_double(slo.tpot_slo) << "\n";
  os << "\n[policy]\n";
  os << "name = " << (policy.kind == PolicyKind::BaselineRequestWise ? "baseline" : "layerkv")
     << "\n";
  os << "slo_scheduler = " << (policy.slo_scheduler_enabled ? "true" : "false") << "\n";
  os << "force_retained_layers = " << force_retained_layers << "\n";
  os << "\n[scheduler]\n";
  os << "threshold_fraction = " << exact_double(scheduler.threshold_fraction) << "\n";
  os << "horizon = " << scheduler.horizon << "\n";
  os << "predictor_accuracy = " << exact_double(scheduler.predictor_accuracy) << "\n";
  os << "\n[kv]\n";
  os << "max_input_tokens = " << sizing.max_input_tokens << "\n";
  os << "tokens_per_block = " << sizing.tokens_per_block << "\n";
  os << "activation_layers_factor = " << exact_double(sizing.activation_layers_factor) << "\n";
  os << "cpu_pool_multiple = " << exact_double(sizing.cpu_pool_multiple) << "\n";
  os << "\n[engine]\n";
  os << "max_batch_tokens = " << max_batch_tokens << "\n";
  os << "max_sim_time = " << exact_double(max_sim_time) << "\n";
  os << "chunk_bytes = " << exact_double(chunk_bytes) << "\n";
  os << "\n[workload]\n";
  switch (workload.kind) {
    case WorkloadConfig::Kind::Fixed:
      os << "kind = fixed\n";
      break;
    case WorkloadConfig::Kind::ShareGpt:
      os << "kind = sharegpt\n";
      break;
    case WorkloadConfig::Kind::TraceFile:
      os << "kind = trace\n";
      break;
  }
  os << "n = " << workload.n << "\n";
  os << "prompt_tokens = " << workload.prompt_tokens << "\n";
  os << "output_tokens = " << workload.output_tokens << "\n";
  os << "rate = " << exact_double(workload.rate) << "\n";
  if (!workload.path.empty()) os << "path = \"" << workload.path << "\"\n";
  os << "sharegpt_mu = " << exact_double(workload.sharegpt.mu) << "\n";
  os << "sharegpt_sigma = " << exact_double(workload.sharegpt.sigma) << "\n";
  os << "sharegpt_min_len = " << workload.sharegpt.min_len << "\n";
  os << "sharegpt_max_len = " << workload.sharegpt.max_len << "\n";
  os << "\n[run]\n";
  os << "seed = " << seed << "\n";
  os << "out_dir = \"" << out_dir << "\"\n";
  return os.str();
}

Trace ScenarioConfig::make_trace(bool* warned_unsorted) const {
  switch (workload.kind) {
    case WorkloadConfig::Kind::Fixed:
      return generate_fixed(workload.n, workload.prompt_tokens, workload.output_tokens,
                            workload.rate, seed);
    case WorkloadConfig::Kind::ShareGpt:
      return generate_sharegpt_like(workload.n, workload.rate, seed, workload.sharegpt);
    case WorkloadConfig::Kind::TraceFile:
      return load_trace(workload.path, warned_unsorted);
  }
  throw ConfigError("unreachable workload kind");
}

EngineConfig ScenarioConfig::engine_config() const {
  EngineConfig e;
  e.model = model;
  e.hw = hw;
  e.cost = cost;
  e.slo = slo;
  e.policy = policy;
  e.pools = pool_size_from_hardware(model, hw, sizing);
  e.scheduler = scheduler;
  e.max_batch_tokens = max_batch_tokens;
  e.max_sim_time = max_sim_time;
  e.chunk_bytes = chunk_bytes;
  e.seed = seed;
  e.force_retained_layers = force_retained_layers;
  return e;
}

}  // namespace layersim
