#include "layersim/config.hpp"

#include "doctest.h"
#include "layersim/errors.hpp"

using namespace layersim;

namespace {

const char* kMinimal =
    "[model]\n"
    "preset = llama2-7b\n"
    "[workload]\n"
    "kind = fixed\n"
    "n = 10\n"
    "prompt_tokens = 128\n"
    "output_tokens = 8\n"
    "rate = 1.0\n"
    "[run]\n"
    "seed = 42\n";

}  // namespace

TEST_CASE("minimal config resolves presets and defaults") {
  ScenarioConfig cfg = ScenarioConfig::from_ini(IniFile::parse_string(kMinimal));
  CHECK(cfg.model.n_layers == 32);
  CHECK(cfg.model.n_param == 7.0e9);
  CHECK(cfg.hw.flops == 1.0e14);
  CHECK(cfg.cost.alpha == 1.0);
  CHECK(cfg.cost.delta == 0.5);
  CHECK(cfg.slo.ttft_slo == 3.0);
  CHECK(cfg.slo.tpot_slo == 0.2);
  CHECK(cfg.scheduler.threshold_fraction == 0.05);
  CHECK(cfg.scheduler.horizon == 8);
  CHECK(cfg.scheduler.predictor_accuracy == 0.8);
  CHECK(cfg.sizing.tokens_per_block == 16);
  CHECK(cfg.policy.kind == PolicyKind::LayerKv);
  CHECK(cfg.policy.slo_scheduler_enabled);
  CHECK(cfg.seed == 42);
}

TEST_CASE("preset constants for the GQA models") {
  ModelSpec yi = model_preset("yi-34b-gqa");
  CHECK(yi.n_layers == 60);
  CHECK(yi.n_kv_heads == 8);
  CHECK(kv_bytes_per_token_layer(yi) == 4096);
  ModelSpec llama70 = model_preset("llama3.1-70b-gqa");
  CHECK(llama70.n_layers == 80);
  CHECK(kv_bytes_per_token_layer(llama70) == 4096);
}

TEST_CASE("unknown presets and keys are config errors naming the offender") {
  CHECK_THROWS_WITH_AS(model_preset("llama9-13b"), doctest::Contains("llama9-13b"),
                       ConfigError);
  std::string text = std::string(kMinimal) + "[model]\nn_layrs = 32\n";
  CHECK_THROWS_WITH_AS(ScenarioConfig::from_ini(IniFile::parse_string(text)),
                       doctest::Contains("n_layrs"), ConfigError);
}

TEST_CASE("stochastic workloads demand a seed") {
  std::string text =
      "[workload]\n"
      "kind = sharegpt\n"
      "n = 10\n"
      "rate = 1.0\n";
  CHECK_THROWS_WITH_AS(ScenarioConfig::from_ini(IniFile::parse_string(text)),
                       doctest::Contains("seed"), ConfigError);
}

TEST_CASE("field overrides win over the preset") {
  std::string text = std::string(kMinimal) + "[model]\nn_param = 6.74e9\n";
  ScenarioConfig cfg = ScenarioConfig::from_ini(IniFile::parse_string(text));
  CHECK(cfg.model.n_param == 6.74e9);
  CHECK(cfg.model.n_layers == 32);  // preset value kept
}

TEST_CASE("effective config text parses back to the same configuration") {
  ScenarioConfig cfg = ScenarioConfig::from_ini(IniFile::parse_string(kMinimal));
  std::string text = cfg.effective_config_text();
  ScenarioConfig back = ScenarioConfig::from_ini(IniFile::parse_string(text));
  CHECK(back.effective_config_text() == text);
  // And it runs to an identical trace.
  Trace a = cfg.make_trace();
  Trace b = back.make_trace();
  REQUIRE(a.requests.size() == b.requests.size());
  for (std::size_t i = 0; i < a.requests.size(); ++i) {
    CHECK(a.requests[i].arrival == b.requests[i].arrival);
  }
}

TEST_CASE("engine_config sizes the pools from the hardware") {
  ScenarioConfig cfg = ScenarioConfig::from_ini(IniFile::parse_string(kMinimal));
  EngineConfig ecfg = cfg.engine_config();
  CHECK(ecfg.pools.gpu_blocks_total == 113043);
  CHECK(ecfg.pools.cpu_blocks_total == 113043 * 8);
  CHECK(ecfg.pools.tokens_per_block == 16);
}

TEST_CASE("malformed values carry section and key in the diagnostic") {
  std::string text = std::string(kMinimal) + "[hardware]\nflops = fast\n";
  CHECK_THROWS_WITH_AS(ScenarioConfig::from_ini(IniFile::parse_string(text)),
                       doctest::Contains("flops"), ConfigError);
}
