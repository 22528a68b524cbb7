#include "layersim/cost_model.hpp"

#include <stdexcept>

#include "doctest.h"
#include "layersim/rng.hpp"

using namespace layersim;

namespace {

ModelSpec llama7b() { return {32, 32, 32, 128, 4096, 7.0e9, 2}; }

HardwareSpec hw_1e14_pcie32() {
  HardwareSpec hw;
  hw.flops = 1.0e14;
  hw.hbm_bandwidth = 8.64e11;
  hw.pcie_bandwidth = 3.2e10;
  hw.n_gpus = 1;
  hw.gpu_mem = 48e9;
  return hw;
}

ModelSpec random_model(Rng& rng) {
  ModelSpec m;
  m.n_layers = 8 + static_cast<int>(rng.uniform_below(80));
  m.n_heads = 8 + static_cast<int>(rng.uniform_below(56));
  m.n_kv_heads = 1 + static_cast<int>(rng.uniform_below(m.n_heads));
  m.d_head = 64 << rng.uniform_below(2);
  m.hidden = static_cast<std::int64_t>(m.n_heads) * m.d_head;
  m.n_param = 1e9 * (1 + rng.uniform_below(70));
  m.f_precision = 2;
  return m;
}

HardwareSpec random_hw(Rng& rng) {
  HardwareSpec hw = hw_1e14_pcie32();
  hw.flops = 5e13 * (1 + rng.uniform_below(8));
  hw.pcie_bandwidth = 2e9 * (1 + rng.uniform_below(32));
  return hw;
}

}  // namespace

TEST_CASE("prefill_time matches the analytical formula") {
  ModelSpec m = llama7b();
  HardwareSpec hw = hw_1e14_pcie32();
  CostParams p;

  CHECK(prefill_time(m, hw, p, 0) == 0.0);
  // Hand evaluation: seqlen * (2*n_param + 2*seqlen*hidden) / flops.
  double expect_2048 = 2048.0 * (2.0 * 7e9 + 2.0 * 2048.0 * 4096.0) / 1e14;
  CHECK(prefill_time(m, hw, p, 2048) == doctest::Approx(expect_2048).epsilon(1e-12));
  CHECK(prefill_time(m, hw, p, 2048) == doctest::Approx(0.2871).epsilon(1e-3));
  double expect_128 = 128.0 * (2.0 * 7e9 + 2.0 * 128.0 * 4096.0) / 1e14;
  CHECK(prefill_time(m, hw, p, 128) == doctest::Approx(expect_128).epsilon(1e-12));
  CHECK(prefill_time(m, hw, p, 128) == doctest::Approx(0.01792).epsilon(1e-3));

  // alpha scales linearly; n_gpus divides.
  CostParams p2;
  p2.alpha = 2.0;
  CHECK(prefill_time(m, hw, p2, 2048) == doctest::Approx(2.0 * expect_2048));
  HardwareSpec hw4 = hw;
  hw4.n_gpus = 4;
  CHECK(prefill_time(m, hw4, p, 2048) == doctest::Approx(expect_2048 / 4.0));
}

TEST_CASE("prefill_time is superlinear in sequence length") {
  Rng rng(7);
  CostParams p;
  for (int i = 0; i < 50; ++i) {
    ModelSpec m = random_model(rng);
    HardwareSpec hw = random_hw(rng);
    std::int64_t s = 1 + static_cast<std::int64_t>(rng.uniform_below(8192));
    CHECK(prefill_time(m, hw, p, 2 * s) > 2.0 * prefill_time(m, hw, p, s));
  }
}

TEST_CASE("kv_bytes_per_token_layer") {
  CHECK(kv_bytes_per_token_layer(llama7b()) == 16384);
  ModelSpec gqa = {60, 56, 8, 128, 7168, 34.4e9, 2};
  CHECK(kv_bytes_per_token_layer(gqa) == 4096);
  ModelSpec bad = llama7b();
  bad.f_precision = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("ModelSpec invariants") {
  ModelSpec m = llama7b();
  CHECK_NOTHROW(m.validate());
  m.n_kv_heads = 64;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  m = llama7b();
  m.hidden = 4097;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}

TEST_CASE("offload_time matches the analytical formula") {
  ModelSpec m = llama7b();
  HardwareSpec hw = hw_1e14_pcie32();
  CostParams p;

  CHECK(offload_time(m, hw, p, 2048, 0) == 0.0);
  // 2048 tokens * 32 layers * 16384 B = 1 GiB over 32 GB/s.
  double expect = 2048.0 * 32.0 * 16384.0 / 3.2e10;
  CHECK(offload_time(m, hw, p, 2048, 32) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(offload_time(m, hw, p, 2048, 32) == doctest::Approx(0.03355).epsilon(1e-3));

  HardwareSpec half_bw = hw;
  half_bw.pcie_bandwidth /= 2.0;
  CHECK(offload_time(m, half_bw, p, 2048, 32) == doctest::Approx(2.0 * expect));
  CHECK_THROWS_AS(offload_time(m, hw, p, 2048, 33), std::domain_error);
}

TEST_CASE("offload_time is exactly linear in seqlen and layer count") {
  Rng rng(11);
  CostParams p;
  for (int i = 0; i < 50; ++i) {
    ModelSpec m = random_model(rng);
    HardwareSpec hw = random_hw(rng);
    std::int64_t s = 1 + static_cast<std::int64_t>(rng.uniform_below(4096));
    int layers = 1 + static_cast<int>(rng.uniform_below(m.n_layers));
    double base = offload_time(m, hw, p, s, layers);
    CHECK(offload_time(m, hw, p, 3 * s, layers) == doctest::Approx(3.0 * base).epsilon(1e-12));
    if (2 * layers <= m.n_layers) {
      CHECK(offload_time(m, hw, p, s, 2 * layers) == doctest::Approx(2.0 * base).epsilon(1e-12));
    }
  }
}

TEST_CASE("min_retained_layers worked cases") {
  ModelSpec m = llama7b();
  CostParams p;

  HardwareSpec hw = hw_1e14_pcie32();
  // 0.0336 s to move all 32 layers vs 0.2871 s of prefill: full offload hides.
  CHECK(min_retained_layers(m, hw, p, 2048) == 0);

  HardwareSpec slow = hw_1e14_pcie32();
  slow.flops = 2.0e14;
  slow.pcie_bandwidth = 4.0e9;
  // seqlen 512: at most 17 layers fit under the prefill, so 15 must stay.
  CHECK(min_retained_layers(m, slow, p, 512) == 15);
  CHECK(offload_time(m, slow, p, 512, 32 - 15) <= prefill_time(m, slow, p, 512));
  CHECK(offload_time(m, slow, p, 512, 32 - 14) > prefill_time(m, slow, p, 512));

  // Long prompts hide everything (prefill grows quadratically, offload linearly).
  CHECK(min_retained_layers(m, slow, p, 1 << 22) == 0);
}

TEST_CASE("min_retained_layers minimality and monotonicity") {
  Rng rng(13);
  CostParams p;
  for (int i = 0; i < 100; ++i) {
    ModelSpec m = random_model(rng);
    HardwareSpec hw = random_hw(rng);
    std::int64_t s = 1 + static_cast<std::int64_t>(rng.uniform_below(16384));
    int x = min_retained_layers(m, hw, p, s);
    double budget = prefill_time(m, hw, p, s);
    CHECK(offload_time(m, hw, p, s, m.n_layers - x) <= budget);
    if (x > 0) {
      CHECK(offload_time(m, hw, p, s, m.n_layers - (x - 1)) > budget);
    }
    // Longer prompts never need more retained layers.
    CHECK(min_retained_layers(m, hw, p, 2 * s) <= x);
  }
}

TEST_CASE("decode_step_time memory-bound model") {
  ModelSpec m = llama7b();
  HardwareSpec hw = hw_1e14_pcie32();
  CostParams p;

  double expect_empty = 7e9 * 2.0 / 8.64e11;  // weights only
  CHECK(decode_step_time(m, hw, p, 0) == doctest::Approx(expect_empty).epsilon(1e-12));
  CHECK(decode_step_time(m, hw, p, 0) == doctest::Approx(0.01620).epsilon(1e-3));

  double expect_2048 = (7e9 * 2.0 + 2048.0 * 32.0 * 16384.0) / 8.64e11;
  CHECK(decode_step_time(m, hw, p, 2048) == doctest::Approx(expect_2048).epsilon(1e-12));
  CHECK(decode_step_time(m, hw, p, 2048) == doctest::Approx(0.01745).epsilon(1e-3));

  CostParams p2;
  p2.gamma = 2.0;
  CHECK(decode_step_time(m, hw, p2, 2048) == doctest::Approx(2.0 * expect_2048));
}

TEST_CASE("allreduce_time per-layer occupancy") {
  ModelSpec m = llama7b();
  HardwareSpec hw = hw_1e14_pcie32();

  CHECK(allreduce_time(m, hw, 512) == 0.0);  // single GPU

  HardwareSpec hw2 = hw;
  hw2.n_gpus = 2;
  double expect = 2.0 * (2.0 * 512.0 * 4096.0 * 2.0) * 0.5 / 3.2e10;
  CHECK(allreduce_time(m, hw2, 512) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(allreduce_time(m, hw2, 512) == doctest::Approx(2.621e-4).epsilon(1e-3));

  hw2.nvlink = true;
  CHECK(allreduce_time(m, hw2, 512) == 0.0);
  CHECK(allreduce_time(m, hw2, 1 << 20) == 0.0);
}
