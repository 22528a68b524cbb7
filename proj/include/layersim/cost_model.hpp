#pragma once

#include <cstdint>

namespace layersim {

// Transformer architecture constants. All sizes are per model instance; the
// tensor-parallel split is applied inside the cost functions, not here.
struct ModelSpec {
  int n_layers = 0;
  int n_heads = 0;
  int n_kv_heads = 0;       // < n_heads under grouped-query attention
  int d_head = 0;
  std::int64_t hidden = 0;  // must equal n_heads * d_head
  double n_param = 0.0;     // total parameter count
  int f_precision = 0;      // bytes per element

  void validate() const;  // throws std::invalid_argument
};

struct HardwareSpec {
  double flops = 0.0;           // FLOP/s per device
  double hbm_bandwidth = 0.0;   // bytes/s per device
  double pcie_bandwidth = 0.0;  // bytes/s, host link
  bool nvlink = false;          // all-reduce traffic bypasses PCIe
  int n_gpus = 1;
  double gpu_mem = 0.0;  // bytes per device
  double kv_reserve_fraction = 0.9;

  void validate() const;
};

// Empirical correction factors. alpha/beta scale the prefill and offload
// estimates, gamma the decode step, delta is the fraction of the remaining
// all-reduce latency a deferred transfer waits before rechecking the bus.
struct CostParams {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double delta = 0.5;

  void validate() const;
};

// Compute-bound prefill estimate:
//   alpha * seqlen * (2*n_param + 2*seqlen*hidden) / (flops * n_gpus)
// Superlinear in seqlen (attention term).
double prefill_time(const ModelSpec& model, const HardwareSpec& hw,
                    const CostParams& p, std::int64_t seqlen);

// Bytes of K+V for one token of one layer: 2 * d_head * n_kv_heads * f.
std::int64_t kv_bytes_per_token_layer(const ModelSpec& model);

// PCIe time to move `layers_offloaded` layers of a seqlen-token KV cache:
//   beta * seqlen * layers_offloaded * kv_bytes_per_token_layer / pcie_bw
// Throws std::domain_error if layers_offloaded is outside [0, n_layers].
double offload_time(const ModelSpec& model, const HardwareSpec& hw,
                    const CostParams& p, std::int64_t seqlen,
                    int layers_offloaded);

// Smallest x in [0, n_layers] such that offloading the other n_layers - x
// layers finishes within the prefill: offload_time(seqlen, L-x) <=
// prefill_time(seqlen). Long prompts give x = 0 (everything hideable).
int min_retained_layers(const ModelSpec& model, const HardwareSpec& hw,
                        const CostParams& p, std::int64_t seqlen);

// Memory-bound decode iteration for a whole batch holding batch_kv_tokens
// cached tokens in total:
//   gamma * (weight bytes + KV bytes) / (hbm_bandwidth * n_gpus)
double decode_step_time(const ModelSpec& model, const HardwareSpec& hw,
                        const CostParams& p, std::int64_t batch_kv_tokens);

// PCIe occupancy of one layer's tensor-parallel synchronization (two
// all-reduces per layer, attention + FFN), ring-style volume:
//   2 * (2 * tokens * hidden * f) * (n_gpus - 1) / n_gpus / pcie_bw
// Zero with a single GPU or when NVLink carries the collective.
double allreduce_time(const ModelSpec& model, const HardwareSpec& hw,
                      std::int64_t tokens);

}  // namespace layersim
