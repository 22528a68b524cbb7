#include "layersim/cost_model.hpp"

#include <stdexcept>
#include <string>

namespace layersim {

void ModelSpec::validate() const {
  if (n_layers <= 0 || n_heads <= 0 || n_kv_heads <= 0 || d_head <= 0 ||
      hidden <= 0 || n_param <= 0.0 || f_precision <= 0) {
    throw std::invalid_argument("ModelSpec: all fields must be positive");
  }
  if (n_kv_heads > n_heads) {
    throw std::invalid_argument("ModelSpec: n_kv_heads exceeds n_heads");
  }
  if (hidden != static_cast<std::int64_t>(n_heads) * d_head) {
    throw std::invalid_argument("ModelSpec: hidden != n_heads * d_head (" +
                                std::to_string(hidden) + " vs " +
                                std::to_string(static_cast<std::int64_t>(n_heads) * d_head) + ")");
  }
}

void HardwareSpec::validate() const {
  if (flops <= 0.0 || hbm_bandwidth <= 0.0 || pcie_bandwidth <= 0.0 ||
      gpu_mem <= 0.0 || n_gpus < 1) {
    throw std::invalid_argument("HardwareSpec: rates, capacities and GPU count must be positive");
  }
  if (kv_reserve_fraction <= 0.0 || kv_reserve_fraction > 1.0) {
    throw std::invalid_argument("HardwareSpec: kv_reserve_fraction must be in (0, 1]");
  }
}

void CostParams::validate() const {
  if (alpha <= 0.0 || beta <= 0.0 || gamma <= 0.0 || delta <= 0.0) {
    throw std::invalid_argument("CostParams: all factors must be positive");
  }
}

double prefill_time(const ModelSpec& model, const HardwareSpec& hw,
                    const CostParams& p, std::int64_t seqlen) {
  double s = static_cast<double>(seqlen);
  double flop = s * (2.0 * model.n_param + 2.0 * s * static_cast<double>(model.hidden));
  return p.alpha * flop / (hw.flops * hw.n_gpus);
}

std::int64_t kv_bytes_per_token_layer(const ModelSpec& model) {
  return 2ll * model.d_head * model.n_kv_heads * model.f_precision;
}

double offload_time(const ModelSpec& model, const HardwareSpec& hw,
                    const CostParams& p, std::int64_t seqlen,
                    int layers_offloaded) {
  if (layers_offloaded < 0 || layers_offloaded > model.n_layers) {
    throw std::domain_error("offload_time: layers_offloaded outside [0, n_layers]");
  }
  double bytes = static_cast<double>(seqlen) * layers_offloaded *
                 static_cast<double>(kv_bytes_per_token_layer(model));
  return p.beta * bytes / hw.pcie_bandwidth;
}

int min_retained_layers(const ModelSpec& model, const HardwareSpec& hw,
                        const CostParams& p, std::int64_t seqlen) {
  double budget = prefill_time(model, hw, p, seqlen);
  // L is small (<= ~128); a direct scan beats solving the inequality.
  for (int x = 0; x <= model.n_layers; ++x) {
    if (offload_time(model, hw, p, seqlen, model.n_layers - x) <= budget) {
      return x;
    }
  }
  return model.n_layers;  // unreachable: zero layers always fit
}

double decode_step_time(const ModelSpec& model, const HardwareSpec& hw,
                        const CostParams& p, std::int64_t batch_kv_tokens) {
  double weight_bytes = model.n_param * model.f_precision;
  double kv_bytes = static_cast<double>(batch_kv_tokens) * model.n_layers *
                    static_cast<double>(kv_bytes_per_token_layer(model));
  return p.gamma * (weight_bytes + kv_bytes) / (hw.hbm_bandwidth * hw.n_gpus);
}

double allreduce_time(const ModelSpec& model, const HardwareSpec& hw,
                      std::int64_t tokens) {
  if (hw.n_gpus <= 1 || hw.nvlink) return 0.0;
  double payload = 2.0 * static_cast<double>(tokens) *
                   static_cast<double>(model.hidden) * model.f_precision;
  double ring = payload * (hw.n_gpus - 1) / hw.n_gpus;
  return 2.0 * ring / hw.pcie_bandwidth;
}

}  // namespace layersim
