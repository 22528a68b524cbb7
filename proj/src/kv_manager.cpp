#include "layersim/kv_manager.hpp"

#include <algorithm>
#include <cmath>

#include "layersim/errors.hpp"

namespace layersim {

BlockPools pool_size_from_hardware(const ModelSpec& model, const HardwareSpec& hw,
                                   const PoolSizing& sizing) {
  double weight_bytes = model.n_param * model.f_precision;
  double activation = 2.0 * static_cast<double>(sizing.max_input_tokens) *
                      static_cast<double>(model.hidden) * model.f_precision *
                      sizing.activation_layers_factor;
  double kv_bytes = (hw.gpu_mem * hw.n_gpus - weight_bytes - activation) *
                    hw.kv_reserve_fraction;
  if (kv_bytes <= 0.0) {
    throw ConfigError("model does not fit: weights + activation reserve exceed GPU memory");
  }
  double block_bytes = static_cast<double>(sizing.tokens_per_block) *
                       static_cast<double>(kv_bytes_per_token_layer(model));
  BlockPools pools;
  pools.tokens_per_block = sizing.tokens_per_block;
  pools.gpu_blocks_total = static_cast<std::int64_t>(std::floor(kv_bytes / block_bytes));
  if (pools.gpu_blocks_total <= 0) {
    throw ConfigError("model does not fit: no room for KV blocks");
  }
  pools.cpu_blocks_total = static_cast<std::int64_t>(
      std::floor(pools.gpu_blocks_total * sizing.cpu_pool_multiple));
  return pools;
}

PlacementPlan layer_placement(int n_layers, int x) {
  if (x < 0 || x > n_layers) {
    throw std::domain_error("layer_placement: x outside [0, n_layers]");
  }
  PlacementPlan plan;
  plan.retained.reserve(x);
  for (int j = 0; j < x; ++j) {
    plan.retained.push_back(static_cast<int>(
        (2ll * j + 1) * n_layers / (2ll * x)));
  }
  std::vector<bool> kept(n_layers, false);
  for (int l : plan.retained) kept[l] = true;
  for (int l = 0; l < n_layers; ++l) {
    if (!kept[l]) plan.offloaded.push_back(l);
  }
  return plan;
}

KvManager::SlotPool::SlotPool(std::int64_t total)
    : total_(total), allocated_(static_cast<std::size_t>(total), false) {
  free_stack_.reserve(static_cast<std::size_t>(total));
  for (std::int64_t s = total - 1; s >= 0; --s) {
    free_stack_.push_back(static_cast<std::uint32_t>(s));
  }
}

std::optional<std::uint32_t> KvManager::SlotPool::alloc() {
  if (free_stack_.empty()) return std::nullopt;
  std::uint32_t slot = free_stack_.back();
  free_stack_.pop_back();
  allocated_[slot] = true;
  return slot;
}

void KvManager::SlotPool::free(std::uint32_t slot) {
  if (static_cast<std::int64_t>(slot) >= total_ || !allocated_[slot]) {
    throw SimulationError("slot pool: freeing a slot that is not allocated");
  }
  allocated_[slot] = false;
  free_stack_.push_back(slot);
}

KvManager::KvManager(BlockPools pools, const ModelSpec& model)
    : pools_(pools),
      n_layers_(model.n_layers),
      kv_bytes_per_token_layer_(kv_bytes_per_token_layer(model)),
      gpu_(pools.gpu_blocks_total),
      cpu_(pools.cpu_blocks_total) {}

std::int64_t KvManager::gpu_blocks_free() const { return gpu_.free_count(); }
std::int64_t KvManager::cpu_blocks_free() const { return cpu_.free_count(); }

std::int64_t KvManager::blocks_per_layer(std::int64_t tokens) const {
  return (tokens + pools_.tokens_per_block - 1) / pools_.tokens_per_block;
}

std::int64_t KvManager::request_wise_gpu_blocks(std::int64_t prompt_tokens) const {
  return blocks_per_layer(prompt_tokens) * n_layers_;
}

bool KvManager::has_request(std::int64_t request_id) const {
  return tables_.count(request_id) > 0;
}

const RequestKv& KvManager::request(std::int64_t request_id) const {
  auto it = tables_.find(request_id);
  if (it == tables_.end()) {
    throw SimulationError("kv_manager: unknown request id " + std::to_string(request_id));
  }
  return it->second;
}

RequestKv& KvManager::request_mut(std::int64_t request_id) {
  return const_cast<RequestKv&>(request(request_id));
}

bool KvManager::allocate_prefill(std::int64_t request_id, std::int64_t prompt_tokens, int x) {
  if (tables_.count(request_id)) {
    throw SimulationError("kv_manager: request " + std::to_string(request_id) +
                          " already allocated");
  }
  PlacementPlan plan = layer_placement(n_layers_, x);
  std::int64_t n_blocks = blocks_per_layer(prompt_tokens);
  std::int64_t gpu_need = n_blocks * static_cast<std::int64_t>(plan.retained.size());
  std::int64_t cpu_need = n_blocks * static_cast<std::int64_t>(plan.offloaded.size());
  if (gpu_.free_count() < gpu_need || cpu_.free_count() < cpu_need) {
    return false;
  }

  RequestKv kv;
  kv.id = request_id;
  kv.cached_tokens = prompt_tokens;
  kv.layer_residency.assign(n_layers_, Loc::Cpu);
  for (int l : plan.retained) kv.layer_residency[l] = Loc::Gpu;
  kv.blocks.resize(static_cast<std::size_t>(n_blocks));
  for (std::int64_t b = 0; b < n_blocks; ++b) {
    auto& block = kv.blocks[static_cast<std::size_t>(b)];
    block.token_begin = b * pools_.tokens_per_block;
    block.layers.resize(n_layers_);
    for (int l = 0; l < n_layers_; ++l) {
      auto& pool = kv.layer_residency[l] == Loc::Gpu ? gpu_ : cpu_;
      auto slot = pool.alloc();  // counts pre-checked; cannot fail
      block.layers[l] = {kv.layer_residency[l], *slot, false, 0};
    }
  }
  tables_.emplace(request_id, std::move(kv));
  return true;
}

int KvManager::retained_layer_count(std::int64_t request_id) const {
  const RequestKv& kv = request(request_id);
  int count = 0;
  for (int l = 0; l < n_layers_; ++l) {
    for (const auto& block : kv.blocks) {
      if (block.layers[l].loc == Loc::Gpu && !block.layers[l].offload_in_flight) {
        ++count;
        break;
      }
    }
  }
  return count;
}

std::int64_t KvManager::gpu_row_cost(std::int64_t request_id) const {
  const RequestKv& kv = request(request_id);
  std::int64_t rows = 0;
  for (Loc loc : kv.layer_residency) {
    if (loc == Loc::Gpu) ++rows;
  }
  return rows;
}

std::int64_t KvManager::cpu_row_cost(std::int64_t request_id) const {
  const RequestKv& kv = request(request_id);
  std::int64_t rows = 0;
  for (Loc loc : kv.layer_residency) {
    if (loc == Loc::Cpu) ++rows;
  }
  return rows;
}

std::int64_t KvManager::gpu_blocks_held(std::int64_t request_id) const {
  const RequestKv& kv = request(request_id);
  std::int64_t held = 0;
  for (const auto& block : kv.blocks) {
    for (const auto& entry : block.layers) {
      if (entry.loc == Loc::Gpu) ++held;
    }
  }
  return held;
}

namespace {

std::vector<int> select_offload_layers(const RequestKv& kv, int n_layers,
                                       OffloadMode mode) {
  std::vector<int> retained;
  for (int l = 0; l < n_layers; ++l) {
    for (const auto& block : kv.blocks) {
      if (block.layers[l].loc == Loc::Gpu && !block.layers[l].offload_in_flight) {
        retained.push_back(l);
        break;
      }
    }
  }
  if (mode == OffloadMode::Half) {
    // Lowest indices first: produced earliest, maximizing overlap headroom.
    std::size_t take = (retained.size() + 1) / 2;
    retained.resize(take);
  }
  return retained;
}

}  // namespace

std::int64_t KvManager::offload_reclaim(std::int64_t request_id, OffloadMode mode) const {
  const RequestKv& kv = request(request_id);
  std::int64_t reclaim = 0;
  for (int l : select_offload_layers(kv, n_layers_, mode)) {
    for (const auto& block : kv.blocks) {
      if (block.layers[l].loc == Loc::Gpu && !block.layers[l].offload_in_flight) {
        ++reclaim;
      }
    }
  }
  return reclaim;
}

std::optional<OffloadJob> KvManager::plan_offload(std::int64_t request_id, OffloadMode mode) {
  RequestKv& kv = request_mut(request_id);
  std::vector<int> layers = select_offload_layers(kv, n_layers_, mode);
  OffloadJob job;
  job.request_id = request_id;
  if (layers.empty()) {
    job.job_id = -1;  // no retained layers: explicit no-op
    return job;
  }

  PendingOffload pending;
  pending.request_id = request_id;
  std::vector<std::uint32_t> reserved_cpu;
  for (int l : layers) {
    kv.layer_residency[l] = Loc::Cpu;  // future appends follow the data
    for (std::size_t b = 0; b < kv.blocks.size(); ++b) {
      auto& entry = kv.blocks[b].layers[l];
      if (entry.loc != Loc::Gpu || entry.offload_in_flight) continue;
      auto dest = cpu_.alloc();
      if (!dest) {
        // Roll back: destination pool exhausted. Selected layers were
        // GPU-resident on entry (selection requires a live GPU block).
        for (std::uint32_t s : reserved_cpu) cpu_.free(s);
        for (auto& [rb, rl] : pending.entries) {
          kv.blocks[rb].layers[rl].offload_in_flight = false;
        }
        for (int rl : layers) kv.layer_residency[rl] = Loc::Gpu;
        return std::nullopt;
      }
      entry.offload_in_flight = true;
      entry.dest_slot = *dest;
      reserved_cpu.push_back(*dest);
      pending.entries.emplace_back(static_cast<int>(b), l);
      std::int64_t filled = std::clamp<std::int64_t>(
          kv.cached_tokens - kv.blocks[b].token_begin, 0, pools_.tokens_per_block);
      job.bytes += static_cast<double>(filled) * kv_bytes_per_token_layer_;
      ++job.gpu_blocks;
    }
  }
  job.layer_count = static_cast<int>(layers.size());
  job.job_id = next_job_id_++;
  pending_.emplace(job.job_id, std::move(pending));
  return job;
}

void KvManager::complete_offload(std::int64_t job_id) {
  auto it = pending_.find(job_id);
  if (it == pending_.end()) {
    throw SimulationError("kv_manager: unknown offload job " + std::to_string(job_id));
  }
  PendingOffload& pending = it->second;
  if (pending.orphaned) {
    for (std::uint32_t s : pending.orphan_gpu) gpu_.free(s);
    for (std::uint32_t s : pending.orphan_cpu) cpu_.free(s);
  } else {
    RequestKv& kv = request_mut(pending.request_id);
    for (auto& [b, l] : pending.entries) {
      auto& entry = kv.blocks[b].layers[l];
      gpu_.free(entry.slot);
      entry.loc = Loc::Cpu;
      entry.slot = entry.dest_slot;
      entry.offload_in_flight = false;
      entry.dest_slot = 0;
    }
  }
  pending_.erase(it);
}

std::vector<FetchJob> KvManager::plan_decode_fetch(std::int64_t request_id) const {
  const RequestKv& kv = request(request_id);
  std::vector<FetchJob> jobs;
  for (int l = 0; l < n_layers_; ++l) {
    double bytes = 0.0;
    for (const auto& block : kv.blocks) {
      if (block.layers[l].loc != Loc::Cpu) continue;
      std::int64_t filled = std::clamp<std::int64_t>(
          kv.cached_tokens - block.token_begin, 0, pools_.tokens_per_block);
      bytes += static_cast<double>(filled) * kv_bytes_per_token_layer_;
    }
    if (bytes > 0.0) jobs.push_back({l, bytes});
  }
  return jobs;
}

bool KvManager::needs_append(std::int64_t request_id) const {
  const RequestKv& kv = request(request_id);
  std::int64_t capacity =
      static_cast<std::int64_t>(kv.blocks.size()) * pools_.tokens_per_block;
  return kv.cached_tokens >= capacity;
}

bool KvManager::append_decode_block(std::int64_t request_id) {
  RequestKv& kv = request_mut(request_id);
  std::int64_t gpu_need = 0;
  std::int64_t cpu_need = 0;
  for (int l = 0; l < n_layers_; ++l) {
    (kv.layer_residency[l] == Loc::Gpu ? gpu_need : cpu_need) += 1;
  }
  if (gpu_.free_count() < gpu_need || cpu_.free_count() < cpu_need) {
    return false;
  }
  LogicalBlock block;
  block.token_begin =
      static_cast<std::int64_t>(kv.blocks.size()) * pools_.tokens_per_block;
  block.layers.resize(n_layers_);
  for (int l = 0; l < n_layers_; ++l) {
    auto& pool = kv.layer_residency[l] == Loc::Gpu ? gpu_ : cpu_;
    auto slot = pool.alloc();
    block.layers[l] = {kv.layer_residency[l], *slot, false, 0};
  }
  kv.blocks.push_back(std::move(block));
  return true;
}

void KvManager::note_token(std::int64_t request_id) {
  RequestKv& kv = request_mut(request_id);
  std::int64_t capacity =
      static_cast<std::int64_t>(kv.blocks.size()) * pools_.tokens_per_block;
  if (kv.cached_tokens >= capacity) {
    throw SimulationError("kv_manager: token recorded past block capacity");
  }
  kv.cached_tokens += 1;
}

KvManager::FreedCounts KvManager::release(std::int64_t request_id) {
  auto it = tables_.find(request_id);
  if (it == tables_.end()) {
    throw SimulationError("kv_manager: release of unknown or already-released request " +
                          std::to_string(request_id));
  }
  RequestKv& kv = it->second;
  FreedCounts freed;
  // Entries bound to an in-flight offload keep both slots until the transfer
  // drains; hand them to the pending job.
  for (auto& [job_id, pending] : pending_) {
    if (pending.request_id != request_id) continue;
    pending.orphaned = true;
    for (auto& [b, l] : pending.entries) {
      auto& entry = kv.blocks[b].layers[l];
      pending.orphan_gpu.push_back(entry.slot);
      pending.orphan_cpu.push_back(entry.dest_slot);
      entry.loc = Loc::None;
      freed.deferred_gpu += 1;
    }
  }
  for (auto& block : kv.blocks) {
    for (auto& entry : block.layers) {
      switch (entry.loc) {
        case Loc::Gpu:
          gpu_.free(entry.slot);
          freed.gpu += 1;
          break;
        case Loc::Cpu:
          cpu_.free(entry.slot);
          freed.cpu += 1;
          break;
        case Loc::None:
          break;
      }
      entry.loc = Loc::None;
    }
  }
  tables_.erase(it);
  return freed;
}

void KvManager::check_conservation() const {
  std::int64_t gpu_refs = 0;
  std::int64_t cpu_refs = 0;
  std::vector<bool> gpu_seen(static_cast<std::size_t>(pools_.gpu_blocks_total), false);
  std::vector<bool> cpu_seen(static_cast<std::size_t>(pools_.cpu_blocks_total), false);
  auto touch = [](std::vector<bool>& seen, std::uint32_t slot, const char* what) {
    if (slot >= seen.size() || seen[slot]) {
      throw SimulationError(std::string("kv_manager: slot exclusivity violated (") + what + ")");
    }
    seen[slot] = true;
  };
  for (const auto& [id, kv] : tables_) {
    for (const auto& block : kv.blocks) {
      for (const auto& entry : block.layers) {
        if (entry.loc == Loc::Gpu) {
          touch(gpu_seen, entry.slot, "gpu table entry");
          ++gpu_refs;
        } else if (entry.loc == Loc::Cpu) {
          touch(cpu_seen, entry.slot, "cpu table entry");
          ++cpu_refs;
        }
        if (entry.offload_in_flight) {
          touch(cpu_seen, entry.dest_slot, "cpu reserved destination");
          ++cpu_refs;
        }
      }
    }
  }
  for (const auto& [job_id, pending] : pending_) {
    if (!pending.orphaned) continue;
    for (std::uint32_t s : pending.orphan_gpu) {
      touch(gpu_seen, s, "orphaned gpu send buffer");
      ++gpu_refs;
    }
    for (std::uint32_t s : pending.orphan_cpu) {
      touch(cpu_seen, s, "orphaned cpu destination");
      ++cpu_refs;
    }
  }
  if (gpu_.free_count() + gpu_refs != pools_.gpu_blocks_total) {
    throw SimulationError("kv_manager: GPU block conservation violated (free " +
                          std::to_string(gpu_.free_count()) + " + live " +
                          std::to_string(gpu_refs) + " != total " +
                          std::to_string(pools_.gpu_blocks_total) + ")");
  }
  if (cpu_.free_count() + cpu_refs != pools_.cpu_blocks_total) {
    throw SimulationError("kv_manager: CPU block conservation violated (free " +
                          std::to_string(cpu_.free_count()) + " + live " +
                          std::to_string(cpu_refs) + " != total " +
                          std::to_string(pools_.cpu_blocks_total) + ")");
  }
}

void KvManager::dump_table(std::ostream& os) const {
  for (const auto& [id, kv] : tables_) {
    for (std::size_t b = 0; b < kv.blocks.size(); ++b) {
      for (int l = 0; l < n_layers_; ++l) {
        const auto& entry = kv.blocks[b].layers[l];
        os << "req=" << id << " block=" << b << " layer=" << l << " -> ";
        switch (entry.loc) {
          case Loc::Gpu:
            os << "GPU(" << entry.slot << ")";
            if (entry.offload_in_flight) os << "->CPU(" << entry.dest_slot << ")";
            break;
          case Loc::Cpu:
            os << "CPU(" << entry.slot << ")";
            break;
          case Loc::None:
            os << "none";
            break;
        }
        os << "\n";
      }
    }
  }
}

}  // namespace layersim
