#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <vector>

#include "layersim/cost_model.hpp"

namespace layersim {

struct BlockPools {
  std::int64_t gpu_blocks_total = 0;
  std::int64_t cpu_blocks_total = 0;
  int tokens_per_block = 16;
};

struct PoolSizing {
  std::int64_t max_input_tokens = 16384;
  int tokens_per_block = 16;
  // Activation reserve during profiling: 2 * max_input * hidden * f * factor.
  double activation_layers_factor = 4.0;
  double cpu_pool_multiple = 8.0;
};

// GPU pool capacity left after weights and the activation reserve, at the
// configured reserve fraction. Throws ConfigError when the model does not fit.
BlockPools pool_size_from_hardware(const ModelSpec& model, const HardwareSpec& hw,
                                   const PoolSizing& sizing);

struct PlacementPlan {
  std::vector<int> retained;   // layer indices kept on GPU, ascending
  std::vector<int> offloaded;  // complement, ascending
};

// Spreads x retained layers evenly across [0, L):
//   retained = { floor((2j+1) * L / (2x)) : j = 0..x-1 }
// e.g. L=8, x=4 keeps layers {1,3,5,7}.
PlacementPlan layer_placement(int n_layers, int x);

enum class Loc : std::uint8_t { None, Gpu, Cpu };

struct SlotLoc {
  Loc loc = Loc::None;
  std::uint32_t slot = 0;
  bool offload_in_flight = false;  // GPU slot serving as send buffer
  std::uint32_t dest_slot = 0;     // reserved CPU destination while in flight
};

struct LogicalBlock {
  std::int64_t token_begin = 0;     // capacity span [begin, begin + tokens_per_block)
  std::vector<SlotLoc> layers;      // one location per model layer
};

struct RequestKv {
  std::int64_t id = -1;
  std::int64_t cached_tokens = 0;
  std::vector<LogicalBlock> blocks;
  std::vector<Loc> layer_residency;  // append destination per layer
};

enum class OffloadMode { Half, Full };

// Escalation transfer: GPU slots stay allocated (send buffer) until the
// engine reports completion.
struct OffloadJob {
  std::int64_t job_id = -1;
  std::int64_t request_id = -1;
  double bytes = 0.0;
  int layer_count = 0;
  std::int64_t gpu_blocks = 0;  // slots reclaimed on completion
};

struct FetchJob {
  int layer = 0;
  double bytes = 0.0;
};

class KvManager {
 public:
  KvManager(BlockPools pools, const ModelSpec& model);

  int tokens_per_block() const { return pools_.tokens_per_block; }
  std::int64_t gpu_blocks_total() const { return pools_.gpu_blocks_total; }
  std::int64_t gpu_blocks_free() const;
  std::int64_t cpu_blocks_total() const { return pools_.cpu_blocks_total; }
  std::int64_t cpu_blocks_free() const;

  std::int64_t blocks_per_layer(std::int64_t tokens) const;
  // GPU blocks a request-wise (all layers resident) admission would take.
  std::int64_t request_wise_gpu_blocks(std::int64_t prompt_tokens) const;

  // Allocates ceil(prompt/tokens_per_block) blocks per retained layer on GPU
  // and the same per offloaded layer on CPU. All-or-nothing; returns false and
  // leaves the pools untouched when either side lacks space.
  bool allocate_prefill(std::int64_t request_id, std::int64_t prompt_tokens, int x);

  bool has_request(std::int64_t request_id) const;
  const RequestKv& request(std::int64_t request_id) const;

  // Layers currently holding at least one GPU block (not yet in flight).
  int retained_layer_count(std::int64_t request_id) const;
  std::int64_t gpu_blocks_held(std::int64_t request_id) const;

  // Blocks one more decode row (one logical block) costs in each pool,
  // following the per-layer residency designations.
  std::int64_t gpu_row_cost(std::int64_t request_id) const;
  std::int64_t cpu_row_cost(std::int64_t request_id) const;

  // Blocks a Half/Full escalation of this request would reclaim.
  std::int64_t offload_reclaim(std::int64_t request_id, OffloadMode mode) const;

  // Picks ceil(x/2) lowest-index retained layers (Half) or all of them
  // (Full), reserves CPU destinations, and marks the entries in flight.
  // Returns a job with zero layers when nothing is retained; nullopt when the
  // CPU pool cannot hold the destinations (state unchanged).
  std::optional<OffloadJob> plan_offload(std::int64_t request_id, OffloadMode mode);

  // Flips the job's entries to their CPU destinations and frees the GPU send
  // buffers (plus the CPU side too if the owner was released mid-flight).
  void complete_offload(std::int64_t job_id);

  // One job per layer with CPU-resident tokens, ascending layer order.
  std::vector<FetchJob> plan_decode_fetch(std::int64_t request_id) const;

  // True when every block is full and the next token needs a fresh block.
  bool needs_append(std::int64_t request_id) const;
  // Appends one logical block following each layer's current residency.
  // All-or-nothing; false when a pool lacks space.
  bool append_decode_block(std::int64_t request_id);

  void note_token(std::int64_t request_id);  // cached_tokens += 1

  struct FreedCounts {
    std::int64_t gpu = 0;
    std::int64_t cpu = 0;
    std::int64_t deferred_gpu = 0;  // reclaimed later by in-flight offloads
  };
  // Returns everything to the pools except slots bound to in-flight offload
  // jobs, which are reclaimed when those jobs complete. Throws on unknown or
  // already-released ids.
  FreedCounts release(std::int64_t request_id);

  // Conservation: free + live table references + in-flight/orphaned slots
  // must equal the pool totals, and no slot may be referenced twice. Throws
  // SimulationError on violation.
  void check_conservation() const;

  void dump_table(std::ostream& os) const;

 private:
  class SlotPool {
   public:
    explicit SlotPool(std::int64_t total);
    std::optional<std::uint32_t> alloc();
    void free(std::uint32_t slot);
    std::int64_t free_count() const { return static_cast<std::int64_t>(free_stack_.size()); }
    std::int64_t total() const { return total_; }
    bool is_allocated(std::uint32_t slot) const { return allocated_[slot]; }

   private:
    std::int64_t total_;
    std::vector<std::uint32_t> free_stack_;
    std::vector<bool> allocated_;
  };

  struct PendingOffload {
    std::int64_t request_id;
    // (block index, layer) entries moving to CPU.
    std::vector<std::pair<int, int>> entries;
    // Set when the owner was released mid-flight; slots to free on completion.
    std::vector<std::uint32_t> orphan_gpu;
    std::vector<std::uint32_t> orphan_cpu;
    bool orphaned = false;
  };

  RequestKv& request_mut(std::int64_t request_id);

  BlockPools pools_;
  int n_layers_;
  std::int64_t kv_bytes_per_token_layer_;
  SlotPool gpu_;
  SlotPool cpu_;
  std::map<std::int64_t, RequestKv> tables_;
  std::map<std::int64_t, PendingOffload> pending_;
  std::int64_t next_job_id_ = 0;
};

}  // namespace layersim
