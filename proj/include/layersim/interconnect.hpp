#pragma once

#include <cstdint>
#include <vector>

#include "layersim/cost_model.hpp"

namespace layersim {

enum class Direction { DeviceToHost, HostToDevice };

struct TransferJob {
  double bytes = 0.0;
  Direction direction = Direction::DeviceToHost;
  double submit_time = 0.0;
  double chunk_bytes = 16.0 * 1024 * 1024;
};

struct TransferSchedule {
  double start = 0.0;       // first chunk start
  double completion = 0.0;  // last chunk end; == submit_time for empty jobs
  int chunks = 0;
  int deferrals = 0;  // recheck count across all chunks
};

struct TransferLogRow {
  double submit = 0.0;
  double start = 0.0;
  double end = 0.0;
  double bytes = 0.0;
  Direction direction = Direction::DeviceToHost;
  int deferrals = 0;
};

// One direction-agnostic PCIe resource shared by KV transfers and, on
// PCIe-only multi-GPU nodes, tensor-parallel all-reduce traffic. Transfers
// serialize; each chunk checks for an active all-reduce before starting and,
// if one is running, waits delta * (remaining all-reduce time) and rechecks.
// Chunks already started run to completion; an all-reduce arriving mid-chunk
// begins once the chunk drains, so transfer and all-reduce occupancy are
// disjoint at every simulated instant.
//
// Callers must present nondecreasing submit/registration times (the event
// loop guarantees this); state before the current time is pruned.
class PcieBus {
 public:
  explicit PcieBus(double delta = 0.5) : delta_(delta) {}

  // Marks the bus all-reduce-busy for [start, start+duration), shifted past
  // any already-scheduled transfer chunk covering `start`. Overlapping
  // registrations merge (busy-until extends to the max). No effect when the
  // hardware routes collectives over NVLink or has a single GPU.
  void register_allreduce(double start, double duration, const HardwareSpec& hw);

  TransferSchedule submit_transfer(const TransferJob& job, const HardwareSpec& hw);

  double busy_until() const { return busy_until_; }
  // End of the latest registered all-reduce window.
  double allreduce_busy_until() const;
  bool allreduce_active(double t) const;

  void set_log(std::vector<TransferLogRow>* log) { log_ = log; }

  // Test hooks: chunk placements are final once made; windows may shift while
  // chunks drain, so overlap checks compare chunk history against the final
  // window list. History mode also disables pruning.
  struct Span {
    double begin, end;
    bool is_allreduce;
  };
  const std::vector<Span>& chunk_history() const { return history_; }
  std::vector<Span> allreduce_windows() const;
  void enable_history(bool on) { keep_history_ = on; }

 private:
  struct Interval {
    double begin, end;
  };

  const Interval* window_containing(double t) const;
  void insert_window(double begin, double end);
  void prune(double before);

  double delta_;
  double busy_until_ = 0.0;
  std::vector<Interval> chunks_;   // sorted, disjoint, merged when adjacent
  std::vector<Interval> windows_;  // sorted, disjoint
  std::vector<TransferLogRow>* log_ = nullptr;
  std::vector<Span> history_;
  bool keep_history_ = false;
};

}  // namespace layersim
