#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <queue>
#include <span>
#include <vector>

#include "layersim/cost_model.hpp"
#include "layersim/interconnect.hpp"
#include "layersim/kv_manager.hpp"
#include "layersim/metrics.hpp"
#include "layersim/scheduler.hpp"
#include "layersim/workload.hpp"

namespace layersim {

enum class PolicyKind { BaselineRequestWise, LayerKv };

struct Policy {
  PolicyKind kind = PolicyKind::LayerKv;
  bool slo_scheduler_enabled = true;  // layerkv only; baseline ignores it
};

struct SchedulerConfig {
  double threshold_fraction = 0.05;  // offload trigger, fraction of the GPU pool
  int horizon = 8;                   // forecast stages
  double predictor_accuracy = 0.8;
};

struct EngineConfig {
  ModelSpec model;
  HardwareSpec hw;
  CostParams cost;
  SLOSpec slo;
  Policy policy;
  BlockPools pools;
  SchedulerConfig scheduler;
  std::int64_t max_batch_tokens = 131072;
  double max_sim_time = 86400.0;
  double chunk_bytes = 16.0 * 1024 * 1024;
  std::uint64_t seed = 0;
  // Testing knob: force every layerkv admission to retain exactly this many
  // layers (-1 = policy decides).
  int force_retained_layers = -1;
  bool invariant_checks = false;  // block conservation after every event
  bool keep_transfer_log = false;
  bool keep_decision_log = false;
};

struct DecisionLogRow {
  double time = 0.0;
  double min_budget = 0.0;  // +inf when no decoding request constrains Eq. 2
  int admitted = 0;
  OffloadPlanKind plan = OffloadPlanKind::None;
};

// Prefill execution span for one request: per-layer all-reduce windows are
// registered on the bus and one device-to-host job per offloaded layer is
// submitted at that layer's production time, start + (i+1)/L * T. Transfers
// never delay the span itself; completion is always start + prefill_time.
struct PrefillSchedule {
  double completion = 0.0;
  std::vector<TransferSchedule> jobs;
};
PrefillSchedule schedule_prefill_span(const ModelSpec& model, const HardwareSpec& hw,
                                      const CostParams& cost, PcieBus& bus,
                                      std::span<const int> offloaded_layers,
                                      std::int64_t prompt_tokens, double start,
                                      double chunk_bytes, bool transfers_enabled);

class Engine {
 public:
  Engine(EngineConfig cfg, Trace trace);

  MetricsReport run();

  const std::vector<TransferLogRow>& transfer_log() const { return transfer_log_; }
  const std::vector<DecisionLogRow>& decision_log() const { return decision_log_; }
  const KvManager& kv() const { return kv_; }
  const PcieBus& bus() const { return bus_; }

 private:
  enum class EventType : int {
    TransferComplete = 0,
    PrefillComplete = 1,
    DecodeIterationComplete = 2,
    Arrival = 3,
    SchedulerTick = 4,
  };

  struct Event {
    double time;
    EventType type;
    std::uint64_t seq;
    std::int64_t payload;  // request id or offload job id
  };
  struct EventAfter {
    bool operator()(const Event& a, const Event& b) const {
      if (a.time != b.time) return a.time > b.time;
      if (a.type != b.type) return static_cast<int>(a.type) > static_cast<int>(b.type);
      return a.seq > b.seq;
    }
  };

  enum class Phase { Pending, Queued, AwaitingPrefill, Prefilling, Decoding, Finished };

  struct SimRequest {
    RequestTemplate tmpl;
    Phase phase = Phase::Pending;
    int x_alloc = -1;
    int predicted_bucket = -1;
    int tokens_emitted = 0;
    double prefill_start = -1.0;
    double first_token = -1.0;
    double last_token = -1.0;
    double finish = -1.0;
  };

  void push_event(double time, EventType type, std::int64_t payload);
  void handle_arrival(std::int64_t id, double now);
  void handle_prefill_complete(std::int64_t id, double now);
  void handle_decode_complete(double now);
  void schedule_work(double now);
  void tick(double now);
  void admit_baseline(double now);
  void admit_layerkv(double now);
  void start_prefill(std::int64_t id, double now);
  bool start_decode_iteration(double now);
  void finish_request(std::int64_t id, double now);
  void check_feasibility(std::int64_t id) const;
  int admission_layers(std::int64_t prompt_tokens, bool under_pressure) const;
  // Admission headroom: one decode row per live request per pool, so that
  // running requests can keep appending without preemption.
  void growth_reserve(std::int64_t* gpu, std::int64_t* cpu) const;
  MetricsReport build_report(double now, bool completed) const;

  EngineConfig cfg_;
  std::vector<SimRequest> requests_;
  KvManager kv_;
  PcieBus bus_;
  LengthBuckets buckets_;

  std::priority_queue<Event, std::vector<Event>, EventAfter> events_;
  std::uint64_t next_seq_ = 0;

  std::deque<std::int64_t> queue_;            // arrived, not admitted (FCFS)
  std::deque<std::int64_t> pending_prefill_;  // admitted, blocks held, awaiting execution
  std::vector<std::int64_t> decoding_;        // decode phase, ordered by first token
  std::vector<std::int64_t> current_batch_;
  bool gpu_busy_ = false;
  std::int64_t threshold_blocks_ = 0;
  int finished_count_ = 0;

  std::vector<TransferLogRow> transfer_log_;
  std::vector<DecisionLogRow> decision_log_;
};

}  // namespace layersim
