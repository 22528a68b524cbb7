#include "layersim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "layersim/errors.hpp"

namespace layersim {

namespace {

LengthBuckets buckets_from_trace(const Trace& trace, double accuracy) {
  std::vector<int> lengths;
  lengths.reserve(trace.requests.size());
  for (const auto& r : trace.requests) lengths.push_back(r.output_tokens);
  return LengthBuckets::deciles_of(std::move(lengths), accuracy);
}

}  // namespace

PrefillSchedule schedule_prefill_span(const ModelSpec& model, const HardwareSpec& hw,
                                      const CostParams& cost, PcieBus& bus,
                                      std::span<const int> offloaded_layers,
                                      std::int64_t prompt_tokens, double start,
                                      double chunk_bytes, bool transfers_enabled) {
  double total = prefill_time(model, hw, cost, prompt_tokens);
  double per_layer = total / model.n_layers;
  double ar = allreduce_time(model, hw, prompt_tokens);
  double layer_bytes = static_cast<double>(prompt_tokens) *
                       static_cast<double>(kv_bytes_per_token_layer(model));
  PrefillSchedule out;
  out.completion = start + total;
  std::size_t oi = 0;
  for (int l = 0; l < model.n_layers; ++l) {
    double layer_end = start + (l + 1) * per_layer;
    if (ar > 0.0) bus.register_allreduce(layer_end - ar, ar, hw);
    if (transfers_enabled && oi < offloaded_layers.size() && offloaded_layers[oi] == l) {
      TransferJob job{layer_bytes, Direction::DeviceToHost, layer_end, chunk_bytes};
      out.jobs.push_back(bus.submit_transfer(job, hw));
      ++oi;
    }
  }
  return out;
}

Engine::Engine(EngineConfig cfg, Trace trace)
    : cfg_(cfg),
      kv_(cfg.pools, cfg.model),
      bus_(cfg.cost.delta),
      buckets_(buckets_from_trace(trace, cfg.scheduler.predictor_accuracy)) {
  cfg_.model.validate();
  cfg_.hw.validate();
  cfg_.cost.validate();
  cfg_.slo.validate();
  trace.validate();
  threshold_blocks_ = static_cast<std::int64_t>(
      cfg_.scheduler.threshold_fraction * static_cast<double>(cfg_.pools.gpu_blocks_total));
  if (cfg_.keep_transfer_log) bus_.set_log(&transfer_log_);
  // Requests are addressed by trace position; tmpl.id is only reported.
  requests_.reserve(trace.requests.size());
  for (const auto& tmpl : trace.requests) {
    SimRequest r;
    r.tmpl = tmpl;
    requests_.push_back(r);
    push_event(tmpl.arrival, EventType::Arrival,
               static_cast<std::int64_t>(requests_.size()) - 1);
  }
  push_event(0.0, EventType::SchedulerTick, -1);
}

void Engine::push_event(double time, EventType type, std::int64_t payload) {
  events_.push({time, type, next_seq_++, payload});
}

MetricsReport Engine::run() {
  double now = 0.0;
  bool completed = true;
  while (!events_.empty()) {
    Event e = events_.top();
    events_.pop();
    if (e.time > cfg_.max_sim_time) {
      completed = false;
      now = cfg_.max_sim_time;
      break;
    }
    now = e.time;
    switch (e.type) {
      case EventType::Arrival:
        handle_arrival(e.payload, now);
        break;
      case EventType::PrefillComplete:
        handle_prefill_complete(e.payload, now);
        break;
      case EventType::DecodeIterationComplete:
        handle_decode_complete(now);
        break;
      case EventType::TransferComplete:
        kv_.complete_offload(e.payload);
        break;
      case EventType::SchedulerTick:
        break;
    }
    if (cfg_.invariant_checks) kv_.check_conservation();
    if (!gpu_busy_) schedule_work(now);
  }
  if (completed && finished_count_ != static_cast<int>(requests_.size())) {
    throw SimulationError(
        "engine: no runnable work left with " +
        std::to_string(requests_.size() - finished_count_) +
        " unfinished requests (block starvation); queued=" +
        std::to_string(queue_.size()) + " pending_prefill=" +
        std::to_string(pending_prefill_.size()) + " decoding=" +
        std::to_string(decoding_.size()) + " gpu_free=" +
        std::to_string(kv_.gpu_blocks_free()) + "/" +
        std::to_string(kv_.gpu_blocks_total()) + " cpu_free=" +
        std::to_string(kv_.cpu_blocks_free()) + "/" +
        std::to_string(kv_.cpu_blocks_total()) + " t=" + std::to_string(now));
  }
  return build_report(now, completed);
}

void Engine::handle_arrival(std::int64_t index, double now) {
  SimRequest& r = requests_[static_cast<std::size_t>(index)];
  r.phase = Phase::Queued;
  Rng stream = Rng::substream(cfg_.seed, "predictor", static_cast<std::uint64_t>(index));
  r.predicted_bucket = predict_bucket(r.tmpl.output_tokens, buckets_, stream);
  queue_.push_back(index);
  (void)now;
}

void Engine::handle_prefill_complete(std::int64_t id, double now) {
  SimRequest& r = requests_[static_cast<std::size_t>(id)];
  r.first_token = now;
  r.last_token = now;
  r.tokens_emitted = 1;
  gpu_busy_ = false;
  if (r.tmpl.output_tokens == 1) {
    finish_request(id, now);
  } else {
    r.phase = Phase::Decoding;
    decoding_.push_back(id);
  }
}

void Engine::handle_decode_complete(double now) {
  gpu_busy_ = false;
  std::vector<std::int64_t> finished;
  for (std::int64_t id : current_batch_) {
    SimRequest& r = requests_[static_cast<std::size_t>(id)];
    kv_.note_token(id);
    r.tokens_emitted += 1;
    r.last_token = now;
    if (r.tokens_emitted >= r.tmpl.output_tokens) finished.push_back(id);
  }
  current_batch_.clear();
  for (std::int64_t id : finished) finish_request(id, now);
}

void Engine::finish_request(std::int64_t id, double now) {
  SimRequest& r = requests_[static_cast<std::size_t>(id)];
  r.phase = Phase::Finished;
  r.finish = now;
  kv_.release(id);
  decoding_.erase(std::remove(decoding_.begin(), decoding_.end(), id), decoding_.end());
  ++finished_count_;
}

void Engine::schedule_work(double now) {
  if (gpu_busy_) return;
  tick(now);
  if (!pending_prefill_.empty()) {
    std::int64_t id = pending_prefill_.front();
    pending_prefill_.pop_front();
    start_prefill(id, now);
    return;
  }
  if (!decoding_.empty()) {
    start_decode_iteration(now);
  }
}

void Engine::tick(double now) {
  if (cfg_.policy.kind == PolicyKind::BaselineRequestWise) {
    admit_baseline(now);
  } else {
    admit_layerkv(now);
  }
}

void Engine::check_feasibility(std::int64_t id) const {
  // Nothing running, nothing in flight, pools at their fullest: if the head
  // still does not fit the simulation can never make progress.
  const SimRequest& r = requests_[static_cast<std::size_t>(id)];
  if (!decoding_.empty() || !pending_prefill_.empty() || gpu_busy_) return;
  if (kv_.gpu_blocks_free() != kv_.gpu_blocks_total() ||
      kv_.cpu_blocks_free() != kv_.cpu_blocks_total()) {
    return;
  }
  std::int64_t per_layer = kv_.blocks_per_layer(r.tmpl.prompt_tokens);
  bool baseline = cfg_.policy.kind == PolicyKind::BaselineRequestWise;
  std::int64_t gpu_need = baseline ? per_layer * cfg_.model.n_layers : 0;
  std::int64_t cpu_need = baseline ? 0 : per_layer * cfg_.model.n_layers;
  if (gpu_need > kv_.gpu_blocks_total() || cpu_need > kv_.cpu_blocks_total()) {
    throw SimulationError("engine: request " + std::to_string(id) +
                          " can never be admitted (prompt " +
                          std::to_string(r.tmpl.prompt_tokens) +
                          " tokens exceeds pool capacity)");
  }
}

void Engine::growth_reserve(std::int64_t* gpu, std::int64_t* cpu) const {
  // Decode stalls never preempt, so every live request must stay able to
  // grow to completion out of headroom that admissions leave behind; this
  // reserve is the accounting stand-in for a real engine's preemption valve.
  std::int64_t g = 0, c = 0;
  int tpb = kv_.tokens_per_block();
  for (std::size_t i = 0; i < requests_.size(); ++i) {
    const SimRequest& r = requests_[i];
    if (r.phase != Phase::AwaitingPrefill && r.phase != Phase::Prefilling &&
        r.phase != Phase::Decoding) {
      continue;
    }
    std::int64_t id = static_cast<std::int64_t>(i);
    std::int64_t remaining =
        std::max<std::int64_t>(0, r.tmpl.output_tokens - r.tokens_emitted);
    std::int64_t rows = (remaining + tpb - 1) / tpb + 1;
    g += rows * kv_.gpu_row_cost(id);
    c += rows * kv_.cpu_row_cost(id);
  }
  *gpu = g;
  *cpu = c;
}

void Engine::admit_baseline(double now) {
  while (!queue_.empty()) {
    std::int64_t id = queue_.front();
    const SimRequest& r = requests_[static_cast<std::size_t>(id)];
    std::int64_t need = kv_.request_wise_gpu_blocks(r.tmpl.prompt_tokens);
    // Admission leaves headroom for every live request (this one included)
    // to append its remaining decode rows; stalls cannot preempt.
    std::int64_t reserve_gpu = 0, reserve_cpu = 0;
    growth_reserve(&reserve_gpu, &reserve_cpu);
    int tpb = kv_.tokens_per_block();
    std::int64_t own_rows = (r.tmpl.output_tokens + tpb - 1) / tpb + 1;
    reserve_gpu += own_rows * cfg_.model.n_layers;
    if (kv_.gpu_blocks_free() < need + reserve_gpu) {
      check_feasibility(id);
      break;  // FCFS head-of-line blocking
    }
    bool ok = kv_.allocate_prefill(id, r.tmpl.prompt_tokens, cfg_.model.n_layers);
    if (!ok) break;
    queue_.pop_front();
    requests_[static_cast<std::size_t>(id)].phase = Phase::AwaitingPrefill;
    requests_[static_cast<std::size_t>(id)].x_alloc = cfg_.model.n_layers;
    pending_prefill_.push_back(id);
  }
  (void)now;
}

int Engine::admission_layers(std::int64_t prompt_tokens, bool under_pressure) const {
  if (cfg_.force_retained_layers >= 0) {
    return std::min(cfg_.force_retained_layers, cfg_.model.n_layers);
  }
  if (!under_pressure) return cfg_.model.n_layers;
  return min_retained_layers(cfg_.model, cfg_.hw, cfg_.cost, prompt_tokens);
}

void Engine::admit_layerkv(double now) {
  // Eq. 2 budgets over requests that have produced at least one decode token.
  std::vector<double> budgets;
  for (std::int64_t id : decoding_) {
    const SimRequest& r = requests_[static_cast<std::size_t>(id)];
    std::int64_t n_past = r.tokens_emitted - 1;
    if (n_past < 1) continue;
    DecodingState st;
    st.t_past = now - r.first_token;
    st.n_past = n_past;
    st.predicted = buckets_.bucket(r.predicted_bucket);
    budgets.push_back(allow_prefill_budget(st, cfg_.slo));
  }
  double min_budget = std::numeric_limits<double>::infinity();
  for (double b : budgets) min_budget = std::min(min_budget, b);

  int n = 0;
  if (cfg_.policy.slo_scheduler_enabled) {
    std::vector<double> times;
    times.reserve(queue_.size());
    for (std::int64_t id : queue_) {
      times.push_back(prefill_time(cfg_.model, cfg_.hw, cfg_.cost,
                                   requests_[static_cast<std::size_t>(id)].tmpl.prompt_tokens));
    }
    double committed = 0.0;
    for (std::int64_t id : pending_prefill_) {
      committed += prefill_time(cfg_.model, cfg_.hw, cfg_.cost,
                                requests_[static_cast<std::size_t>(id)].tmpl.prompt_tokens);
    }
    n = max_admissions(times, budgets, committed);
  } else {
    n = static_cast<int>(queue_.size());
  }

  // Eq. 5 forecast under the planned admissions' request-wise demand.
  std::int64_t planned_blocks = 0;
  for (int k = 0; k < n; ++k) {
    planned_blocks += kv_.request_wise_gpu_blocks(
        requests_[static_cast<std::size_t>(queue_[static_cast<std::size_t>(k)])].tmpl.prompt_tokens);
  }
  std::vector<SeqForecast> seqs;
  seqs.reserve(decoding_.size());
  for (std::int64_t id : decoding_) {
    const SimRequest& r = requests_[static_cast<std::size_t>(id)];
    LengthBucket b = buckets_.bucket(r.predicted_bucket);
    std::int64_t median = (b.lo + b.hi) / 2;
    seqs.push_back({kv_.gpu_blocks_held(id),
                    std::max<std::int64_t>(0, median - r.tokens_emitted)});
  }
  std::vector<double> forecast =
      forecast_availability(static_cast<double>(kv_.gpu_blocks_free()),
                            cfg_.scheduler.horizon, seqs, planned_blocks, n);
  std::int64_t reclaim_half = 0, reclaim_full = 0;
  for (std::int64_t id : decoding_) {
    reclaim_half += kv_.offload_reclaim(id, OffloadMode::Half);
    reclaim_full += kv_.offload_reclaim(id, OffloadMode::Full);
  }
  OffloadPlanKind plan = offload_decision(forecast, static_cast<double>(threshold_blocks_),
                                          reclaim_half, reclaim_full);

  if (plan != OffloadPlanKind::None) {
    double min_avail = *std::min_element(forecast.begin(), forecast.end());
    std::int64_t needed = threshold_blocks_ - static_cast<std::int64_t>(min_avail);
    // Most recently processed first: descending prefill completion.
    std::vector<std::int64_t> candidates(decoding_.begin(), decoding_.end());
    std::sort(candidates.begin(), candidates.end(),
              [this](std::int64_t a, std::int64_t b) {
                const SimRequest& ra = requests_[static_cast<std::size_t>(a)];
                const SimRequest& rb = requests_[static_cast<std::size_t>(b)];
                if (ra.first_token != rb.first_token) return ra.first_token > rb.first_token;
                return a > b;
              });
    std::int64_t credited = 0;
    OffloadMode mode = plan == OffloadPlanKind::Half ? OffloadMode::Half : OffloadMode::Full;
    for (std::int64_t id : candidates) {
      if (credited >= needed) break;
      auto job = kv_.plan_offload(id, mode);
      if (!job) break;  // CPU pool exhausted; stop escalating
      if (job->job_id < 0) continue;
      TransferJob t{job->bytes, Direction::DeviceToHost, now, cfg_.chunk_bytes};
      TransferSchedule sched = bus_.submit_transfer(t, cfg_.hw);
      push_event(sched.completion, EventType::TransferComplete, job->job_id);
      credited += job->gpu_blocks;
    }
  }

  int admitted = 0;
  for (int k = 0; k < n && !queue_.empty(); ++k) {
    std::int64_t id = queue_.front();
    SimRequest& r = requests_[static_cast<std::size_t>(id)];
    std::int64_t reserve_gpu = 0, reserve_cpu = 0;
    growth_reserve(&reserve_gpu, &reserve_cpu);
    std::int64_t per_layer = kv_.blocks_per_layer(r.tmpl.prompt_tokens);
    int tpb = kv_.tokens_per_block();
    std::int64_t own_rows = (r.tmpl.output_tokens + tpb - 1) / tpb + 1;
    auto fits = [&](int layers) {
      std::int64_t gpu_need = per_layer * layers + own_rows * layers;
      std::int64_t cpu_need = per_layer * (cfg_.model.n_layers - layers) +
                              own_rows * (cfg_.model.n_layers - layers);
      return kv_.gpu_blocks_free() >= gpu_need + reserve_gpu &&
             kv_.cpu_blocks_free() >= cpu_need + reserve_cpu;
    };
    int x = admission_layers(r.tmpl.prompt_tokens, plan != OffloadPlanKind::None);
    bool ok = fits(x) && kv_.allocate_prefill(id, r.tmpl.prompt_tokens, x);
    if (!ok && x == cfg_.model.n_layers && cfg_.force_retained_layers < 0) {
      // The forecast missed; fall back to the overlap-safe minimum retention.
      x = min_retained_layers(cfg_.model, cfg_.hw, cfg_.cost, r.tmpl.prompt_tokens);
      ok = fits(x) && kv_.allocate_prefill(id, r.tmpl.prompt_tokens, x);
    }
    if (!ok) {
      check_feasibility(id);
      break;  // FCFS: no skipping ahead
    }
    queue_.pop_front();
    r.phase = Phase::AwaitingPrefill;
    r.x_alloc = x;
    pending_prefill_.push_back(id);
    ++admitted;
  }
  if (cfg_.keep_decision_log && (admitted > 0 || plan != OffloadPlanKind::None)) {
    decision_log_.push_back({now, min_budget, admitted, plan});
  }
}

void Engine::start_prefill(std::int64_t id, double now) {
  SimRequest& r = requests_[static_cast<std::size_t>(id)];
  r.phase = Phase::Prefilling;
  r.prefill_start = now;
  gpu_busy_ = true;
  PlacementPlan plan = layer_placement(cfg_.model.n_layers, r.x_alloc);
  PrefillSchedule sched =
      schedule_prefill_span(cfg_.model, cfg_.hw, cfg_.cost, bus_, plan.offloaded,
                            r.tmpl.prompt_tokens, now, cfg_.chunk_bytes, true);
  push_event(sched.completion, EventType::PrefillComplete, id);
}

bool Engine::start_decode_iteration(double now) {
  current_batch_.clear();
  std::int64_t batch_kv = 0;
  for (std::int64_t id : decoding_) {
    if (kv_.needs_append(id) && !kv_.append_decode_block(id)) {
      continue;  // no blocks: this request sits the iteration out
    }
    std::int64_t tokens = kv_.request(id).cached_tokens;
    if (!current_batch_.empty() && batch_kv + tokens > cfg_.max_batch_tokens) {
      break;  // FCFS cap: later requests wait rather than jump ahead
    }
    current_batch_.push_back(id);
    batch_kv += tokens;
  }
  if (current_batch_.empty()) return false;

  double base = decode_step_time(cfg_.model, cfg_.hw, cfg_.cost, batch_kv);
  double per_layer = base / cfg_.model.n_layers;
  double ar = allreduce_time(cfg_.model, cfg_.hw,
                             static_cast<std::int64_t>(current_batch_.size()));

  // Layer-by-layer pipeline: layer l computes once its CPU-resident KV has
  // arrived; fetches stream through the shared bus in layer order.
  std::vector<std::vector<FetchJob>> fetches;
  fetches.reserve(current_batch_.size());
  for (std::int64_t id : current_batch_) fetches.push_back(kv_.plan_decode_fetch(id));
  std::vector<std::size_t> cursor(current_batch_.size(), 0);

  double elapsed = 0.0;
  for (int l = 0; l < cfg_.model.n_layers; ++l) {
    double fetch_ready = -1.0;
    for (std::size_t m = 0; m < current_batch_.size(); ++m) {
      auto& plan = fetches[m];
      auto& c = cursor[m];
      if (c < plan.size() && plan[c].layer == l) {
        TransferJob job{plan[c].bytes, Direction::HostToDevice, now, cfg_.chunk_bytes};
        TransferSchedule sched = bus_.submit_transfer(job, cfg_.hw);
        fetch_ready = std::max(fetch_ready, sched.completion);
        ++c;
      }
    }
    double start_layer = std::max(now + elapsed, fetch_ready);
    elapsed = (start_layer - now) + per_layer;
    if (ar > 0.0) bus_.register_allreduce(now + elapsed - ar, ar, cfg_.hw);
  }
  gpu_busy_ = true;
  push_event(now + elapsed, EventType::DecodeIterationComplete, -1);
  return true;
}

MetricsReport Engine::build_report(double now, bool completed) const {
  std::vector<RequestMetrics> rows;
  rows.reserve(requests_.size());
  double makespan = 0.0;
  for (const auto& r : requests_) {
    if (r.phase != Phase::Finished) continue;
    RequestMetrics m;
    m.id = r.tmpl.id;
    m.arrival = r.tmpl.arrival;
    m.queuing = r.prefill_start - r.tmpl.arrival;
    m.prefill = r.first_token - r.prefill_start;
    m.ttft = m.queuing + m.prefill;
    m.output_tokens = r.tmpl.output_tokens;
    m.mean_tpot = r.tmpl.output_tokens > 1
                      ? (r.last_token - r.first_token) / (r.tmpl.output_tokens - 1)
                      : 0.0;
    rows.push_back(m);
    makespan = std::max(makespan, r.finish);
  }
  if (!completed) makespan = now;
  return MetricsReport::aggregate(std::move(rows), makespan, completed,
                                  cfg_.slo.ttft_slo, cfg_.slo.tpot_slo);
}

}  // namespace layersim
