#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "layersim/rng.hpp"

namespace layersim {

struct SLOSpec {
  double ttft_slo = 3.0;  // seconds
  double tpot_slo = 0.2;  // seconds per token

  void validate() const;  // throws std::invalid_argument
};

// Output-length range [lo, hi).
struct LengthBucket {
  int lo = 1;
  int hi = 2;
};

// Percentile ranges over possible generation lengths. Boundaries are strictly
// increasing and cover [1, max_len].
class LengthBuckets {
 public:
  // bounds = interior boundaries; buckets are [1,b0), [b0,b1), ..., [bk, max+1).
  LengthBuckets(std::vector<int> bounds, int max_len, double accuracy);

  // Deciles of an observed length sample (duplicates collapse).
  static LengthBuckets deciles_of(std::vector<int> lengths, double accuracy);

  int bucket_count() const { return static_cast<int>(edges_.size()) - 1; }
  LengthBucket bucket(int index) const;
  int bucket_of(int length) const;
  double accuracy() const { return accuracy_; }

 private:
  std::vector<int> edges_;  // size bucket_count+1, edges_[0] == 1
  double accuracy_;
};

// Oracle stand-in for the multi-class length classifier: returns the true
// bucket with probability `accuracy`, otherwise a uniformly chosen adjacent
// bucket (clamped at the ends). Deterministic given the stream.
int predict_bucket(int true_output_len, const LengthBuckets& buckets, Rng& stream);

// One decoding request as the admission logic sees it.
struct DecodingState {
  double t_past = 0.0;       // seconds in decode phase, waits included
  std::int64_t n_past = 0;   // tokens generated in decode phase
  LengthBucket predicted;
};

// Conservative remaining-length estimate: max(1, predicted.lo - n_past).
std::int64_t future_tokens(const DecodingState& state);

// Slack before this request's TPOT SLO is at risk (may be negative):
//   T_future = (t_past / n_past) * n_future
//   budget   = tpot_slo * (n_past + n_future) - (t_past + T_future)
double allow_prefill_budget(const DecodingState& state, const SLOSpec& slo);

// Largest n with initial_cost + sum of the first n prefill times strictly
// below every budget. FCFS: the admitted set is always a queue prefix. An
// empty budget set means no decoding constraint (n limited by queue length).
// initial_cost carries prefill work already committed but not yet executed.
int max_admissions(std::span<const double> queue_prefill_times,
                   std::span<const double> budgets, double initial_cost = 0.0);

// Per-sequence inputs to the availability forecast.
struct SeqForecast {
  std::int64_t gpu_blocks_held = 0;
  std::int64_t stages_to_finish = 0;  // max(0, predicted median - n_past)
};

// Iterates Avail(t+1) = Avail(t) + Released(t) - Allocated(t) for `horizon`
// stages and returns [Avail(0), ..., Avail(horizon)]. Released(t) credits the
// GPU blocks of sequences whose predicted median is reached at stage t.
// Allocated(t) charges one block per still-live sequence per stage, plus the
// planned admissions' allocation at stage 0 (planned_count joins the
// per-stage charge afterwards).
std::vector<double> forecast_availability(double avail0, int horizon,
                                          std::span<const SeqForecast> decoding,
                                          std::int64_t planned_admission_blocks,
                                          int planned_count);

enum class OffloadPlanKind { None, Half, Full };

// Offload escalation trigger: nothing while the forecast minimum stays at or
// above the threshold; half offload when it dips below and the reclaimed
// blocks restore it; full offload otherwise.
OffloadPlanKind offload_decision(std::span<const double> forecast, double threshold,
                                 std::int64_t reclaim_half, std::int64_t reclaim_full);

}  // namespace layersim
