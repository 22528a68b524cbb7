#include "layersim/scheduler.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace layersim {

void SLOSpec::validate() const {
  if (ttft_slo <= 0.0 || tpot_slo <= 0.0) {
    throw std::invalid_argument("SLOSpec: thresholds must be positive");
  }
}

LengthBuckets::LengthBuckets(std::vector<int> bounds, int max_len, double accuracy)
    : accuracy_(accuracy) {
  if (accuracy < 0.0 || accuracy > 1.0) {
    throw std::invalid_argument("LengthBuckets: accuracy must be in [0, 1]");
  }
  edges_.push_back(1);
  for (int b : bounds) {
    if (b <= edges_.back()) {
      throw std::invalid_argument("LengthBuckets: boundaries must be strictly increasing");
    }
    edges_.push_back(b);
  }
  if (max_len + 1 <= edges_.back()) {
    throw std::invalid_argument("LengthBuckets: max_len below last boundary");
  }
  edges_.push_back(max_len + 1);
}

LengthBuckets LengthBuckets::deciles_of(std::vector<int> lengths, double accuracy) {
  if (lengths.empty()) {
    throw std::invalid_argument("LengthBuckets: empty length sample");
  }
  std::sort(lengths.begin(), lengths.end());
  int max_len = lengths.back();
  std::vector<int> bounds;
  for (int k = 1; k < 10; ++k) {
    std::size_t idx = k * lengths.size() / 10;
    int b = lengths[std::min(idx, lengths.size() - 1)];
    // A boundary at or below the sample minimum would leave an empty bucket;
    // duplicates collapse (degenerate fixed-length workloads end up with one).
    if (b > 1 && b > lengths.front() && b <= max_len &&
        (bounds.empty() || b > bounds.back())) {
      bounds.push_back(b);
    }
  }
  return LengthBuckets(std::move(bounds), max_len, accuracy);
}

LengthBucket LengthBuckets::bucket(int index) const {
  return {edges_[static_cast<std::size_t>(index)],
          edges_[static_cast<std::size_t>(index) + 1]};
}

int LengthBuckets::bucket_of(int length) const {
  for (int i = 0; i < bucket_count(); ++i) {
    if (length < edges_[static_cast<std::size_t>(i) + 1]) return i;
  }
  return bucket_count() - 1;  // lengths past the top edge land in the last range
}

int predict_bucket(int true_output_len, const LengthBuckets& buckets, Rng& stream) {
  if (true_output_len < 1) {
    throw std::invalid_argument("predict_bucket: length must be >= 1");
  }
  int truth = buckets.bucket_of(true_output_len);
  if (buckets.bucket_count() == 1) return truth;
  if (stream.uniform01() < buckets.accuracy()) return truth;
  // Misprediction lands on a uniformly chosen neighbor, clamped at the ends.
  if (truth == 0) return 1;
  if (truth == buckets.bucket_count() - 1) return truth - 1;
  return stream.uniform01() < 0.5 ? truth - 1 : truth + 1;
}

std::int64_t future_tokens(const DecodingState& state) {
  return std::max<std::int64_t>(1, state.predicted.lo - state.n_past);
}

double allow_prefill_budget(const DecodingState& state, const SLOSpec& slo) {
  if (state.n_past < 1) {
    throw std::invalid_argument("allow_prefill_budget: n_past must be >= 1");
  }
  double n_future = static_cast<double>(future_tokens(state));
  double tpot_current = state.t_past / static_cast<double>(state.n_past);
  double t_future = tpot_current * n_future;
  return slo.tpot_slo * (static_cast<double>(state.n_past) + n_future) -
         (state.t_past + t_future);
}

int max_admissions(std::span<const double> queue_prefill_times,
                   std::span<const double> budgets, double initial_cost) {
  double limit = std::numeric_limits<double>::infinity();
  for (double b : budgets) limit = std::min(limit, b);
  int n = 0;
  double cum = initial_cost;
  for (double t : queue_prefill_times) {
    cum += t;
    if (!(cum < limit)) break;
    ++n;
  }
  return n;
}

std::vector<double> forecast_availability(double avail0, int horizon,
                                          std::span<const SeqForecast> decoding,
                                          std::int64_t planned_admission_blocks,
                                          int planned_count) {
  if (horizon < 1) {
    throw std::invalid_argument("forecast_availability: horizon must be >= 1");
  }
  std::vector<double> avail;
  avail.reserve(static_cast<std::size_t>(horizon) + 1);
  avail.push_back(avail0);
  for (int t = 0; t < horizon; ++t) {
    double released = 0.0;
    double live = 0.0;
    for (const auto& seq : decoding) {
      if (seq.stages_to_finish == t) released += static_cast<double>(seq.gpu_blocks_held);
      if (seq.stages_to_finish > t) live += 1.0;
    }
    double allocated = live;
    if (t == 0) {
      allocated += static_cast<double>(planned_admission_blocks);
    } else {
      allocated += static_cast<double>(planned_count);  // admitted sequences keep growing
    }
    avail.push_back(avail.back() + released - allocated);
  }
  return avail;
}

OffloadPlanKind offload_decision(std::span<const double> forecast, double threshold,
                                 std::int64_t reclaim_half, std::int64_t reclaim_full) {
  double min_avail = std::numeric_limits<double>::infinity();
  for (double a : forecast) min_avail = std::min(min_avail, a);
  if (min_avail >= threshold) return OffloadPlanKind::None;
  if (min_avail + static_cast<double>(reclaim_half) >= threshold) {
    return OffloadPlanKind::Half;
  }
  (void)reclaim_full;
  return OffloadPlanKind::Full;
}

}  // namespace layersim
