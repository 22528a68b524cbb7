#include "layersim/scheduler.hpp"

#include <algorithm>

#include "doctest.h"

using namespace layersim;

namespace {

LengthBuckets three_buckets(double accuracy) {
  // [1,100), [100,200), [200,400)
  return LengthBuckets({100, 200}, 399, accuracy);
}

// Independent oracle for Algorithm 1: enumerate every queue prefix.
int brute_force_admissions(const std::vector<double>& times,
                           const std::vector<double>& budgets, double initial) {
  double limit = std::numeric_limits<double>::infinity();
  for (double b : budgets) limit = std::min(limit, b);
  int best = 0;
  for (std::size_t n = 1; n <= times.size(); ++n) {
    double sum = initial;
    for (std::size_t k = 0; k < n; ++k) sum += times[k];
    if (sum < limit) best = static_cast<int>(n);
  }
  return best;
}

}  // namespace

TEST_CASE("predict_bucket with a perfect oracle") {
  LengthBuckets b = three_buckets(1.0);
  Rng rng(1);
  int idx = predict_bucket(150, b, rng);
  CHECK(b.bucket(idx).lo == 100);
  CHECK(b.bucket(idx).hi == 200);
}

TEST_CASE("predict_bucket at accuracy zero returns an adjacent bucket") {
  LengthBuckets b = three_buckets(0.0);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    int idx = predict_bucket(150, b, rng);
    CHECK(idx != 1);
    CHECK((idx == 0 || idx == 2));
  }
  // End buckets clamp to their single neighbor.
  for (int i = 0; i < 50; ++i) {
    CHECK(predict_bucket(50, b, rng) == 1);
    CHECK(predict_bucket(300, b, rng) == 1);
  }
}

TEST_CASE("predict_bucket empirical hit rate tracks the accuracy") {
  LengthBuckets b = three_buckets(0.8);
  Rng rng(42);
  int hits = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    if (predict_bucket(150, b, rng) == 1) ++hits;
  }
  double rate = static_cast<double>(hits) / draws;
  CHECK(rate >= 0.78);
  CHECK(rate <= 0.82);
}

TEST_CASE("single-bucket predictors are always right") {
  LengthBuckets b({}, 100, 0.0);
  Rng rng(3);
  CHECK(predict_bucket(50, b, rng) == 0);
}

TEST_CASE("deciles_of builds increasing boundaries covering the sample") {
  std::vector<int> lengths;
  for (int i = 1; i <= 1000; ++i) lengths.push_back(i);
  LengthBuckets b = LengthBuckets::deciles_of(lengths, 0.8);
  CHECK(b.bucket_count() == 10);
  CHECK(b.bucket_of(1) == 0);
  CHECK(b.bucket_of(1000) == b.bucket_count() - 1);
  for (int i = 0; i < b.bucket_count(); ++i) {
    CHECK(b.bucket(i).lo < b.bucket(i).hi);
  }
  // Degenerate fixed-length sample collapses to one bucket.
  LengthBuckets fixed = LengthBuckets::deciles_of(std::vector<int>(100, 64), 0.8);
  CHECK(fixed.bucket_count() == 1);
}

TEST_CASE("future_tokens is the clamped lower-bound gap") {
  DecodingState st;
  st.predicted = {100, 200};
  st.n_past = 20;
  CHECK(future_tokens(st) == 80);
  st.n_past = 120;
  CHECK(future_tokens(st) == 1);
  st.predicted = {1, 2};
  st.n_past = 1;
  CHECK(future_tokens(st) == 1);
}

TEST_CASE("allow_prefill_budget worked examples") {
  SLOSpec slo;
  slo.tpot_slo = 0.2;
  DecodingState st;
  st.n_past = 10;
  st.t_past = 1.0;
  st.predicted = {15, 16};  // n_future = 5
  // T_future = 0.1 * 5 = 0.5; budget = 0.2*15 - 1.5 = 1.5
  CHECK(allow_prefill_budget(st, slo) == doctest::Approx(1.5).epsilon(1e-12));

  SLOSpec tight;
  tight.tpot_slo = 0.1;
  DecodingState st2;
  st2.n_past = 10;
  st2.t_past = 2.0;
  st2.predicted = {1, 2};  // n_future clamps to 1
  // budget = 0.1*11 - (2.0 + 0.2) = -1.1
  CHECK(allow_prefill_budget(st2, tight) == doctest::Approx(-1.1).epsilon(1e-12));
}

TEST_CASE("budget sign matches the SLO pace boundary") {
  // budget = (n_past + n_future) * (tpot_slo - tpot_current), so the sign is
  // decided entirely by the request's observed pace.
  SLOSpec slo;
  slo.tpot_slo = 0.2;
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    DecodingState st;
    st.n_past = 1 + static_cast<std::int64_t>(rng.uniform_below(500));
    double tpot = 0.05 + 0.3 * rng.uniform01();
    st.t_past = tpot * static_cast<double>(st.n_past);
    int lo = 1 + static_cast<int>(rng.uniform_below(600));
    st.predicted = {lo, lo + 100};
    double budget = allow_prefill_budget(st, slo);
    if (tpot < slo.tpot_slo) CHECK(budget > 0.0);
    if (tpot > slo.tpot_slo) CHECK(budget < 0.0);
  }
}

TEST_CASE("max_admissions worked examples") {
  std::vector<double> times = {0.5, 0.6, 0.7};
  std::vector<double> budgets = {1.5};
  CHECK(max_admissions(times, budgets) == 2);  // 1.1 < 1.5, 1.8 is not

  CHECK(max_admissions({}, budgets) == 0);

  std::vector<double> negative = {-0.1};
  CHECK(max_admissions(times, negative) == 0);

  // No decoding constraint: the whole queue qualifies.
  CHECK(max_admissions(times, {}) == 3);

  // Committed-but-unexecuted prefill work counts against the budget:
  // 0.9 + 0.5 = 1.4 clears 1.5, 0.9 + 1.1 does not.
  CHECK(max_admissions(times, budgets, 0.9) == 1);
}

TEST_CASE("max_admissions equals brute-force prefix enumeration") {
  Rng rng(77);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> times(rng.uniform_below(9));
    for (auto& t : times) t = 0.05 + rng.uniform01();
    std::vector<double> budgets(rng.uniform_below(9));
    for (auto& b : budgets) b = -1.0 + 6.0 * rng.uniform01();
    double initial = rng.uniform_below(2) ? rng.uniform01() : 0.0;
    int fast = max_admissions(times, budgets, initial);
    int slow = brute_force_admissions(times, budgets, initial);
    CHECK(fast == slow);
    // The returned n satisfies the strict inequality and n+1 fails it.
    double limit = std::numeric_limits<double>::infinity();
    for (double b : budgets) limit = std::min(limit, b);
    double sum = initial;
    for (int k = 0; k < fast; ++k) sum += times[static_cast<std::size_t>(k)];
    if (fast > 0) CHECK(sum < limit);
    if (fast < static_cast<int>(times.size())) {
      CHECK(!(sum + times[static_cast<std::size_t>(fast)] < limit));
    }
  }
}

TEST_CASE("forecast_availability identity when nothing flows") {
  std::vector<double> f = forecast_availability(42.0, 5, {}, 0, 0);
  REQUIRE(f.size() == 6);
  for (double a : f) CHECK(a == 42.0);
}

TEST_CASE("forecast_availability single-stage worked example") {
  // Avail(0)=100, Released(0)=8, Allocated(0)=25 -> Avail(1)=83.
  std::vector<SeqForecast> seqs = {{8, 0}};
  std::vector<double> f = forecast_availability(100.0, 1, seqs, 25, 0);
  REQUIRE(f.size() == 2);
  CHECK(f[0] == 100.0);
  CHECK(f[1] == 83.0);
}

TEST_CASE("forecast drains one block per live sequence per stage") {
  std::vector<SeqForecast> seqs = {{10, 100}, {10, 100}, {10, 100}};
  std::vector<double> f = forecast_availability(50.0, 4, seqs, 0, 0);
  REQUIRE(f.size() == 5);
  for (int t = 0; t <= 4; ++t) CHECK(f[static_cast<std::size_t>(t)] == 50.0 - 3.0 * t);
}

TEST_CASE("offload_decision boundaries") {
  double threshold = 10.0;
  // Exactly at the threshold: strict "below" does not trigger.
  CHECK(offload_decision(std::vector<double>{15.0, 10.0}, threshold, 5, 20) ==
        OffloadPlanKind::None);
  // One below, half reclaims enough.
  CHECK(offload_decision(std::vector<double>{15.0, 9.0}, threshold, 5, 20) ==
        OffloadPlanKind::Half);
  // Far below: half is insufficient, escalate to full.
  CHECK(offload_decision(std::vector<double>{15.0, -20.0}, threshold, 5, 200) ==
        OffloadPlanKind::Full);
}
