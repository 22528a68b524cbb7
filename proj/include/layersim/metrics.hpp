#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace layersim {

struct RequestMetrics {
  std::int64_t id = 0;
  double arrival = 0.0;
  double queuing = 0.0;  // arrival -> prefill start
  double prefill = 0.0;  // prefill start -> first token
  double ttft = 0.0;     // queuing + prefill
  double mean_tpot = 0.0;  // 0 for single-token outputs
  int output_tokens = 0;
  bool violated = false;
  bool violated_ttft = false;
  bool violated_tpot = false;
};

struct MetricsReport {
  std::vector<RequestMetrics> per_request;  // ordered by request id

  double mean_ttft = 0.0;
  double p50_ttft = 0.0;
  double p99_ttft = 0.0;
  double mean_tpot = 0.0;
  double mean_queuing = 0.0;
  double mean_prefill = 0.0;
  double queuing_fraction = 0.0;  // mean_queuing / mean_ttft
  double throughput_tokens_per_s = 0.0;
  double violation_rate = 0.0;
  int violations = 0;
  int violations_ttft = 0;
  int violations_tpot = 0;
  std::int64_t total_output_tokens = 0;
  double makespan = 0.0;  // last completion time
  bool completed = true;  // false when the wall-clock cap fired

  static MetricsReport aggregate(std::vector<RequestMetrics> rows, double makespan,
                                 bool completed, double ttft_slo, double tpot_slo);

  std::string to_json() const;  // self-describing summary object
  std::string requests_csv() const;
  void write_requests_csv(const std::string& path) const;
};

// Stable float formatting shared by every CSV/JSON writer ("%.9g").
std::string format_double(double v);

// Nearest-rank percentile of an unsorted sample; q in (0, 1].
double percentile(std::vector<double> values, double q);

}  // namespace layersim
