#include "layersim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace layersim {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

MetricsReport MetricsReport::aggregate(std::vector<RequestMetrics> rows, double makespan,
                                       bool completed, double ttft_slo, double tpot_slo) {
  MetricsReport rep;
  rep.makespan = makespan;
  rep.completed = completed;
  std::sort(rows.begin(), rows.end(),
            [](const RequestMetrics& a, const RequestMetrics& b) { return a.id < b.id; });
  rep.per_request = std::move(rows);
  if (rep.per_request.empty()) return rep;

  std::vector<double> ttfts;
  ttfts.reserve(rep.per_request.size());
  double sum_ttft = 0.0, sum_tpot = 0.0, sum_q = 0.0, sum_p = 0.0;
  for (auto& r : rep.per_request) {
    r.violated_ttft = r.ttft > ttft_slo;
    r.violated_tpot = r.output_tokens > 1 && r.mean_tpot > tpot_slo;
    r.violated = r.violated_ttft || r.violated_tpot;
    ttfts.push_back(r.ttft);
    sum_ttft += r.ttft;
    sum_tpot += r.mean_tpot;
    sum_q += r.queuing;
    sum_p += r.prefill;
    rep.total_output_tokens += r.output_tokens;
    if (r.violated) ++rep.violations;
    if (r.violated_ttft) ++rep.violations_ttft;
    if (r.violated_tpot) ++rep.violations_tpot;
  }
  double n = static_cast<double>(rep.per_request.size());
  rep.mean_ttft = sum_ttft / n;
  rep.mean_tpot = sum_tpot / n;
  rep.mean_queuing = sum_q / n;
  rep.mean_prefill = sum_p / n;
  rep.queuing_fraction = rep.mean_ttft > 0.0 ? rep.mean_queuing / rep.mean_ttft : 0.0;
  rep.p50_ttft = percentile(ttfts, 0.50);
  rep.p99_ttft = percentile(ttfts, 0.99);
  rep.violation_rate = rep.violations / n;
  rep.throughput_tokens_per_s =
      makespan > 0.0 ? static_cast<double>(rep.total_output_tokens) / makespan : 0.0;
  return rep;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["requests"] = per_request.size();
  j["completed"] = completed;
  j["mean_ttft_s"] = mean_ttft;
  j["p50_ttft_s"] = p50_ttft;
  j["p99_ttft_s"] = p99_ttft;
  j["mean_tpot_s"] = mean_tpot;
  j["mean_queuing_s"] = mean_queuing;
  j["mean_prefill_s"] = mean_prefill;
  j["queuing_fraction"] = queuing_fraction;
  j["throughput_tokens_per_s"] = throughput_tokens_per_s;
  j["violation_rate"] = violation_rate;
  j["violations"] = violations;
  j["violations_ttft"] = violations_ttft;
  j["violations_tpot"] = violations_tpot;
  j["total_output_tokens"] = total_output_tokens;
  j["makespan_s"] = makespan;
  return j.dump(2);
}

std::string MetricsReport::requests_csv() const {
  std::ostringstream os;
  os << "id,arrival,queuing_s,prefill_s,ttft_s,mean_tpot_s,output_tokens,violated\n";
  for (const auto& r : per_request) {
    os << r.id << ',' << format_double(r.arrival) << ',' << format_double(r.queuing)
       << ',' << format_double(r.prefill) << ',' << format_double(r.ttft) << ','
       << format_double(r.mean_tpot) << ',' << r.output_tokens << ','
       << (r.violated ? 1 : 0) << "\n";
  }
  return os.str();
}

void MetricsReport::write_requests_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << requests_csv();
}

}  // namespace layersim
