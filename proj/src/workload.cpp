#include "layersim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"
#include "layersim/rng.hpp"

namespace layersim {

void Trace::validate() const {
  std::unordered_set<std::int64_t> ids;
  double prev_arrival = 0.0;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& r = requests[i];
    if (r.arrival < 0.0 || r.prompt_tokens < 1 || r.output_tokens < 1) {
      throw std::invalid_argument("Trace: request " + std::to_string(r.id) +
                                  " violates arrival/length invariants");
    }
    if (!ids.insert(r.id).second) {
      throw std::invalid_argument("Trace: duplicate request id " + std::to_string(r.id));
    }
    if (i > 0 && r.arrival < prev_arrival) {
      throw std::invalid_argument("Trace: arrivals not sorted at index " + std::to_string(i));
    }
    prev_arrival = r.arrival;
  }
}

Trace generate_fixed(int n, int prompt_tokens, int output_tokens, double rate,
                     std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_fixed: n must be >= 1");
  if (rate <= 0.0) throw std::invalid_argument("generate_fixed: rate must be > 0");
  if (prompt_tokens < 1 || output_tokens < 1) {
    throw std::invalid_argument("generate_fixed: token counts must be >= 1");
  }
  Trace trace;
  trace.seed = seed;
  Rng arrivals = Rng::substream(seed, "workload.arrivals");
  double t = 0.0;
  trace.requests.reserve(n);
  for (int i = 0; i < n; ++i) {
    t += arrivals.exponential(1.0 / rate);
    trace.requests.push_back({i, t, prompt_tokens, output_tokens});
  }
  trace.validate();
  return trace;
}

namespace {

int clamped_lognormal(Rng& rng, const ShareGptParams& p) {
  double v = rng.lognormal(p.mu, p.sigma);
  int len = static_cast<int>(std::lround(v));
  return std::clamp(len, p.min_len, p.max_len);
}

}  // namespace

Trace generate_sharegpt_like(int n, double rate, std::uint64_t seed,
                             const ShareGptParams& params) {
  if (n < 1) throw std::invalid_argument("generate_sharegpt_like: n must be >= 1");
  if (rate <= 0.0) throw std::invalid_argument("generate_sharegpt_like: rate must be > 0");
  Trace trace;
  trace.seed = seed;
  Rng arrivals = Rng::substream(seed, "workload.arrivals");
  Rng lengths = Rng::substream(seed, "workload.lengths");
  double t = 0.0;
  trace.requests.reserve(n);
  for (int i = 0; i < n; ++i) {
    t += arrivals.exponential(1.0 / rate);
    int prompt = clamped_lognormal(lengths, params);
    int output = clamped_lognormal(lengths, params);
    trace.requests.push_back({i, t, prompt, output});
  }
  trace.validate();
  return trace;
}

Trace load_trace(const std::string& path, bool* warned_unsorted) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_trace: cannot open " + path);
  Trace trace;
  std::string line;
  int line_no = 0;
  std::int64_t next_id = 0;
  bool sorted = true;
  double prev_arrival = 0.0;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": parse error: " + e.what());
    }
    for (const char* key : {"arrival_s", "prompt_tokens", "output_tokens"}) {
      if (!rec.contains(key)) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": missing field '" + key + "'");
      }
    }
    RequestTemplate r;
    r.id = rec.value("id", next_id);
    r.arrival = rec["arrival_s"].get<double>();
    r.prompt_tokens = rec["prompt_tokens"].get<int>();
    r.output_tokens = rec["output_tokens"].get<int>();
    if (r.arrival < 0.0 || r.prompt_tokens < 1 || r.output_tokens < 1) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": invariant violation (arrival >= 0, token counts >= 1)");
    }
    if (!trace.requests.empty() && r.arrival < prev_arrival) sorted = false;
    prev_arrival = r.arrival;
    trace.requests.push_back(r);
    ++next_id;
  }
  if (trace.requests.empty()) {
    throw std::runtime_error("load_trace: " + path + " contains no records");
  }
  if (!sorted) {
    std::stable_sort(trace.requests.begin(), trace.requests.end(),
                     [](const RequestTemplate& a, const RequestTemplate& b) {
                       return a.arrival < b.arrival;
                     });
  }
  if (warned_unsorted) *warned_unsorted = !sorted;
  trace.validate();
  return trace;
}

void save_trace(const Trace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_trace: cannot open " + path);
  for (const auto& r : trace.requests) {
    nlohmann::json rec = {{"id", r.id},
                          {"arrival_s", r.arrival},
                          {"prompt_tokens", r.prompt_tokens},
                          {"output_tokens", r.output_tokens}};
    out << rec.dump() << "\n";
  }
}

}  // namespace layersim
