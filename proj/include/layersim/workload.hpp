#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace layersim {

struct RequestTemplate {
  std::int64_t id = 0;
  double arrival = 0.0;  // seconds since simulation start
  int prompt_tokens = 0;
  int output_tokens = 0;  // true generation length; the scheduler only sees
                          // it through the bucket predictor
};

struct Trace {
  std::vector<RequestTemplate> requests;  // sorted by arrival
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
};

// Length parameters of the ShareGPT-like surrogate: log-normal(mu, sigma)
// clamped to [min_len, max_len], applied to prompt and output independently.
struct ShareGptParams {
  double mu = 5.0;
  double sigma = 1.0;
  int min_len = 4;
  int max_len = 2300;
};

// n identical-length requests with Poisson arrivals of the given rate.
Trace generate_fixed(int n, int prompt_tokens, int output_tokens, double rate,
                     std::uint64_t seed);

// Heavy-tailed conversational lengths in [4, 2300], Poisson arrivals.
Trace generate_sharegpt_like(int n, double rate, std::uint64_t seed,
                             const ShareGptParams& params = {});

// One JSON object per line with keys arrival_s, prompt_tokens, output_tokens;
// '#' lines are comments. Records out of arrival order are sorted on load and
// *warned_unsorted is set. Malformed records raise std::runtime_error naming
// the line.
Trace load_trace(const std::string& path, bool* warned_unsorted = nullptr);

void save_trace(const Trace& trace, const std::string& path);

}  // namespace layersim
