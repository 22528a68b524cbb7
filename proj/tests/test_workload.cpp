#include "layersim/workload.hpp"

#include <cstdio>
#include <fstream>

#include "doctest.h"

using namespace layersim;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& content) {
    path = std::string("layersim_test_trace_") + std::to_string(rand()) + ".jsonl";
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("generate_fixed basics") {
  Trace t = generate_fixed(1, 100, 10, 2.0, 42);
  REQUIRE(t.requests.size() == 1);
  CHECK(t.requests[0].prompt_tokens == 100);
  CHECK(t.requests[0].output_tokens == 10);
  CHECK(t.requests[0].arrival >= 0.0);
}

TEST_CASE("generate_fixed inter-arrival mean within 5% of 1/rate") {
  Trace t = generate_fixed(10000, 128, 16, 1.0, 7);
  double last = 0.0;
  double sum = 0.0;
  for (const auto& r : t.requests) {
    sum += r.arrival - last;
    last = r.arrival;
  }
  double mean = sum / 10000.0;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("generation is deterministic under a fixed seed") {
  Trace a = generate_fixed(500, 256, 64, 3.0, 99);
  Trace b = generate_fixed(500, 256, 64, 3.0, 99);
  REQUIRE(a.requests.size() == b.requests.size());
  for (std::size_t i = 0; i < a.requests.size(); ++i) {
    CHECK(a.requests[i].arrival == b.requests[i].arrival);
  }
  Trace c = generate_sharegpt_like(500, 2.0, 5);
  Trace d = generate_sharegpt_like(500, 2.0, 5);
  for (std::size_t i = 0; i < c.requests.size(); ++i) {
    CHECK(c.requests[i].prompt_tokens == d.requests[i].prompt_tokens);
    CHECK(c.requests[i].output_tokens == d.requests[i].output_tokens);
  }
}

TEST_CASE("sharegpt-like lengths stay in [4, 2300] with the documented median") {
  Trace t = generate_sharegpt_like(10000, 1.0, 123);
  std::vector<int> prompts;
  for (const auto& r : t.requests) {
    CHECK(r.prompt_tokens >= 4);
    CHECK(r.prompt_tokens <= 2300);
    CHECK(r.output_tokens >= 4);
    CHECK(r.output_tokens <= 2300);
    prompts.push_back(r.prompt_tokens);
  }
  std::sort(prompts.begin(), prompts.end());
  double median = prompts[prompts.size() / 2];
  // log-normal(5, 1) median = e^5 ~ 148.4
  CHECK(median == doctest::Approx(148.4).epsilon(0.10));
}

TEST_CASE("generated traces always satisfy the trace invariants") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Trace t = generate_sharegpt_like(200, 0.5 + seed, seed);
    CHECK_NOTHROW(t.validate());
    Trace f = generate_fixed(200, 1 + seed, 1 + seed / 2, 0.1 + seed, seed);
    CHECK_NOTHROW(f.validate());
  }
}

TEST_CASE("load_trace reads well-formed records in order") {
  TempFile f(
      "# comment line\n"
      "{\"arrival_s\": 0.5, \"prompt_tokens\": 10, \"output_tokens\": 3}\n"
      "{\"arrival_s\": 1.0, \"prompt_tokens\": 20, \"output_tokens\": 4}\n"
      "{\"arrival_s\": 2.0, \"prompt_tokens\": 30, \"output_tokens\": 5}\n");
  bool warned = true;
  Trace t = load_trace(f.path, &warned);
  REQUIRE(t.requests.size() == 3);
  CHECK(!warned);
  CHECK(t.requests[0].arrival == 0.5);
  CHECK(t.requests[2].prompt_tokens == 30);
}

TEST_CASE("load_trace rejects invariant violations naming the line") {
  TempFile f(
      "{\"arrival_s\": 0.5, \"prompt_tokens\": 10, \"output_tokens\": 3}\n"
      "{\"arrival_s\": 1.0, \"prompt_tokens\": 0, \"output_tokens\": 4}\n");
  CHECK_THROWS_WITH_AS(load_trace(f.path), doctest::Contains(":2"), std::runtime_error);
}

TEST_CASE("load_trace rejects missing fields naming line and field") {
  TempFile f("{\"arrival_s\": 0.5, \"prompt_tokens\": 10}\n");
  CHECK_THROWS_WITH_AS(load_trace(f.path), doctest::Contains("output_tokens"),
                       std::runtime_error);
}

TEST_CASE("unsorted trace files are sorted on load with a warning") {
  TempFile f(
      "{\"arrival_s\": 2.0, \"prompt_tokens\": 10, \"output_tokens\": 3}\n"
      "{\"arrival_s\": 1.0, \"prompt_tokens\": 20, \"output_tokens\": 4}\n");
  bool warned = false;
  Trace t = load_trace(f.path, &warned);
  CHECK(warned);
  REQUIRE(t.requests.size() == 2);
  CHECK(t.requests[0].arrival == 1.0);
  CHECK(t.requests[1].arrival == 2.0);
}

TEST_CASE("save then load round-trips") {
  Trace t = generate_sharegpt_like(50, 1.5, 77);
  TempFile f("");
  save_trace(t, f.path);
  Trace back = load_trace(f.path);
  REQUIRE(back.requests.size() == t.requests.size());
  for (std::size_t i = 0; i < t.requests.size(); ++i) {
    CHECK(back.requests[i].id == t.requests[i].id);
    CHECK(back.requests[i].arrival == doctest::Approx(t.requests[i].arrival).epsilon(1e-12));
    CHECK(back.requests[i].prompt_tokens == t.requests[i].prompt_tokens);
    CHECK(back.requests[i].output_tokens == t.requests[i].output_tokens);
  }
}
