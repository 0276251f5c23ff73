#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tstream {

struct LatencySummary {
  std::uint64_t count = 0;
  std::uint64_t p50_ns = 0;
  std::uint64_t p95_ns = 0;
  std::uint64_t p99_ns = 0;
  std::uint64_t max_ns = 0;
};

// Nearest-rank percentiles; sorts `samples`.
LatencySummary summarize_latencies(std::vector<std::uint64_t>& samples);

struct MetricsReport {
  std::string scenario;
  std::string mode;
  std::size_t executors = 0;
  std::uint32_t partitions = 0;

  // stream side
  std::uint64_t ingested = 0;
  std::uint64_t work_items = 0;
  std::uint64_t absorbed = 0;  // inputs merged into a window output beyond the first
  std::uint64_t in_flight = 0;
  std::uint64_t dropped_filtered = 0;
  std::uint64_t dropped_malformed = 0;
  std::uint64_t dropped_backpressure = 0;

  // per work item terminal status
  std::uint64_t committed_updates = 0;
  std::uint64_t committed_inference = 0;
  std::uint64_t rejected_validation = 0;
  std::uint64_t rejected_backpressure = 0;
  std::uint64_t rejected_halted = 0;
  std::uint64_t learner_skipped = 0;
  std::uint64_t learner_dropped = 0;
  std::uint64_t resumed_skipped = 0;  // items already durable before a resume
  std::uint64_t abandoned_inference = 0;

  // txn manager totals
  std::uint64_t admitted = 0;
  std::uint64_t outcomes = 0;
  std::uint64_t epochs = 0;
  std::uint64_t final_epoch = 0;

  double wall_seconds = 0;
  double throughput_txn_per_s = 0;
  LatencySummary latency_all;
  LatencySummary latency_update;
  LatencySummary latency_inference;
  std::map<std::uint64_t, std::uint64_t> staleness;
  std::vector<double> executor_busy_fraction;

  bool crashed = false;
  std::optional<double> recovery_ms;
  std::optional<bool> oracle_match;

  std::uint64_t committed() const noexcept { return committed_updates + committed_inference; }
  std::uint64_t rejected() const noexcept {
    return rejected_validation + rejected_backpressure + rejected_halted;
  }
  std::uint64_t dropped() const noexcept {
    return dropped_filtered + dropped_malformed + dropped_backpressure + learner_dropped;
  }

  // ingested = emitted + dropped + in_flight at the stream boundary
  bool stream_reconciles() const noexcept;
  // admitted transactions = outcomes
  bool outcomes_reconcile() const noexcept;
  // ingested = committed + rejected + skipped + dropped + absorbed + in_flight + resumed
  bool reconciles() const noexcept;
};

std::string report_json(const MetricsReport& report);
std::string report_csv(const MetricsReport& report);
std::string report_text(const MetricsReport& report);

}  // namespace tstream
