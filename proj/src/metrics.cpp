#include "tstream/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <utility>

#include "json.hpp"

namespace tstream {

LatencySummary summarize_latencies(std::vector<std::uint64_t>& samples) {
  LatencySummary s;
  s.count = samples.size();
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  auto rank = [&](double q) {
    auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
    return samples[std::clamp<std::size_t>(idx, 1, samples.size()) - 1];
  };
  s.p50_ns = rank(0.50);
  s.p95_ns = rank(0.95);
  s.p99_ns = rank(0.99);
  s.max_ns = samples.back();
  return s;
}

bool MetricsReport::stream_reconciles() const noexcept {
  const std::uint64_t emitted = work_items + absorbed;
  return ingested ==
         emitted + dropped_filtered + dropped_malformed + dropped_backpressure + in_flight;
}

bool MetricsReport::outcomes_reconcile() const noexcept { return admitted == outcomes; }

bool MetricsReport::reconciles() const noexcept {
  return stream_reconciles() && outcomes_reconcile() &&
         ingested == committed() + rejected() + learner_skipped + dropped() + absorbed +
                         in_flight + resumed_skipped;
}

namespace {

using nlohmann::ordered_json;

ordered_json latency_json(const LatencySummary& l) {
  return {{"count", l.count}, {"p50_ns", l.p50_ns}, {"p95_ns", l.p95_ns},
          {"p99_ns", l.p99_ns}, {"max_ns", l.max_ns}};
}

// Flat (name, value) rows shared by the CSV and text forms.
std::vector<std::pair<std::string, std::string>> rows(const MetricsReport& r) {
  std::vector<std::pair<std::string, std::string>> out;
  auto add = [&](std::string k, auto v) {
    std::ostringstream s;
    s << v;
    out.emplace_back(std::move(k), s.str());
  };
  add("scenario", r.scenario);
  add("mode", r.mode);
  add("executors", r.executors);
  add("partitions", r.partitions);
  add("ingested", r.ingested);
  add("work_items", r.work_items);
  add("absorbed", r.absorbed);
  add("in_flight", r.in_flight);
  add("dropped_filtered", r.dropped_filtered);
  add("dropped_malformed", r.dropped_malformed);
  add("dropped_backpressure", r.dropped_backpressure);
  add("committed_updates", r.committed_updates);
  add("committed_inference", r.committed_inference);
  add("rejected_validation", r.rejected_validation);
  add("rejected_backpressure", r.rejected_backpressure);
  add("rejected_halted", r.rejected_halted);
  add("learner_skipped", r.learner_skipped);
  add("learner_dropped", r.learner_dropped);
  add("resumed_skipped", r.resumed_skipped);
  add("abandoned_inference", r.abandoned_inference);
  add("admitted", r.admitted);
  add("outcomes", r.outcomes);
  add("epochs", r.epochs);
  add("final_epoch", r.final_epoch);
  add("wall_seconds", r.wall_seconds);
  add("throughput_txn_per_s", r.throughput_txn_per_s);
  add("latency_p50_ns", r.latency_all.p50_ns);
  add("latency_p95_ns", r.latency_all.p95_ns);
  add("latency_p99_ns", r.latency_all.p99_ns);
  add("update_latency_p99_ns", r.latency_update.p99_ns);
  add("inference_latency_p99_ns", r.latency_inference.p99_ns);
  for (const auto& [lag, n] : r.staleness) add("staleness_" + std::to_string(lag), n);
  for (std::size_t i = 0; i < r.executor_busy_fraction.size(); ++i) {
    add("executor_" + std::to_string(i) + "_busy", r.executor_busy_fraction[i]);
  }
  add("crashed", r.crashed ? "true" : "false");
  if (r.recovery_ms) add("recovery_ms", *r.recovery_ms);
  if (r.oracle_match) add("oracle_match", *r.oracle_match ? "true" : "false");
  add("reconciled", r.reconciles() ? "true" : "false");
  return out;
}

}  // namespace

std::string report_json(const MetricsReport& r) {
  ordered_json j;
  j["scenario"] = r.scenario;
  j["mode"] = r.mode;
  j["executors"] = r.executors;
  j["partitions"] = r.partitions;
  j["counts"] = {{"ingested", r.ingested},
                 {"work_items", r.work_items},
                 {"absorbed", r.absorbed},
                 {"in_flight", r.in_flight},
                 {"committed_updates", r.committed_updates},
                 {"committed_inference", r.committed_inference},
                 {"committed", r.committed()},
                 {"rejected", r.rejected()},
                 {"rejected_validation", r.rejected_validation},
                 {"rejected_backpressure", r.rejected_backpressure},
                 {"rejected_halted", r.rejected_halted},
                 {"dropped", r.dropped()},
                 {"dropped_filtered", r.dropped_filtered},
                 {"dropped_malformed", r.dropped_malformed},
                 {"dropped_backpressure", r.dropped_backpressure},
                 {"learner_skipped", r.learner_skipped},
                 {"learner_dropped", r.learner_dropped},
                 {"resumed_skipped", r.resumed_skipped},
                 {"abandoned_inference", r.abandoned_inference},
                 {"admitted", r.admitted},
                 {"outcomes", r.outcomes}};
  j["epochs_committed"] = r.epochs;
  j["final_epoch"] = r.final_epoch;
  j["wall_seconds"] = r.wall_seconds;
  j["throughput_txn_per_s"] = r.throughput_txn_per_s;
  j["latency"] = {{"all", latency_json(r.latency_all)},
                  {"update", latency_json(r.latency_update)},
                  {"inference", latency_json(r.latency_inference)}};
  ordered_json hist = ordered_json::object();
  for (const auto& [lag, n] : r.staleness) hist[std::to_string(lag)] = n;
  j["staleness_histogram"] = hist;
  j["executor_busy_fraction"] = r.executor_busy_fraction;
  j["crashed"] = r.crashed;
  j["recovery_ms"] = r.recovery_ms ? ordered_json(*r.recovery_ms) : ordered_json(nullptr);
  j["oracle_match"] = r.oracle_match ? ordered_json(*r.oracle_match) : ordered_json(nullptr);
  j["reconciled"] = {{"stream", r.stream_reconciles()},
                     {"outcomes", r.outcomes_reconcile()},
                     {"overall", r.reconciles()}};
  return j.dump(2) + "\n";
}

std::string report_csv(const MetricsReport& r) {
  std::ostringstream out;
  out << "metric,value\n";
  for (const auto& [k, v] : rows(r)) out << k << ',' << v << '\n';
  return out.str();
}

std::string report_text(const MetricsReport& r) {
  const auto all = rows(r);
  std::size_t width = 0;
  for (const auto& [k, _] : all) width = std::max(width, k.size());
  std::ostringstream out;
  for (const auto& [k, v] : all) out << std::left << std::setw(static_cast<int>(width) + 2) << k << v << '\n';
  return out.str();
}

}  // namespace tstream
