#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "json.hpp"
#include "tstream/error.hpp"
#include "tstream/harness.hpp"
#include "tstream/oracle.hpp"
#include "tstream/trace.hpp"
#include "tstream/zipf.hpp"

using namespace tstream;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tstream-harness-" + name);
  fs::remove_all(p);
  return p;
}

std::string as_text(const std::vector<StreamEvent>& t) {
  std::ostringstream s;
  write_trace(s, t);
  return s.str();
}

WorkloadSpec synthetic(std::uint64_t events, double zipf, std::uint64_t seed) {
  WorkloadSpec w;
  w.events = events;
  w.keys = 64;
  w.zipf = zipf;
  w.seed = seed;
  return w;
}

}  // namespace

TEST(Zipf, UniformWhenExponentZero) {
  ZipfSampler z(4, 0.0);
  std::mt19937_64 rng(3);
  std::vector<int> hist(4, 0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) ++hist[z(rng) - 1];
  for (int c : hist) EXPECT_NEAR(c, n / 4.0, 0.05 * n / 4.0);
}

TEST(Zipf, ChiSquareAgainstPmf) {
  for (double s : {0.5, 0.8, 0.99, 1.0, 1.5}) {
    const std::uint64_t k = 20;
    ZipfSampler z(k, s);
    std::mt19937_64 rng(17);
    std::vector<double> hist(k, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const auto r = z(rng);
      ASSERT_GE(r, 1u);
      ASSERT_LE(r, k);
      ++hist[r - 1];
    }
    double norm = 0;
    for (std::uint64_t r = 1; r <= k; ++r) norm += std::pow(static_cast<double>(r), -s);
    double chi2 = 0;
    for (std::uint64_t r = 1; r <= k; ++r) {
      const double expect = n * std::pow(static_cast<double>(r), -s) / norm;
      chi2 += (hist[r - 1] - expect) * (hist[r - 1] - expect) / expect;
    }
    // 19 degrees of freedom, p = 0.001
    EXPECT_LT(chi2, 43.82) << "exponent " << s;
  }
}

TEST(Generate, SeedDeterminesTrace) {
  for (auto sc : {Scenario::Synthetic, Scenario::Healthcare, Scenario::Traffic}) {
    WorkloadSpec w = synthetic(500, 0.8, 42);
    w.scenario = sc;
    EXPECT_EQ(as_text(generate(w)), as_text(generate(w))) << to_string(sc);
    WorkloadSpec other = w;
    other.seed = 43;
    EXPECT_NE(as_text(generate(w)), as_text(generate(other)));
  }
}

TEST(Generate, AllUpdatesMeansNoQueries) {
  for (auto sc : {Scenario::Synthetic, Scenario::Healthcare, Scenario::Traffic}) {
    WorkloadSpec w = synthetic(2000, 0.5, 1);
    w.scenario = sc;
    w.mix = 1.0;
    for (const auto& e : generate(w)) EXPECT_NE(e.kind, EventKind::Query);
  }
}

TEST(Generate, TrafficBurstRaisesQueryRate) {
  WorkloadSpec w = synthetic(60000, 0.9, 5);
  w.scenario = Scenario::Traffic;
  w.mix = 0.95;
  w.rate = 10000;
  const auto t = generate(w);
  const std::uint64_t burst_start = t.back().event_ts / 2;
  std::size_t in = 0, in_q = 0, out = 0, out_q = 0;
  for (const auto& e : t) {
    const bool burst = e.event_ts >= burst_start && e.event_ts < burst_start + 1'000'000;
    (burst ? in : out)++;
    if (e.kind == EventKind::Query) (burst ? in_q : out_q)++;
  }
  const double ratio = (static_cast<double>(in_q) / in) / (static_cast<double>(out_q) / out);
  EXPECT_GT(ratio, 7.0);
  EXPECT_LT(ratio, 13.0);
}

TEST(Generate, InvalidSpec) {
  WorkloadSpec w;
  w.keys = 0;
  EXPECT_THROW(generate(w), Error);
  w.keys = 4;
  w.mix = 1.5;
  EXPECT_THROW(generate(w), Error);
}

TEST(Run, EmptyTrace) {
  EngineConfig cfg;
  auto r = run({}, cfg);
  EXPECT_EQ(r.report.ingested, 0u);
  EXPECT_EQ(r.report.committed(), 0u);
  EXPECT_TRUE(r.dump.empty());
  EXPECT_TRUE(r.report.reconciles());
  EXPECT_EQ(r.report.oracle_match, true);
}

TEST(Run, ExecutorCountDoesNotChangeState) {
  const auto trace = generate(synthetic(3000, 0.99, 8));
  const auto expected = encode_listing(oracle_from_trace(trace, PipelineSpec{}));
  EXPECT_EQ(expected, encode_listing(oracle_from_trace(trace, PipelineSpec{})));
  for (std::size_t e : {1, 4, 8}) {
    EngineConfig cfg;
    cfg.executors = e;
    cfg.batch_size = 64;
    auto r = run(trace, cfg);
    EXPECT_EQ(encode_listing(r.dump), expected) << "executors " << e;
    EXPECT_EQ(r.report.oracle_match, true);
    EXPECT_TRUE(r.report.reconciles());
    EXPECT_EQ(r.report.executor_busy_fraction.size(), e);
  }
}

TEST(Run, RejectionsAreExercised) {
  auto w = synthetic(3000, 0.99, 21);
  w.huge_fraction = 0.05;
  const auto trace = generate(w);
  EngineConfig cfg;
  cfg.executors = 4;
  auto r = run(trace, cfg);
  EXPECT_GT(r.report.rejected_validation, 0u);
  EXPECT_EQ(r.report.oracle_match, true);
  EXPECT_TRUE(r.report.reconciles());
}

TEST(Run, WindowedPipelineReconciles) {
  auto w = synthetic(4000, 0.5, 4);
  w.scenario = Scenario::Healthcare;
  w.keys = 7;
  const auto trace = generate(w);
  EngineConfig cfg;
  cfg.pipeline = default_pipeline(Scenario::Healthcare);
  cfg.pipeline.stages.emplace_back(AggregateStage{4, WindowUnit::Events, Reducer::Mean});
  cfg.executors = 2;
  auto r = run(trace, cfg);
  EXPECT_GT(r.report.absorbed, 0u);
  EXPECT_GT(r.report.dropped_filtered, 0u);
  EXPECT_GT(r.report.dropped_malformed, 0u);
  EXPECT_TRUE(r.report.stream_reconciles());
  EXPECT_TRUE(r.report.reconciles());
  EXPECT_EQ(r.report.oracle_match, true);
}

TEST(Run, LearnModeMatchesCommittedReplay) {
  auto w = synthetic(3000, 0.0, 9);
  w.scenario = Scenario::Healthcare;
  w.keys = 16;
  const auto trace = generate(w);
  for (std::size_t submitters : {1, 3}) {
    EngineConfig cfg;
    cfg.mode = EngineMode::Learn;
    cfg.pipeline = default_pipeline(Scenario::Healthcare);
    cfg.submitters = submitters;
    cfg.executors = 2;
    auto r = run(trace, cfg);
    EXPECT_EQ(r.report.oracle_match, true);
    EXPECT_TRUE(r.report.reconciles());
    EXPECT_GT(r.report.committed_updates, 0u);
    std::uint64_t stale = 0;
    for (const auto& [_, n] : r.report.staleness) stale += n;
    EXPECT_EQ(stale, r.report.committed_updates);
  }
}

TEST(Run, DurableRunRecoversToFinalState) {
  const auto dir = scratch("durable");
  const auto trace = generate(synthetic(2000, 0.8, 3));
  EngineConfig cfg;
  cfg.out_dir = dir;
  cfg.checkpoint_every = 4;
  cfg.batch_size = 32;
  auto r = run(trace, cfg);
  EXPECT_FALSE(r.crashed);
  auto rec = recover(dir, cfg.store_config());
  ScopedSnapshot snap(*rec.store);
  EXPECT_EQ(encode_listing(rec.store->dump(snap.handle())), encode_listing(r.dump));
  EXPECT_THROW(run(trace, cfg), Error);  // directory already holds a log
  fs::remove_all(dir);
}

TEST(Run, CrashRecoverResume) {
  const auto dir = scratch("crash");
  const auto trace = generate(synthetic(1500, 0.9, 12));
  EngineConfig cfg;
  cfg.out_dir = dir;
  cfg.batch_size = 16;
  cfg.checkpoint_every = 5;
  cfg.executors = 2;
  auto rt = recover_test(trace, cfg, 8, 77);
  EXPECT_TRUE(rt.ok());
  for (const auto& p : rt.points) {
    EXPECT_TRUE(p.ok()) << p.crash_at << " " << p.detail;
    EXPECT_TRUE(p.resume_matches.has_value());
  }
  fs::remove_all(dir);
}

TEST(Run, CrashedRunStopsAtDurablePrefix) {
  const auto dir = scratch("prefix");
  const auto trace = generate(synthetic(1000, 0.5, 2));
  EngineConfig cfg;
  cfg.out_dir = dir;
  cfg.manual_batches = true;
  cfg.batch_size = 20;
  cfg.crash_at = 5000;
  auto r = run(trace, cfg);
  EXPECT_TRUE(r.crashed);
  EXPECT_GT(r.report.rejected_halted, 0u);
  EXPECT_TRUE(r.report.reconciles());
  EXPECT_EQ(r.report.oracle_match, true);
  auto rec = recover(dir, cfg.store_config());
  ScopedSnapshot snap(*rec.store);
  EXPECT_EQ(encode_listing(rec.store->dump(snap.handle())), encode_listing(r.dump));

  EngineConfig resume = cfg;
  resume.crash_at.reset();
  resume.resume = true;
  auto short_trace = trace;
  short_trace.resize(10);
  EXPECT_THROW(run(short_trace, resume), Error);
  auto done = run(trace, resume);
  EXPECT_EQ(done.report.resumed_skipped, rec.report.last_txn_id);
  EXPECT_TRUE(done.report.reconciles());
  EXPECT_EQ(done.report.oracle_match, true);
  EXPECT_EQ(encode_listing(done.dump), encode_listing(oracle_from_trace(trace, PipelineSpec{})));
  fs::remove_all(dir);
}

TEST(Run, InvalidConfigs) {
  EngineConfig cfg;
  cfg.resume = true;
  EXPECT_THROW(run({}, cfg), Error);
  cfg.out_dir = scratch("invalid");
  cfg.mode = EngineMode::Learn;
  EXPECT_THROW(run({}, cfg), Error);
  cfg = EngineConfig{};
  cfg.executors = 0;
  EXPECT_THROW(run({}, cfg), Error);
}

TEST(Convergence, SeparableStream) {
  const auto train = make_separable_stream(5000, 1);
  const auto holdout = make_separable_stream(1000, 2);
  for (const auto& e : train) EXPECT_GE(std::abs(e.features[0].second + e.features[1].second), 0.1);
  EngineConfig cfg;
  cfg.mode = EngineMode::Learn;
  cfg.batch_size = 1;
  cfg.manual_batches = true;
  auto r = run(train, cfg);
  VersionedStore store(cfg.store_config());
  store.restore(r.dump, 1);
  EXPECT_GE(holdout_accuracy(store, holdout, ModelKind::LogisticRegression), 0.95);
}

TEST(Metrics, NearestRankPercentiles) {
  std::vector<std::uint64_t> v;
  for (std::uint64_t i = 100; i >= 1; --i) v.push_back(i);
  const auto s = summarize_latencies(v);
  EXPECT_EQ(s.count, 100u);
  EXPECT_EQ(s.p50_ns, 50u);
  EXPECT_EQ(s.p95_ns, 95u);
  EXPECT_EQ(s.p99_ns, 99u);
  EXPECT_EQ(s.max_ns, 100u);
  std::vector<std::uint64_t> none;
  EXPECT_EQ(summarize_latencies(none).p99_ns, 0u);
}

TEST(Metrics, ReportFormats) {
  const auto trace = generate(synthetic(300, 0.5, 6));
  auto r = run(trace, EngineConfig{});
  const auto j = nlohmann::json::parse(report_json(r.report));
  EXPECT_EQ(j["counts"]["ingested"], 300);
  EXPECT_EQ(j["reconciled"]["overall"], true);
  EXPECT_TRUE(j.contains("staleness_histogram"));
  const auto csv = report_csv(r.report);
  EXPECT_EQ(csv.rfind("metric,value\n", 0), 0u);
  EXPECT_NE(csv.find("\ningested,300\n"), std::string::npos);
  EXPECT_NE(report_text(r.report).find("oracle_match"), std::string::npos);
}
