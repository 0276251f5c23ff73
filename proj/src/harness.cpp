#include "tstream/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "tstream/error.hpp"
#include "tstream/log.hpp"
#include "tstream/oracle.hpp"
#include "tstream/zipf.hpp"

namespace tstream {

const char* to_string(Scenario s) noexcept {
  switch (s) {
    case Scenario::Synthetic: return "synthetic";
    case Scenario::Healthcare: return "healthcare";
    case Scenario::Traffic: return "traffic";
  }
  return "?";
}

Scenario parse_scenario(std::string_view name) {
  if (name == "synthetic") return Scenario::Synthetic;
  if (name == "healthcare") return Scenario::Healthcare;
  if (name == "traffic") return Scenario::Traffic;
  throw Error(ErrorCode::InvalidArgument, "unknown scenario '" + std::string(name) + "'");
}

const char* to_string(EngineMode m) noexcept {
  return m == EngineMode::Apply ? "apply" : "learn";
}

EngineMode parse_mode(std::string_view name) {
  if (name == "apply") return EngineMode::Apply;
  if (name == "learn") return EngineMode::Learn;
  throw Error(ErrorCode::InvalidArgument, "unknown mode '" + std::string(name) + "'");
}

void WorkloadSpec::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, m); };
  if (keys == 0) bad("key space must be >= 1");
  if (!(zipf >= 0) || !std::isfinite(zipf)) bad("zipf exponent must be >= 0");
  if (!(mix >= 0 && mix <= 1)) bad("mix must be in [0, 1]");
  if (!(rate > 0) || !std::isfinite(rate)) bad("rate must be > 0");
  if (max_keys_per_txn == 0) bad("max keys per txn must be >= 1");
  if (!(huge_fraction >= 0 && huge_fraction <= 1)) bad("huge fraction must be in [0, 1]");
}

namespace {

std::uint64_t event_time_us(const WorkloadSpec& spec, std::uint64_t i) {
  return 1 + static_cast<std::uint64_t>(static_cast<double>(i) * 1e6 / spec.rate);
}

// Distinct zipf-drawn ranks, 0-based.
std::vector<std::uint64_t> draw_keys(const ZipfSampler& zipf, std::mt19937_64& rng,
                                     std::size_t count) {
  count = std::min<std::size_t>(count, zipf.n());
  std::vector<std::uint64_t> out;
  while (out.size() < count) {
    const std::uint64_t r = zipf(rng) - 1;
    if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
  }
  return out;
}

std::size_t draw_count(std::mt19937_64& rng, std::uint32_t lo, std::uint32_t hi) {
  if (hi <= lo) return lo;
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

double gaussian(std::mt19937_64& rng) {
  // Box-Muller on our own uniform draws keeps traces identical across
  // standard library implementations.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

struct Vital {
  const char* name;
  double mean;
  double sd;
  double weight;  // hidden alert model on standardized values
};

constexpr Vital kVitals[] = {
    {"hr", 75.0, 12.0, 1.5},   {"spo2", 97.0, 2.0, -2.0}, {"temp", 37.0, 0.5, 1.0},
    {"resp", 16.0, 3.0, 0.8},  {"bp", 120.0, 15.0, 0.5},
};
constexpr double kAlertBias = -0.5;

void gen_synthetic(const WorkloadSpec& spec, std::mt19937_64& rng,
                   std::vector<StreamEvent>& out) {
  const ZipfSampler zipf(spec.keys, spec.zipf);
  for (std::uint64_t i = 0; i < spec.events; ++i) {
    StreamEvent ev;
    ev.source_id = "s" + std::to_string(rng() % 4);
    ev.event_ts = event_time_us(spec, i);
    const bool update = uniform01(rng) < spec.mix;
    const auto keys = draw_keys(zipf, rng, draw_count(rng, 1, spec.max_keys_per_txn));
    double sum = 0;
    for (auto k : keys) {
      const std::string name = "k" + std::to_string(k);
      if (!update) {
        ev.features.emplace_back(name, 1.0);
        continue;
      }
      double v = uniform01(rng) * 2.0 - 1.0;
      if (uniform01(rng) < spec.huge_fraction) v = (rng() & 1) ? 1e308 : -1e308;
      const bool set = uniform01(rng) < 0.05;
      ev.features.emplace_back(set ? "set." + name : name, v);
      sum += v;
    }
    if (update) {
      ev.kind = EventKind::Observation;
      ev.label = sum > 0 ? 1.0 : 0.0;
    } else {
      ev.kind = EventKind::Query;
    }
    out.push_back(std::move(ev));
  }
}

void gen_healthcare(const WorkloadSpec& spec, std::mt19937_64& rng,
                    std::vector<StreamEvent>& out) {
  std::vector<std::uint64_t> last_ts(spec.keys, 0);
  for (std::uint64_t i = 0; i < spec.events; ++i) {
    StreamEvent ev;
    const std::uint64_t patient = rng() % spec.keys;
    ev.source_id = "patient" + std::to_string(patient);
    ev.event_ts = event_time_us(spec, i);
    const bool update = uniform01(rng) < spec.mix;
    double z = kAlertBias;
    for (const auto& v : kVitals) {
      const double std_value = gaussian(rng);
      z += v.weight * std_value;
      ev.features.emplace_back(v.name, v.mean + v.sd * std_value);
    }
    // Sensor faults: a detached probe reads spo2 0, a glitch reads NaN.
    const double fault = uniform01(rng);
    if (fault < 0.005) ev.features[1].second = 0.0;
    else if (fault < 0.008) ev.features[0].second = std::nan("");
    if (update) {
      ev.kind = EventKind::Observation;
      ev.label = z + 0.3 * gaussian(rng) > 0 ? 1.0 : 0.0;
    } else {
      ev.kind = EventKind::Query;
    }
    out.push_back(std::move(ev));
  }
}

void gen_traffic(const WorkloadSpec& spec, std::mt19937_64& rng, std::vector<StreamEvent>& out) {
  const ZipfSampler zipf(spec.keys, spec.zipf);
  const std::uint64_t span = event_time_us(spec, spec.events);
  const std::uint64_t burst_start = span / 2;
  const std::uint64_t burst_end = burst_start + 1'000'000;
  const double base_query = 1.0 - spec.mix;
  for (std::uint64_t i = 0; i < spec.events; ++i) {
    StreamEvent ev;
    ev.source_id = "sensor" + std::to_string(rng() % 8);
    ev.event_ts = event_time_us(spec, i);
    const bool burst = ev.event_ts >= burst_start && ev.event_ts < burst_end;
    const double p_query = std::min(1.0, burst ? 10.0 * base_query : base_query);
    if (uniform01(rng) < p_query) {
      ev.kind = EventKind::Query;
      const std::uint32_t lo = std::min<std::uint32_t>(4, spec.keys);
      const std::uint32_t hi = std::min<std::uint32_t>(8, spec.keys);
      for (auto k : draw_keys(zipf, rng, draw_count(rng, lo, hi))) {
        ev.features.emplace_back("seg" + std::to_string(k), 1.0);
      }
    } else {
      ev.kind = EventKind::Observation;
      for (auto k : draw_keys(zipf, rng, draw_count(rng, 1, 2))) {
        ev.features.emplace_back("seg" + std::to_string(k), 1.0);
      }
    }
    out.push_back(std::move(ev));
  }
}

}  // namespace

std::vector<StreamEvent> generate(const WorkloadSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<StreamEvent> out;
  out.reserve(spec.events);
  switch (spec.scenario) {
    case Scenario::Synthetic: gen_synthetic(spec, rng, out); break;
    case Scenario::Healthcare: gen_healthcare(spec, rng, out); break;
    case Scenario::Traffic: gen_traffic(spec, rng, out); break;
  }
  return out;
}

PipelineSpec default_pipeline(Scenario scenario) {
  PipelineSpec spec;
  if (scenario != Scenario::Healthcare) return spec;
  FilterStage filter;
  Predicate probe;
  probe.subject = Predicate::Subject::Feature;
  probe.name = "spo2";
  probe.op = CmpOp::Gt;
  probe.value = 50.0;
  filter.all_of.push_back(probe);
  spec.stages.emplace_back(filter);
  TransformStage standardize;
  for (const auto& v : kVitals) {
    TransformAction a;
    a.type = TransformAction::Type::Scale;
    a.feature = v.name;
    a.mul = 1.0 / v.sd;
    a.add = -v.mean / v.sd;
    standardize.actions.push_back(a);
  }
  spec.stages.emplace_back(standardize);
  return spec;
}

std::vector<StreamEvent> make_separable_stream(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<StreamEvent> out;
  out.reserve(n);
  while (out.size() < n) {
    const double x1 = uniform01(rng) * 2.0 - 1.0;
    const double x2 = uniform01(rng) * 2.0 - 1.0;
    if (std::abs(x1 + x2) < 0.1) continue;
    StreamEvent ev;
    ev.source_id = "sep";
    ev.event_ts = out.size() + 1;
    ev.kind = EventKind::Observation;
    ev.features = {{"x1", x1}, {"x2", x2}};
    ev.label = x1 + x2 > 0 ? 1.0 : 0.0;
    out.push_back(std::move(ev));
  }
  return out;
}

double holdout_accuracy(const VersionedStore& store, const std::vector<StreamEvent>& holdout,
                        ModelKind kind) {
  auto& mutable_store = const_cast<VersionedStore&>(store);
  ScopedSnapshot snap(mutable_store);
  std::size_t total = 0;
  std::size_t correct = 0;
  for (const auto& ev : holdout) {
    if (!ev.label) continue;
    ++total;
    const double p = predict(store, snap.handle(), ev.features, kind);
    if ((p > 0.5) == (*ev.label > 0.5)) ++correct;
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

StoreConfig EngineConfig::store_config() const {
  StoreConfig c;
  c.partitions = partitions;
  c.max_versions = static_cast<std::uint32_t>(max_versions);
  c.hash_seed = hash_seed;
  return c;
}

void EngineConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, m); };
  store_config().validate();
  model.validate();
  pipeline.validate();
  if (executors == 0) bad("executors must be >= 1");
  if (batch_size == 0) bad("batch size must be >= 1");
  if (submitters == 0) bad("submitters must be >= 1");
  if (queue_capacity < batch_size && manual_batches) bad("queue capacity must hold a batch");
  if (fsync_every == 0) bad("fsync interval must be >= 1");
  if ((crash_at || resume) && out_dir.empty()) bad("crash injection and resume need an output directory");
  if (resume && (mode != EngineMode::Apply || submitters != 1)) {
    bad("resume needs apply mode with one submitter");
  }
}

namespace {

// Forwards to the durability layer and keeps every durable epoch.
class RecordingHook final : public DurabilityHook {
 public:
  explicit RecordingHook(DurabilityHook* inner) : inner_(inner) {}

  void log_epoch(const WalRecord& record) override {
    if (inner_) inner_->log_epoch(record);
    std::lock_guard lock(mu_);
    records_.push_back(record);
  }
  void epoch_visible(std::uint64_t epoch_id) override {
    if (inner_) inner_->epoch_visible(epoch_id);
  }
  std::vector<WalRecord> take() {
    std::lock_guard lock(mu_);
    return std::move(records_);
  }

 private:
  DurabilityHook* inner_;
  std::mutex mu_;
  std::vector<WalRecord> records_;
};

class WorkQueue {
 public:
  explicit WorkQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(WorkItem item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_; });
    items_.push_back(std::move(item));
    not_empty_.notify_one();
  }
  std::optional<WorkItem> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    WorkItem item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }
  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<WorkItem> items_;
  bool closed_ = false;
};

struct Collector {
  std::mutex mu;
  std::uint64_t outcomes = 0;
  std::uint64_t committed_updates = 0;
  std::uint64_t committed_inference = 0;
  std::uint64_t rejected_validation = 0;
  std::uint64_t rejected_backpressure = 0;
  std::uint64_t rejected_halted = 0;
  std::uint64_t max_committed_update = 0;
  std::vector<std::uint64_t> lat_update;
  std::vector<std::uint64_t> lat_inference;
};

std::uint64_t count_work_items(const std::vector<StreamEvent>& trace, const PipelineSpec& spec) {
  Pipeline p(spec);
  std::vector<WorkItem> items;
  for (const auto& ev : trace) p.process(ev, items);
  return items.size();
}

bool same_bytes(const Listing& a, const Listing& b) { return encode_listing(a) == encode_listing(b); }

Listing current_dump(VersionedStore& store) {
  ScopedSnapshot snap(store);
  return store.dump(snap.handle());
}

bool dir_has_state(const std::filesystem::path& dir) {
  return !list_wal_segments(dir).empty() || !list_manifests(dir).empty();
}

double ms_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t).count();
}

}  // namespace

Listing reference_dump(const std::vector<StreamEvent>& trace, const EngineConfig& config,
                       std::uint64_t through_txn_id) {
  return oracle_from_trace(trace, config.pipeline, through_txn_id);
}

RunResult run(const std::vector<StreamEvent>& trace, const EngineConfig& cfg) {
  cfg.validate();
  RunResult result;
  MetricsReport& rep = result.report;
  rep.scenario = cfg.label;
  rep.mode = to_string(cfg.mode);
  rep.executors = cfg.executors;
  rep.partitions = cfg.partitions;

  const StoreConfig scfg = cfg.store_config();
  std::unique_ptr<VersionedStore> store;
  std::optional<RecoveryReport> resumed;
  if (cfg.resume) {
    const auto t0 = std::chrono::steady_clock::now();
    Recovered rec = recover(cfg.out_dir, scfg);
    rep.recovery_ms = ms_since(t0);
    store = std::move(rec.store);
    resumed = rec.report;
    if (count_work_items(trace, cfg.pipeline) < resumed->last_txn_id) {
      throw Error(ErrorCode::InvalidArgument,
                  "trace has fewer work items than the recovered log covers");
    }
    log::info("resuming after epoch ", resumed->restored_epoch, ", txn ", resumed->last_txn_id);
  } else {
    if (!cfg.out_dir.empty()) {
      std::filesystem::create_directories(cfg.out_dir);
      if (dir_has_state(cfg.out_dir)) {
        throw Error(ErrorCode::InvalidArgument,
                    cfg.out_dir.string() + " already holds a log; resume or use another directory");
      }
    }
    store = std::make_unique<VersionedStore>(scfg);
  }

  std::unique_ptr<DurabilityManager> durable;
  if (!cfg.out_dir.empty()) {
    DurabilityConfig dc;
    dc.dir = cfg.out_dir;
    dc.checkpoint_every = cfg.checkpoint_every;
    dc.fsync_every = cfg.fsync_every;
    dc.async_checkpoints = cfg.async_checkpoints;
    dc.crash_at_byte = cfg.crash_at;
    durable = std::make_unique<DurabilityManager>(dc, *store, resumed ? &*resumed : nullptr);
  }
  const bool trace_oracle = cfg.mode == EngineMode::Apply && cfg.submitters == 1;
  const bool record = cfg.check_oracle && !trace_oracle;
  RecordingHook recorder(durable.get());
  DurabilityHook* hook = record ? static_cast<DurabilityHook*>(&recorder) : durable.get();

  Collector col;
  const bool learn = cfg.mode == EngineMode::Learn;
  OutcomeSink sink = [&col, learn](const TxnOutcome& o) {
    std::lock_guard lock(col.mu);
    ++col.outcomes;
    const bool update = o.kind == TxnKind::Update;
    if (o.committed()) {
      if (update) {
        ++col.committed_updates;
        col.max_committed_update = std::max(col.max_committed_update, o.txn_id);
      } else {
        ++col.committed_inference;
      }
      (update ? col.lat_update : col.lat_inference).push_back(o.latency_ns);
      return;
    }
    switch (o.reason) {
      case RejectReason::Backpressure:
        // A learner retries these; its final give-up counts as a drop.
        if (!(learn && update)) ++col.rejected_backpressure;
        break;
      case RejectReason::Halted: ++col.rejected_halted; break;
      default: ++col.rejected_validation; break;
    }
  };

  TxnManagerConfig tc;
  tc.executors = cfg.executors;
  tc.batch_size = cfg.batch_size;
  tc.batch_timeout = std::chrono::milliseconds(cfg.batch_timeout_ms);
  tc.queue_capacity = cfg.queue_capacity;
  tc.admit_timeout = std::chrono::milliseconds(cfg.admit_timeout_ms);
  tc.background = !cfg.manual_batches;
  if (resumed) {
    tc.first_txn_id = resumed->last_txn_id + 1;
    tc.first_ts = resumed->last_ts + 1;
  }
  TxnManager manager(*store, tc, sink, hook);

  std::vector<std::unique_ptr<OnlineLearner>> learners;
  if (learn) {
    for (std::size_t i = 0; i < cfg.submitters; ++i) {
      learners.push_back(std::make_unique<OnlineLearner>(manager, cfg.model, cfg.learner_retries,
                                                         static_cast<std::uint32_t>(i)));
    }
  }
  ReplyRouter router;
  std::atomic<std::uint64_t> replies{0};
  {
    std::set<std::string> sources;
    for (const auto& ev : trace) sources.insert(ev.source_id);
    for (const auto& s : sources) {
      router.open(s, [&replies](const InferenceReply&) { replies.fetch_add(1, std::memory_order_relaxed); });
    }
  }
  InferenceGateway gateway(manager, learn ? cfg.model.kind : ModelKind::LinearRegression, router);

  const std::uint64_t skip = resumed ? resumed->last_txn_id : 0;
  std::uint64_t item_index = 0;  // single submitter only
  std::atomic<std::uint64_t> resumed_skipped{0};

  auto handle = [&](const WorkItem& item, std::size_t worker) {
    if (const auto* ex = std::get_if<TrainExample>(&item)) {
      if (learn) {
        learners[worker]->train(*ex);
      } else {
        manager.admit(example_to_update(*ex));
      }
      if (cfg.manual_batches) manager.pump();
    } else {
      gateway.serve(std::get<InferenceRequest>(item));
    }
  };

  WorkQueue queue(cfg.queue_capacity);
  std::vector<std::jthread> workers;
  WorkSink work_sink;
  if (cfg.submitters == 1) {
    work_sink = [&](WorkItem item) {
      if (++item_index <= skip) {
        resumed_skipped.fetch_add(1, std::memory_order_relaxed);
        return;
      }
      handle(item, 0);
    };
  } else {
    for (std::size_t w = 0; w < cfg.submitters; ++w) {
      workers.emplace_back([&, w] {
        while (auto item = queue.pop()) handle(*item, w);
      });
    }
    work_sink = [&](WorkItem item) { queue.push(std::move(item)); };
  }

  IngestConfig ic;
  ic.queue_capacity = cfg.queue_capacity;
  ic.enqueue_timeout = std::chrono::milliseconds(cfg.ingest_timeout_ms);
  StreamIngest ingest(cfg.pipeline, ic, work_sink);

  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t first_ts = trace.empty() ? 0 : trace.front().event_ts;
  for (const auto& ev : trace) {
    if (cfg.paced && ev.event_ts > first_ts) {
      std::this_thread::sleep_until(start + std::chrono::microseconds(ev.event_ts - first_ts));
    }
    ingest.ingest(ev);
  }
  ingest.drain();
  queue.close();
  for (auto& w : workers) w.join();
  manager.flush();
  if (durable) durable->wait_for_checkpoints();
  const auto wall_ns =
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start)
          .count();
  const IngestCounters counters = ingest.counters();
  ingest.stop();
  const TxnManagerStats stats = manager.stats();
  result.crashed = manager.halted();
  result.halt_reason = manager.halt_reason();
  manager.shutdown();

  result.dump = current_dump(*store);
  if (durable) result.wal_bytes = durable->wal_bytes_written();
  result.recovery = resumed;

  rep.ingested = counters.ingested;
  rep.work_items = counters.work_items;
  rep.absorbed = counters.emitted_events - counters.work_items;
  rep.in_flight = counters.in_flight;
  rep.dropped_filtered = counters.dropped_filtered;
  rep.dropped_malformed = counters.dropped_malformed;
  rep.dropped_backpressure = counters.dropped_backpressure;
  {
    std::lock_guard lock(col.mu);
    rep.outcomes = col.outcomes;
    rep.committed_updates = col.committed_updates;
    rep.committed_inference = col.committed_inference;
    rep.rejected_validation = col.rejected_validation;
    rep.rejected_backpressure = col.rejected_backpressure;
    rep.rejected_halted = col.rejected_halted;
    std::vector<std::uint64_t> all = col.lat_update;
    all.insert(all.end(), col.lat_inference.begin(), col.lat_inference.end());
    rep.latency_all = summarize_latencies(all);
    rep.latency_update = summarize_latencies(col.lat_update);
    rep.latency_inference = summarize_latencies(col.lat_inference);
  }
  for (const auto& l : learners) {
    const LearnerStats ls = l->stats();
    rep.learner_skipped += ls.skipped;
    rep.learner_dropped += ls.dropped;
    for (const auto& [lag, n] : ls.staleness) rep.staleness[lag] += n;
  }
  rep.resumed_skipped = resumed_skipped.load();
  rep.abandoned_inference = router.abandoned();
  rep.admitted = stats.admitted;
  rep.epochs = stats.epochs;
  rep.final_epoch = store->watermark();
  rep.wall_seconds = static_cast<double>(wall_ns) / 1e9;
  rep.throughput_txn_per_s =
      rep.wall_seconds > 0 ? static_cast<double>(rep.committed()) / rep.wall_seconds : 0.0;
  for (auto busy : stats.executor_busy_ns) {
    rep.executor_busy_fraction.push_back(
        wall_ns > 0 ? static_cast<double>(busy) / static_cast<double>(wall_ns) : 0.0);
  }
  rep.crashed = result.crashed;

  if (cfg.check_oracle) {
    Listing expected;
    if (trace_oracle) {
      std::uint64_t through = UINT64_MAX;
      if (result.crashed) {
        through = std::max(skip, col.max_committed_update);
      }
      expected = reference_dump(trace, cfg, through);
    } else {
      std::vector<Transaction> txns;
      for (auto& r : recorder.take()) {
        for (auto& t : r.txns) txns.push_back(std::move(t));
      }
      expected = oracle_replay(std::move(txns));
    }
    rep.oracle_match = same_bytes(expected, result.dump);
  }
  if (!rep.reconciles()) log::warn("run '", cfg.label, "': counts do not reconcile");
  return result;
}

bool RecoverTestResult::ok() const noexcept {
  return !points.empty() &&
         std::all_of(points.begin(), points.end(), [](const auto& p) { return p.ok(); });
}

RecoverTestResult recover_test(const std::vector<StreamEvent>& trace, const EngineConfig& config,
                               std::size_t crash_points, std::uint64_t seed) {
  if (config.out_dir.empty()) {
    throw Error(ErrorCode::InvalidArgument, "recover-test needs an output directory");
  }
  EngineConfig base = config;
  // Fixed batch boundaries make the log layout the same in every run.
  base.manual_batches = true;
  base.crash_at.reset();
  base.resume = false;
  base.check_oracle = false;
  const bool can_resume = base.mode == EngineMode::Apply && base.submitters == 1;
  const StoreConfig scfg = base.store_config();

  RecoverTestResult out;
  const auto ref_dir = base.out_dir / "reference";
  std::filesystem::remove_all(ref_dir);
  {
    EngineConfig c = base;
    c.out_dir = ref_dir;
    out.total_wal_bytes = run(trace, c).wal_bytes;
  }
  std::filesystem::remove_all(ref_dir);
  if (out.total_wal_bytes < 2) {
    throw Error(ErrorCode::InvalidArgument, "trace produces no log to crash");
  }
  const Listing full = can_resume ? reference_dump(trace, base) : Listing{};

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> offset(1, out.total_wal_bytes - 1);
  for (std::size_t i = 0; i < crash_points; ++i) {
    CrashPointResult pt;
    pt.crash_at = offset(rng);
    char name[32];
    std::snprintf(name, sizeof name, "crash-%03zu", i);
    const auto dir = base.out_dir / name;
    std::filesystem::remove_all(dir);

    EngineConfig c = base;
    c.out_dir = dir;
    c.crash_at = pt.crash_at;
    c.check_oracle = !can_resume;
    RunResult crashed = run(trace, c);
    pt.crashed = crashed.crashed;

    const auto t0 = std::chrono::steady_clock::now();
    Recovered first = recover(dir, scfg);
    pt.recovery_ms = ms_since(t0);
    Recovered second = recover(dir, scfg);
    pt.restored_epoch = first.report.restored_epoch;
    pt.last_txn_id = first.report.last_txn_id;
    const Listing d1 = current_dump(*first.store);
    const Listing d2 = current_dump(*second.store);
    pt.double_recovery_identical = first.report == second.report && same_bytes(d1, d2);

    if (can_resume) {
      pt.matches_oracle = same_bytes(d1, reference_dump(trace, base, first.report.last_txn_id));
    } else {
      // Without a trace oracle the crashed run's own committed-log replay is
      // the reference; everything it committed was durable.
      pt.matches_oracle = crashed.report.oracle_match.value_or(false) && same_bytes(d1, crashed.dump);
    }
    if (!pt.matches_oracle) pt.detail = "recovered state differs from the reference";

    if (can_resume) {
      EngineConfig r = base;
      r.out_dir = dir;
      r.resume = true;
      RunResult resumed = run(trace, r);
      pt.resume_matches = !resumed.crashed && same_bytes(resumed.dump, full) &&
                          resumed.report.reconciles();
      if (!*pt.resume_matches && pt.detail.empty()) pt.detail = "resumed run differs from the reference";
    }
    if (!pt.crashed && pt.detail.empty()) pt.detail = "crash point not reached";
    std::filesystem::remove_all(dir);
    out.points.push_back(std::move(pt));
  }
  return out;
}

}  // namespace tstream
