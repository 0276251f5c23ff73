#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tstream/durability.hpp"
#include "tstream/learner.hpp"
#include "tstream/metrics.hpp"
#include "tstream/shard.hpp"
#include "tstream/stream.hpp"

namespace tstream {

enum class Scenario : std::uint8_t { Synthetic, Healthcare, Traffic };
enum class Arrival : std::uint8_t { ClosedLoop, FixedRate };

const char* to_string(Scenario s) noexcept;
Scenario parse_scenario(std::string_view name);

struct WorkloadSpec {
  std::uint64_t events = 1000;
  std::uint32_t keys = 64;
  double zipf = 0.0;
  double mix = 0.9;  // fraction of events that are updates (observations)
  Arrival arrival = Arrival::ClosedLoop;
  double rate = 10000.0;  // events per second of event time
  std::uint64_t seed = 42;
  Scenario scenario = Scenario::Synthetic;
  std::uint32_t max_keys_per_txn = 4;
  double huge_fraction = 0.01;  // Synthetic: ±1e308 values, overflow on reuse

  void validate() const;
};

// Same spec, same trace.
std::vector<StreamEvent> generate(const WorkloadSpec& spec);

// Pipeline the scenario's traces are meant to be replayed through.
PipelineSpec default_pipeline(Scenario scenario);

// Two uniform features in [-1, 1], label x1 + x2 > 0, with a margin of 0.1
// around the boundary.
std::vector<StreamEvent> make_separable_stream(std::size_t n, std::uint64_t seed);
double holdout_accuracy(const VersionedStore& store, const std::vector<StreamEvent>& holdout,
                        ModelKind kind);

enum class EngineMode : std::uint8_t { Apply, Learn };
const char* to_string(EngineMode m) noexcept;
EngineMode parse_mode(std::string_view name);

struct EngineConfig {
  std::size_t executors = 1;
  std::uint32_t partitions = 8;
  std::size_t max_versions = 8;
  std::uint64_t hash_seed = 0;
  std::size_t batch_size = 256;
  std::uint64_t batch_timeout_ms = 5;
  std::size_t queue_capacity = 4096;
  std::uint64_t admit_timeout_ms = 60000;
  std::uint64_t ingest_timeout_ms = 60000;
  // Epochs sealed every batch_size admissions by the submitter.
  bool manual_batches = false;

  // Durability is off when empty.
  std::filesystem::path out_dir;
  std::uint64_t checkpoint_every = 64;
  std::uint64_t fsync_every = 1;
  bool async_checkpoints = true;
  std::optional<std::uint64_t> crash_at;
  // Recover out_dir first and continue after its last durable work item.
  bool resume = false;

  EngineMode mode = EngineMode::Apply;
  ModelSpec model;
  PipelineSpec pipeline;
  std::size_t submitters = 1;
  std::size_t learner_retries = 3;
  // Sleep to follow event_ts instead of replaying as fast as possible.
  bool paced = false;
  bool check_oracle = true;
  std::string label = "run";

  StoreConfig store_config() const;
  void validate() const;
};

struct RunResult {
  MetricsReport report;
  Listing dump;
  bool crashed = false;
  std::string halt_reason;
  std::optional<RecoveryReport> recovery;  // set when resumed
  std::uint64_t wal_bytes = 0;
};

// Replays the trace through pipeline, submitters and engine.
RunResult run(const std::vector<StreamEvent>& trace, const EngineConfig& config);

// Reference dump for a run of `trace` under `config`'s pipeline (Apply mode).
Listing reference_dump(const std::vector<StreamEvent>& trace, const EngineConfig& config,
                       std::uint64_t through_txn_id = UINT64_MAX);

struct CrashPointResult {
  std::uint64_t crash_at = 0;
  bool crashed = false;
  std::uint64_t restored_epoch = 0;
  std::uint64_t last_txn_id = 0;
  double recovery_ms = 0;
  bool matches_oracle = false;
  bool double_recovery_identical = false;
  std::optional<bool> resume_matches;  // Apply mode with one submitter
  std::string detail;

  bool ok() const noexcept {
    return crashed && matches_oracle && double_recovery_identical && resume_matches.value_or(true);
  }
};

struct RecoverTestResult {
  std::uint64_t total_wal_bytes = 0;
  std::vector<CrashPointResult> points;

  bool ok() const noexcept;
};

// Crashes fresh runs at `crash_points` random WAL offsets under
// `config.out_dir`, recovers each twice and checks the recovered state,
// then resumes and checks the final state.
RecoverTestResult recover_test(const std::vector<StreamEvent>& trace, const EngineConfig& config,
                               std::size_t crash_points, std::uint64_t seed);

}  // namespace tstream
