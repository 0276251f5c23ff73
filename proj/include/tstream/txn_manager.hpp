#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tstream/scheduler.hpp"
#include "tstream/state_store.hpp"
#include "tstream/transaction.hpp"
#include "tstream/wal.hpp"

namespace tstream {

// Commit-path hooks owned by the durability layer.
class DurabilityHook {
 public:
  virtual ~DurabilityHook() = default;
  // Must make `record` durable before returning; throwing halts the engine
  // with nothing of the epoch visible.
  virtual void log_epoch(const WalRecord& record) = 0;
  // Called after the epoch's watermark is published.
  virtual void epoch_visible(std::uint64_t /*epoch_id*/) {}
};

struct TxnManagerConfig {
  std::size_t executors = 1;
  std::size_t batch_size = 256;
  std::chrono::milliseconds batch_timeout{5};
  std::size_t queue_capacity = 4096;
  // How long admit() waits for queue space before Rejected(backpressure).
  std::chrono::milliseconds admit_timeout{0};
  // false: no coordinator thread; epochs are sealed by pump()/flush() on
  // the calling thread, which makes batch boundaries deterministic.
  bool background = true;
  // First txn id / ts handed out (resume after recovery).
  std::uint64_t first_txn_id = 1;
  std::uint64_t first_ts = 1;
};

struct AdmitTicket {
  std::uint64_t txn_id = 0;
  std::uint64_t ts = 0;
  bool accepted = false;
  RejectReason reason = RejectReason::None;
  // Filled for inference (served synchronously) and admission rejections.
  std::optional<TxnOutcome> outcome;
};

using OutcomeSink = std::function<void(const TxnOutcome&)>;

struct TxnManagerStats {
  std::uint64_t admitted = 0;
  std::uint64_t committed_updates = 0;
  std::uint64_t rejected = 0;
  std::uint64_t inference_served = 0;
  std::uint64_t epochs = 0;
  std::uint64_t passes = 0;
  std::vector<std::uint64_t> executor_busy_ns;
};

// Admission front-end, epoch coordinator and executor pool over one store.
//
// Update transactions are queued and sealed into epochs of up to
// batch_size (or after batch_timeout); each epoch is executed by the
// executor pool, logged through the durability hook, installed and then
// published by advancing the watermark. Inference transactions are served
// immediately from the last committed epoch on the calling thread.
class TxnManager {
 public:
  TxnManager(VersionedStore& store, TxnManagerConfig config, OutcomeSink sink = {},
             DurabilityHook* durability = nullptr);
  ~TxnManager();
  TxnManager(const TxnManager&) = delete;
  TxnManager& operator=(const TxnManager&) = delete;

  // Thread-safe. Every admitted transaction gets exactly one outcome on
  // the sink, including admission rejections; `on_outcome` additionally
  // receives this transaction's outcome.
  AdmitTicket admit(Transaction txn, OutcomeSink on_outcome = {});

  // Reads all ops of an Inference transaction from `snapshot`, then
  // releases it.
  TxnOutcome serve_inference(const Transaction& txn, const SnapshotHandle& snapshot);

  // Seals and commits every full batch (manual mode).
  void pump();
  // Commits everything admitted so far and waits for it.
  void flush();
  // Stops the coordinator after flushing.
  void shutdown();

  bool halted() const;
  std::string halt_reason() const;

  VersionedStore& store() noexcept { return store_; }
  const TxnManagerConfig& config() const noexcept { return config_; }
  TxnManagerStats stats() const;

 private:
  struct Pending {
    Transaction txn;
    std::chrono::steady_clock::time_point admitted_at;
    OutcomeSink on_outcome;
  };

  void coordinator_loop(std::stop_token stop);
  void commit_batch(std::vector<Pending> batch);
  void fail_batch(std::vector<Pending>& batch, const std::string& why);
  void emit(const TxnOutcome& outcome, const OutcomeSink& own = {});
  std::vector<Pending> take_batch_locked(std::size_t max);
  static std::uint64_t since_ns(std::chrono::steady_clock::time_point t);

  VersionedStore& store_;
  TxnManagerConfig config_;
  OutcomeSink sink_;
  DurabilityHook* durability_;
  ExecutorPool pool_;

  mutable std::mutex mu_;
  std::condition_variable_any queue_cv_;  // coordinator wake-ups
  std::condition_variable space_cv_;      // admitters waiting for capacity
  std::condition_variable idle_cv_;       // flush waiters
  std::deque<Pending> queue_;
  std::uint64_t next_txn_id_;
  std::uint64_t next_ts_;
  bool flush_requested_ = false;
  bool committing_ = false;
  bool halted_ = false;
  std::string halt_reason_;
  TxnManagerStats stats_;

  std::mutex commit_mu_;  // one epoch in flight at a time
  std::mutex sink_mu_;
  std::jthread coordinator_;
};

}  // namespace tstream
