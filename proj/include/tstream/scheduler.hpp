#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "tstream/state_store.hpp"
#include "tstream/transaction.hpp"

namespace tstream {

// Position of one op inside the sealed batch.
struct ChainEntry {
  std::uint64_t ts = 0;
  std::uint64_t txn_id = 0;
  std::size_t txn_index = 0;  // index into the batch
  std::size_t op_index = 0;   // index into that transaction's ops
};

// All ops of one epoch that touch `key`, ordered by (ts, txn_id).
struct OpChain {
  ShardKey key;
  std::uint32_t partition = 0;
  std::vector<ChainEntry> entries;
};

struct EpochPlan {
  std::uint64_t epoch_id = 0;
  std::vector<OpChain> chains;                         // key order
  std::vector<std::size_t> assignment;                 // chain -> executor
  std::vector<std::vector<std::size_t>> per_executor;  // executor -> chains
};

// Builds per-key chains for an admitted batch of Update transactions and
// assigns each chain to executor partition_of(key) mod executors.
EpochPlan seal_epoch(std::span<const Transaction> batch, std::uint64_t epoch_id,
                     const StoreConfig& store_config, std::size_t executors);

// Fixed set of worker threads; run() hands each worker its index and
// returns once all of them finish.
class ExecutorPool {
 public:
  explicit ExecutorPool(std::size_t workers);
  ~ExecutorPool();
  ExecutorPool(const ExecutorPool&) = delete;
  ExecutorPool& operator=(const ExecutorPool&) = delete;

  std::size_t size() const noexcept { return workers_.size(); }

  // Rethrows the first exception raised by any worker.
  void run(const std::function<void(std::size_t)>& task);

  // Cumulative time each worker spent inside tasks.
  std::vector<std::uint64_t> busy_ns() const;

 private:
  void loop(std::size_t index, std::stop_token stop);

  std::mutex mu_;
  std::condition_variable_any wake_;
  std::condition_variable done_;
  std::uint64_t generation_ = 0;
  std::size_t remaining_ = 0;
  const std::function<void(std::size_t)>* task_ = nullptr;
  std::exception_ptr failure_;
  std::vector<std::unique_ptr<std::atomic<std::uint64_t>>> busy_;
  std::vector<std::jthread> workers_;
};

struct EpochExecution {
  std::uint64_t epoch_id = 0;
  std::vector<bool> rejected;             // per batch index
  std::vector<std::string> reject_detail;  // per batch index
  // Value to install per chain; nullopt when every entry was rejected.
  std::vector<std::optional<ShardValue>> finals;
  std::size_t passes = 0;
};

// Runs each executor's chains against the pre-epoch committed state. A
// transaction whose op fails is excised with all its ops and the epoch is
// re-run, one rejection at a time in (ts, txn_id) order, so the result
// matches one-at-a-time execution of the batch.
EpochExecution execute_plan(const EpochPlan& plan, std::span<const Transaction> batch,
                            const VersionedStore& store, ExecutorPool& pool);

// Installs the chain results at plan.epoch_id; each executor installs the
// chains it owns. Does not advance the watermark.
void install_plan(const EpochPlan& plan, EpochExecution& execution, VersionedStore& store,
                  ExecutorPool& pool);

}  // namespace tstream
