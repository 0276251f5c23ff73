#include "tstream/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <tuple>
#include <unordered_map>

#include "tstream/error.hpp"

namespace tstream {

EpochPlan seal_epoch(std::span<const Transaction> batch, std::uint64_t epoch_id,
                     const StoreConfig& store_config, std::size_t executors) {
  if (executors == 0) throw Error(ErrorCode::InvalidArgument, "need at least one executor");
  EpochPlan plan;
  plan.epoch_id = epoch_id;

  std::unordered_map<ShardKey, std::size_t, ShardKeyHash> index;
  for (std::size_t t = 0; t < batch.size(); ++t) {
    const auto& txn = batch[t];
    for (std::size_t o = 0; o < txn.ops.size(); ++o) {
      const auto& key = txn.ops[o].key;
      auto [it, inserted] = index.try_emplace(key, plan.chains.size());
      if (inserted) plan.chains.push_back(OpChain{key, partition_of(key, store_config), {}});
      plan.chains[it->second].entries.push_back(ChainEntry{txn.ts, txn.txn_id, t, o});
    }
  }

  std::sort(plan.chains.begin(), plan.chains.end(),
            [](const OpChain& a, const OpChain& b) { return a.key < b.key; });
  for (auto& chain : plan.chains) {
    std::stable_sort(chain.entries.begin(), chain.entries.end(),
                     [](const ChainEntry& a, const ChainEntry& b) {
                       return std::tie(a.ts, a.txn_id) < std::tie(b.ts, b.txn_id);
                     });
  }

  plan.assignment.resize(plan.chains.size());
  plan.per_executor.resize(executors);
  for (std::size_t c = 0; c < plan.chains.size(); ++c) {
    const std::size_t exec = plan.chains[c].partition % executors;
    plan.assignment[c] = exec;
    plan.per_executor[exec].push_back(c);
  }
  return plan;
}

ExecutorPool::ExecutorPool(std::size_t workers) {
  if (workers == 0) throw Error(ErrorCode::InvalidArgument, "need at least one executor");
  for (std::size_t i = 0; i < workers; ++i) {
    busy_.push_back(std::make_unique<std::atomic<std::uint64_t>>(0));
  }
  workers_.reserve(workers);
  for (std::size_t i = 0; i < workers; ++i) {
    workers_.emplace_back([this, i](std::stop_token st) { loop(i, st); });
  }
}

ExecutorPool::~ExecutorPool() {
  for (auto& w : workers_) w.request_stop();
  {
    std::lock_guard lock(mu_);
    wake_.notify_all();
  }
  workers_.clear();
}

void ExecutorPool::loop(std::size_t index, std::stop_token stop) {
  std::uint64_t seen = 0;
  for (;;) {
    const std::function<void(std::size_t)>* task = nullptr;
    {
      std::unique_lock lock(mu_);
      if (!wake_.wait(lock, stop, [&] { return generation_ != seen; })) return;
      seen = generation_;
      task = task_;
    }
    const auto start = std::chrono::steady_clock::now();
    std::exception_ptr err;
    try {
      (*task)(index);
    } catch (...) {
      err = std::current_exception();
    }
    const auto spent = std::chrono::steady_clock::now() - start;
    busy_[index]->fetch_add(
        static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(spent).count()),
        std::memory_order_relaxed);
    std::lock_guard lock(mu_);
    if (err && !failure_) failure_ = err;
    if (--remaining_ == 0) done_.notify_one();
  }
}

void ExecutorPool::run(const std::function<void(std::size_t)>& task) {
  std::unique_lock lock(mu_);
  task_ = &task;
  remaining_ = workers_.size();
  failure_ = nullptr;
  ++generation_;
  wake_.notify_all();
  done_.wait(lock, [&] { return remaining_ == 0; });
  task_ = nullptr;
  if (failure_) std::rethrow_exception(std::exchange(failure_, nullptr));
}

std::vector<std::uint64_t> ExecutorPool::busy_ns() const {
  std::vector<std::uint64_t> out;
  out.reserve(busy_.size());
  for (const auto& b : busy_) out.push_back(b->load(std::memory_order_relaxed));
  return out;
}

namespace {

constexpr std::size_t kNoFailure = std::numeric_limits<std::size_t>::max();

struct ChainFailure {
  std::size_t txn_index = kNoFailure;
  std::string detail;
};

}  // namespace

EpochExecution execute_plan(const EpochPlan& plan, std::span<const Transaction> batch,
                            const VersionedStore& store, ExecutorPool& pool) {
  EpochExecution exec;
  exec.epoch_id = plan.epoch_id;
  exec.rejected.assign(batch.size(), false);
  exec.reject_detail.assign(batch.size(), {});
  exec.finals.assign(plan.chains.size(), std::nullopt);

  const std::size_t nchains = plan.chains.size();
  std::vector<std::optional<ShardValue>> base(nchains);
  std::vector<ChainFailure> failures(nchains);

  bool first_pass = true;
  for (;;) {
    ++exec.passes;
    // Each executor touches only the slots of its own chains.
    pool.run([&](std::size_t worker) {
      if (worker >= plan.per_executor.size()) return;
      for (std::size_t c : plan.per_executor[worker]) {
        const auto& chain = plan.chains[c];
        if (first_pass) base[c] = store.get_committed(chain.key);
        std::optional<ShardValue> current = base[c];
        bool touched = false;
        failures[c] = ChainFailure{};
        for (const auto& e : chain.entries) {
          if (exec.rejected[e.txn_index]) continue;
          const auto& op = batch[e.txn_index].ops[e.op_index];
          if (auto err = apply_op(current, op)) {
            failures[c] = ChainFailure{e.txn_index, std::move(*err)};
            break;
          }
          touched = true;
        }
        exec.finals[c] = touched ? std::move(current) : std::nullopt;
      }
    });
    first_pass = false;

    std::size_t earliest = kNoFailure;
    const ChainFailure* culprit = nullptr;
    for (const auto& f : failures) {
      if (f.txn_index == kNoFailure) continue;
      if (earliest == kNoFailure ||
          std::tie(batch[f.txn_index].ts, batch[f.txn_index].txn_id) <
              std::tie(batch[earliest].ts, batch[earliest].txn_id)) {
        earliest = f.txn_index;
        culprit = &f;
      }
    }
    if (earliest == kNoFailure) break;
    exec.rejected[earliest] = true;
    exec.reject_detail[earliest] = culprit->detail;
  }
  return exec;
}

void install_plan(const EpochPlan& plan, EpochExecution& execution, VersionedStore& store,
                  ExecutorPool& pool) {
  pool.run([&](std::size_t worker) {
    if (worker >= plan.per_executor.size()) return;
    for (std::size_t c : plan.per_executor[worker]) {
      auto& value = execution.finals[c];
      if (value) store.install_version(plan.chains[c].key, std::move(*value), plan.epoch_id);
    }
  });
}

}  // namespace tstream
