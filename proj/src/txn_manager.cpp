#include "tstream/txn_manager.hpp"

#include "tstream/error.hpp"
#include "tstream/log.hpp"

namespace tstream {

TxnManager::TxnManager(VersionedStore& store, TxnManagerConfig config, OutcomeSink sink,
                       DurabilityHook* durability)
    : store_(store),
      config_(config),
      sink_(std::move(sink)),
      durability_(durability),
      pool_(config.executors),
      next_txn_id_(config.first_txn_id),
      next_ts_(config.first_ts) {
  if (config_.batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (config_.queue_capacity == 0) {
    throw Error(ErrorCode::InvalidArgument, "queue_capacity must be >= 1");
  }
  if (config_.background) {
    coordinator_ = std::jthread([this](std::stop_token st) { coordinator_loop(st); });
  }
}

TxnManager::~TxnManager() {
  try {
    shutdown();
  } catch (const std::exception& e) {
    log::error("txn manager shutdown: ", e.what());
  }
}

std::uint64_t TxnManager::since_ns(std::chrono::steady_clock::time_point t) {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t)
          .count());
}

void TxnManager::emit(const TxnOutcome& outcome, const OutcomeSink& own) {
  if (own) own(outcome);
  if (!sink_) return;
  std::lock_guard lock(sink_mu_);
  sink_(outcome);
}

AdmitTicket TxnManager::admit(Transaction txn, OutcomeSink on_outcome) {
  const auto arrived = std::chrono::steady_clock::now();
  auto reject = [&](RejectReason reason, std::string detail) {
    TxnOutcome out;
    out.txn_id = txn.txn_id;
    out.ts = txn.ts;
    out.kind = txn.kind;
    out.status = OutcomeStatus::Rejected;
    out.reason = reason;
    out.detail = std::move(detail);
    out.latency_ns = since_ns(arrived);
    emit(out, on_outcome);
    return AdmitTicket{txn.txn_id, txn.ts, false, reason, std::move(out)};
  };

  const auto invalid = validate_transaction(txn);
  std::unique_lock lock(mu_);
  if (!invalid && txn.kind == TxnKind::Update && !halted_ &&
      queue_.size() >= config_.queue_capacity && config_.admit_timeout.count() > 0) {
    space_cv_.wait_for(lock, config_.admit_timeout,
                       [&] { return halted_ || queue_.size() < config_.queue_capacity; });
  }
  txn.txn_id = next_txn_id_++;
  txn.ts = next_ts_++;
  ++stats_.admitted;

  if (invalid) {
    ++stats_.rejected;
    lock.unlock();
    return reject(RejectReason::Validation, *invalid);
  }
  if (halted_) {
    ++stats_.rejected;
    lock.unlock();
    return reject(RejectReason::Halted, "engine halted");
  }

  if (txn.kind == TxnKind::Inference) {
    ++stats_.inference_served;
    auto snapshot = store_.create_snapshot();
    lock.unlock();
    auto out = serve_inference(txn, snapshot);
    out.latency_ns = since_ns(arrived);
    emit(out, on_outcome);
    return AdmitTicket{out.txn_id, out.ts, true, RejectReason::None, std::move(out)};
  }

  if (queue_.size() >= config_.queue_capacity) {
    ++stats_.rejected;
    lock.unlock();
    return reject(RejectReason::Backpressure, "admission queue full");
  }
  AdmitTicket ticket{txn.txn_id, txn.ts, true, RejectReason::None, std::nullopt};
  queue_.push_back(Pending{std::move(txn), arrived, std::move(on_outcome)});
  if (queue_.size() >= config_.batch_size) queue_cv_.notify_one();
  else if (queue_.size() == 1) queue_cv_.notify_one();
  return ticket;
}

TxnOutcome TxnManager::serve_inference(const Transaction& txn, const SnapshotHandle& snapshot) {
  TxnOutcome out;
  out.txn_id = txn.txn_id;
  out.ts = txn.ts;
  out.kind = TxnKind::Inference;
  out.epoch = snapshot.epoch_id;
  try {
    if (txn.kind != TxnKind::Inference) {
      throw Error(ErrorCode::InvalidArgument, "serve_inference needs an inference transaction");
    }
    out.reads.reserve(txn.ops.size());
    for (const auto& op : txn.ops) out.reads.push_back(ReadResult{op.key, store_.get_at(op.key, snapshot)});
    out.status = OutcomeStatus::Committed;
  } catch (...) {
    store_.release_snapshot(snapshot);
    throw;
  }
  store_.release_snapshot(snapshot);
  return out;
}

std::vector<TxnManager::Pending> TxnManager::take_batch_locked(std::size_t max) {
  std::vector<Pending> batch;
  const std::size_t n = std::min(max, queue_.size());
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    batch.push_back(std::move(queue_.front()));
    queue_.pop_front();
  }
  space_cv_.notify_all();
  return batch;
}

void TxnManager::fail_batch(std::vector<Pending>& batch, const std::string& why) {
  for (auto& p : batch) {
    TxnOutcome out;
    out.txn_id = p.txn.txn_id;
    out.ts = p.txn.ts;
    out.kind = TxnKind::Update;
    out.status = OutcomeStatus::Rejected;
    out.reason = RejectReason::Halted;
    out.detail = why;
    out.latency_ns = since_ns(p.admitted_at);
    emit(out, p.on_outcome);
  }
  std::lock_guard lock(mu_);
  stats_.rejected += batch.size();
}

void TxnManager::commit_batch(std::vector<Pending> batch) {
  if (batch.empty()) return;
  std::lock_guard commit(commit_mu_);
  std::string halted_why;
  {
    std::lock_guard lock(mu_);
    if (halted_) halted_why = halt_reason_.empty() ? "engine halted" : halt_reason_;
  }
  if (!halted_why.empty()) {
    fail_batch(batch, halted_why);
    return;
  }

  std::vector<Transaction> txns;
  txns.reserve(batch.size());
  for (auto& p : batch) txns.push_back(std::move(p.txn));
  const std::uint64_t epoch = store_.watermark() + 1;

  EpochExecution exec;
  EpochPlan plan;
  try {
    plan = seal_epoch(txns, epoch, store_.config(), pool_.size());
    exec = execute_plan(plan, txns, store_, pool_);
    WalRecord record;
    record.epoch_id = epoch;
    for (std::size_t i = 0; i < txns.size(); ++i) {
      if (!exec.rejected[i]) record.txns.push_back(txns[i]);
    }
    if (durability_) durability_->log_epoch(record);
    install_plan(plan, exec, store_, pool_);
    store_.advance_watermark(epoch);
  } catch (const std::exception& e) {
    const std::string why = std::string("epoch ") + std::to_string(epoch) + " failed: " + e.what();
    const auto* err = dynamic_cast<const Error*>(&e);
    if (err && err->code() == ErrorCode::CrashInjected) log::warn(why);
    else log::error(why);
    for (std::size_t i = 0; i < txns.size(); ++i) batch[i].txn = std::move(txns[i]);
    std::deque<Pending> rest;
    {
      std::lock_guard lock(mu_);
      halted_ = true;
      halt_reason_ = why;
      rest.swap(queue_);
      space_cv_.notify_all();
    }
    fail_batch(batch, why);
    std::vector<Pending> queued(std::make_move_iterator(rest.begin()),
                                std::make_move_iterator(rest.end()));
    fail_batch(queued, why);
    return;
  }

  if (durability_) {
    try {
      durability_->epoch_visible(epoch);
    } catch (const std::exception& e) {
      log::warn("post-commit hook for epoch ", epoch, ": ", e.what());
    }
  }

  std::uint64_t committed = 0;
  for (std::size_t i = 0; i < txns.size(); ++i) {
    TxnOutcome out;
    out.txn_id = txns[i].txn_id;
    out.ts = txns[i].ts;
    out.kind = TxnKind::Update;
    out.epoch = epoch;
    if (exec.rejected[i]) {
      out.status = OutcomeStatus::Rejected;
      out.reason = RejectReason::Validation;
      out.detail = exec.reject_detail[i];
    } else {
      out.status = OutcomeStatus::Committed;
      ++committed;
    }
    out.latency_ns = since_ns(batch[i].admitted_at);
    emit(out, batch[i].on_outcome);
  }
  std::lock_guard lock(mu_);
  ++stats_.epochs;
  stats_.passes += exec.passes;
  stats_.committed_updates += committed;
  stats_.rejected += txns.size() - committed;
}

void TxnManager::coordinator_loop(std::stop_token stop) {
  std::unique_lock lock(mu_);
  for (;;) {
    queue_cv_.wait(lock, stop, [&] { return !queue_.empty() || flush_requested_; });
    if (queue_.empty()) {
      if (stop.stop_requested()) break;
      flush_requested_ = false;
      idle_cv_.notify_all();
      continue;
    }
    const auto deadline = queue_.front().admitted_at + config_.batch_timeout;
    queue_cv_.wait_until(lock, stop, deadline, [&] {
      return queue_.size() >= config_.batch_size || flush_requested_;
    });
    auto batch = take_batch_locked(config_.batch_size);
    committing_ = true;
    lock.unlock();
    commit_batch(std::move(batch));
    lock.lock();
    committing_ = false;
    if (queue_.empty()) {
      flush_requested_ = false;
      idle_cv_.notify_all();
    }
  }
  committing_ = false;
  idle_cv_.notify_all();
}

void TxnManager::pump() {
  if (config_.background) return;
  for (;;) {
    std::vector<Pending> batch;
    {
      std::lock_guard lock(mu_);
      if (queue_.size() < config_.batch_size) return;
      batch = take_batch_locked(config_.batch_size);
    }
    commit_batch(std::move(batch));
  }
}

void TxnManager::flush() {
  if (!config_.background) {
    for (;;) {
      std::vector<Pending> batch;
      {
        std::lock_guard lock(mu_);
        if (queue_.empty()) return;
        batch = take_batch_locked(config_.batch_size);
      }
      commit_batch(std::move(batch));
    }
  }
  std::unique_lock lock(mu_);
  if (!coordinator_.joinable()) return;
  flush_requested_ = true;
  queue_cv_.notify_all();
  idle_cv_.wait(lock, [&] { return queue_.empty() && !committing_; });
}

void TxnManager::shutdown() {
  if (config_.background && coordinator_.joinable()) {
    flush();
    coordinator_.request_stop();
    {
      std::lock_guard lock(mu_);
      queue_cv_.notify_all();
    }
    coordinator_.join();
  } else if (!config_.background) {
    flush();
  }
}

bool TxnManager::halted() const {
  std::lock_guard lock(mu_);
  return halted_;
}

std::string TxnManager::halt_reason() const {
  std::lock_guard lock(mu_);
  return halt_reason_;
}

TxnManagerStats TxnManager::stats() const {
  TxnManagerStats s;
  {
    std::lock_guard lock(mu_);
    s = stats_;
  }
  s.executor_busy_ns = pool_.busy_ns();
  return s;
}

}  // namespace tstream
