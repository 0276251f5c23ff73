#include <gtest/gtest.h>

#include <atomic>
#include <mutex>
#include <set>
#include <thread>

#include "tstream/error.hpp"
#include "tstream/txn_manager.hpp"

using namespace tstream;

namespace {

Transaction update(std::vector<StateOp> ops) {
  Transaction t;
  t.kind = TxnKind::Update;
  t.ops = std::move(ops);
  return t;
}

Transaction inference(std::vector<std::string> keys) {
  Transaction t;
  t.kind = TxnKind::Inference;
  for (auto& k : keys) t.ops.push_back(StateOp::read(ShardKey::params(k)));
  return t;
}

StateOp add(const std::string& k, double d) { return StateOp::apply(ShardKey::params(k), {d}); }

TxnManagerConfig manual(std::size_t executors = 1, std::size_t batch = 4) {
  TxnManagerConfig c;
  c.executors = executors;
  c.batch_size = batch;
  c.background = false;
  return c;
}

struct Outcomes {
  std::mutex mu;
  std::vector<TxnOutcome> all;
  OutcomeSink sink() {
    return [this](const TxnOutcome& o) {
      std::lock_guard lock(mu);
      all.push_back(o);
    };
  }
};

class FailingHook : public DurabilityHook {
 public:
  explicit FailingHook(std::uint64_t fail_epoch) : fail_epoch_(fail_epoch) {}
  void log_epoch(const WalRecord& r) override {
    if (r.epoch_id == fail_epoch_) throw Error(ErrorCode::Io, "disk gone");
  }

 private:
  std::uint64_t fail_epoch_;
};

}  // namespace

TEST(TxnManager, ClockStrictlyIncreases) {
  VersionedStore store(StoreConfig{});
  TxnManager m(store, manual());
  auto a = m.admit(update({add("k", 1)}));
  auto b = m.admit(update({add("k", 1)}));
  EXPECT_LT(a.ts, b.ts);
  EXPECT_LT(a.txn_id, b.txn_id);
  m.flush();
}

TEST(TxnManager, ReadInUpdateIsValidationReject) {
  VersionedStore store(StoreConfig{});
  Outcomes out;
  TxnManager m(store, manual(), out.sink());
  auto t = m.admit(update({StateOp::read(ShardKey::params("k"))}));
  EXPECT_FALSE(t.accepted);
  EXPECT_EQ(t.reason, RejectReason::Validation);
  ASSERT_EQ(out.all.size(), 1u);
  EXPECT_EQ(out.all[0].status, OutcomeStatus::Rejected);
}

TEST(TxnManager, InferencePinsCurrentWatermark) {
  VersionedStore store(StoreConfig{});
  TxnManager m(store, manual(1, 1));
  for (int i = 1; i <= 7; ++i) {
    m.admit(update({add("a", 1), add("b", static_cast<double>(i))}));
    m.pump();
  }
  ASSERT_EQ(store.watermark(), 7u);
  auto t = m.admit(inference({"a", "b", "missing"}));
  ASSERT_TRUE(t.outcome);
  EXPECT_EQ(t.outcome->epoch, 7u);
  ASSERT_EQ(t.outcome->reads.size(), 3u);
  EXPECT_EQ(t.outcome->reads[0].value->as_vector()[0], 7.0);
  EXPECT_EQ(t.outcome->reads[1].value->as_vector()[0], 28.0);
  EXPECT_FALSE(t.outcome->reads[2].value);
  EXPECT_EQ(store.live_snapshots(), 0u);
}

TEST(TxnManager, ManualBatchBoundaries) {
  VersionedStore store(StoreConfig{});
  TxnManager m(store, manual(2, 3));
  for (int i = 0; i < 7; ++i) {
    m.admit(update({add("k", 1)}));
    m.pump();
  }
  EXPECT_EQ(store.watermark(), 2u);
  m.flush();
  EXPECT_EQ(store.watermark(), 3u);
  EXPECT_EQ(store.get_committed(ShardKey::params("k"))->as_vector()[0], 7.0);
}

TEST(TxnManager, BackpressureRejectsWhenFull) {
  VersionedStore store(StoreConfig{});
  Outcomes out;
  auto cfg = manual(1, 2);
  cfg.queue_capacity = 2;
  TxnManager m(store, cfg, out.sink());
  EXPECT_TRUE(m.admit(update({add("k", 1)})).accepted);
  EXPECT_TRUE(m.admit(update({add("k", 1)})).accepted);
  auto third = m.admit(update({add("k", 1)}));
  EXPECT_FALSE(third.accepted);
  EXPECT_EQ(third.reason, RejectReason::Backpressure);
  m.flush();
  EXPECT_EQ(out.all.size(), 3u);
  EXPECT_EQ(m.stats().admitted, 3u);
}

TEST(TxnManager, LogFailureHaltsWithoutVisibility) {
  VersionedStore store(StoreConfig{});
  Outcomes out;
  FailingHook hook(2);
  TxnManager m(store, manual(2, 2), out.sink(), &hook);
  for (int i = 0; i < 6; ++i) {
    m.admit(update({add("k", 1)}));
    m.pump();
  }
  m.flush();
  EXPECT_TRUE(m.halted());
  EXPECT_EQ(store.watermark(), 1u);
  EXPECT_EQ(store.get_committed(ShardKey::params("k"))->as_vector()[0], 2.0);
  std::size_t committed = 0, halted = 0;
  for (const auto& o : out.all) {
    if (o.committed()) ++committed;
    else if (o.reason == RejectReason::Halted) ++halted;
  }
  EXPECT_EQ(committed, 2u);
  EXPECT_EQ(halted, 4u);
  auto late = m.admit(update({add("k", 1)}));
  EXPECT_EQ(late.reason, RejectReason::Halted);
}

TEST(TxnManager, BackgroundCoordinatorCommitsOnTimeout) {
  VersionedStore store(StoreConfig{});
  TxnManagerConfig cfg;
  cfg.batch_size = 1000;
  cfg.batch_timeout = std::chrono::milliseconds(2);
  std::atomic<int> seen{0};
  TxnManager m(store, cfg);
  m.admit(update({add("k", 1)}), [&](const TxnOutcome& o) {
    if (o.committed()) ++seen;
  });
  for (int i = 0; i < 1000 && seen.load() == 0; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  EXPECT_EQ(seen.load(), 1);
  m.shutdown();
}

TEST(TxnManager, EveryAdmitGetsOneOutcome) {
  VersionedStore store(StoreConfig{8, 8, 0});
  Outcomes out;
  TxnManagerConfig cfg;
  cfg.executors = 4;
  cfg.batch_size = 16;
  cfg.queue_capacity = 32;
  TxnManager m(store, cfg, out.sink());
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 500; ++i) {
        if (i % 5 == 0) m.admit(inference({"k" + std::to_string(i % 8)}));
        else m.admit(update({add("k" + std::to_string((i + t) % 8), 1.0)}));
      }
    });
  }
  for (auto& t : threads) t.join();
  m.flush();
  const auto stats = m.stats();
  EXPECT_EQ(stats.admitted, 2000u);
  EXPECT_EQ(out.all.size(), 2000u);
  std::set<std::uint64_t> ids;
  for (const auto& o : out.all) ids.insert(o.txn_id);
  EXPECT_EQ(ids.size(), 2000u);
  double total = 0;
  for (int k = 0; k < 8; ++k) {
    if (auto v = store.get_committed(ShardKey::params("k" + std::to_string(k)))) total += v->as_vector()[0];
  }
  EXPECT_EQ(total, static_cast<double>(stats.committed_updates));
}
