#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "tstream/durability.hpp"
#include "tstream/error.hpp"

using namespace tstream;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("tstream-dur-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "-" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Engine-free commit: logs, installs and publishes one epoch of Applies.
void commit(VersionedStore& store, DurabilityManager& d, double delta, const char* key = "k") {
  const auto epoch = store.watermark() + 1;
  WalRecord r;
  r.epoch_id = epoch;
  Transaction t;
  t.txn_id = t.ts = epoch;
  t.ops.push_back(StateOp::apply(ShardKey::params(key), {delta}));
  r.txns.push_back(t);
  d.log_epoch(r);
  auto cur = store.get_committed(ShardKey::params(key));
  apply_op(cur, t.ops[0]);
  store.install_version(ShardKey::params(key), *cur, epoch);
  store.advance_watermark(epoch);
  d.epoch_visible(epoch);
}

DurabilityConfig cfg_for(const fs::path& dir, std::uint64_t every = 0) {
  DurabilityConfig c;
  c.dir = dir;
  c.checkpoint_every = every;
  c.async_checkpoints = false;
  return c;
}

Listing dump_of(VersionedStore& s) {
  ScopedSnapshot snap(s);
  return s.dump(snap.handle());
}

}  // namespace

TEST(Durability, AppendRejectsNonIncreasingEpoch) {
  TempDir dir;
  VersionedStore store(StoreConfig{});
  DurabilityManager d(cfg_for(dir.path()), store);
  WalRecord r;
  r.epoch_id = 3;
  d.log_epoch(r);
  r.epoch_id = 2;
  try {
    d.log_epoch(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Monotonicity);
  }
}

TEST(Durability, RecoverReplaysLog) {
  TempDir dir;
  VersionedStore store(StoreConfig{});
  {
    DurabilityManager d(cfg_for(dir.path()), store);
    for (int i = 1; i <= 5; ++i) commit(store, d, i);
  }
  auto rec = recover(dir.path(), StoreConfig{});
  EXPECT_EQ(rec.report.restored_epoch, 5u);
  EXPECT_EQ(rec.report.replayed_epochs, 5u);
  EXPECT_EQ(rec.report.truncated_bytes, 0u);
  EXPECT_EQ(rec.report.last_txn_id, 5u);
  EXPECT_EQ(dump_of(*rec.store), dump_of(store));
}

TEST(Durability, AckedButInvisibleEpochIsRecovered) {
  TempDir dir;
  VersionedStore store(StoreConfig{});
  {
    DurabilityManager d(cfg_for(dir.path()), store);
    commit(store, d, 1);
    WalRecord r;
    r.epoch_id = 2;
    Transaction t;
    t.txn_id = t.ts = 2;
    t.ops.push_back(StateOp::apply(ShardKey::params("k"), {10}));
    r.txns.push_back(t);
    d.log_epoch(r);  // crash before install
  }
  auto rec = recover(dir.path(), StoreConfig{});
  EXPECT_EQ(rec.report.restored_epoch, 2u);
  EXPECT_EQ(rec.store->get_committed(ShardKey::params("k"))->as_vector()[0], 11.0);
}

TEST(Durability, TornRecordIsExcluded) {
  TempDir dir;
  std::uint64_t before = 0;
  {
    VersionedStore store(StoreConfig{});
    DurabilityManager d(cfg_for(dir.path()), store);
    commit(store, d, 1);
    commit(store, d, 2);
    before = d.wal_bytes_written();
  }
  // Crash five bytes into the third epoch's record.
  fs::remove_all(dir.path());
  VersionedStore again(StoreConfig{});
  auto c = cfg_for(dir.path());
  c.crash_at_byte = before + 5;
  DurabilityManager d(c, again);
  commit(again, d, 1);
  commit(again, d, 2);
  try {
    commit(again, d, 3);
    FAIL() << "no crash";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CrashInjected);
  }
  auto rec = recover(dir.path(), StoreConfig{});
  EXPECT_EQ(rec.report.restored_epoch, 2u);
  EXPECT_EQ(rec.report.truncated_bytes, 5u);
  EXPECT_EQ(rec.store->get_committed(ShardKey::params("k"))->as_vector()[0], 3.0);
}

TEST(Durability, CheckpointThenRecover) {
  TempDir dir;
  VersionedStore store(StoreConfig{});
  {
    DurabilityManager d(cfg_for(dir.path(), 5), store);
    for (int i = 1; i <= 7; ++i) commit(store, d, 1);
    EXPECT_EQ(d.checkpoints().size(), 1u);
  }
  auto rec = recover(dir.path(), StoreConfig{});
  EXPECT_EQ(rec.report.checkpoint_epoch, 5u);
  EXPECT_GE(rec.report.restored_epoch, 5u);
  EXPECT_EQ(rec.report.restored_epoch, rec.report.checkpoint_epoch + rec.report.replayed_epochs);
  EXPECT_EQ(dump_of(*rec.store), dump_of(store));
}

TEST(Durability, DamagedCheckpointFallsBack) {
  TempDir dir;
  VersionedStore store(StoreConfig{});
  {
    DurabilityManager d(cfg_for(dir.path(), 4), store);
    for (int i = 1; i <= 9; ++i) commit(store, d, i);
  }
  auto manifests = list_manifests(dir.path());
  ASSERT_EQ(manifests.size(), 2u);
  const auto newest = manifests[0];
  EXPECT_EQ(newest.epoch_id, 8u);

  // Truncated dump with an intact manifest: the CRC catches it.
  fs::resize_file(dir.path() / newest.dump_file, 3);
  auto rec = recover(dir.path(), StoreConfig{});
  EXPECT_EQ(rec.report.checkpoint_epoch, 4u);
  EXPECT_EQ(rec.report.restored_epoch, 9u);
  EXPECT_EQ(dump_of(*rec.store), dump_of(store));

  // Manifest never written.
  char name[64];
  std::snprintf(name, sizeof name, "ckpt-%020llu.manifest", static_cast<unsigned long long>(newest.sequence));
  fs::remove(dir.path() / name);
  rec = recover(dir.path(), StoreConfig{});
  EXPECT_EQ(rec.report.checkpoint_sequence, manifests[1].sequence);
  EXPECT_EQ(dump_of(*rec.store), dump_of(store));
}

TEST(Durability, RetentionPrunesOldCheckpointsAndSegments) {
  TempDir dir;
  VersionedStore store(StoreConfig{});
  {
    DurabilityManager d(cfg_for(dir.path(), 3), store);
    for (int i = 1; i <= 12; ++i) commit(store, d, 1);
    const auto kept = d.checkpoints();
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_EQ(kept[0].epoch_id, 12u);
    EXPECT_EQ(kept[1].epoch_id, 9u);
  }
  for (const auto& seg : list_wal_segments(dir.path())) {
    EXPECT_EQ(seg.filename().string(), "wal-00000000000000000010.log");
  }
  auto rec = recover(dir.path(), StoreConfig{});
  EXPECT_EQ(rec.report.restored_epoch, 12u);
  EXPECT_EQ(dump_of(*rec.store), dump_of(store));
}

TEST(Durability, RecoveryIsIdempotent) {
  TempDir dir;
  VersionedStore store(StoreConfig{});
  {
    auto c = cfg_for(dir.path(), 4);
    c.crash_at_byte = 700;
    DurabilityManager d(c, store);
    try {
      for (int i = 1; i <= 50; ++i) commit(store, d, 0.5 * i, i % 2 ? "a" : "b");
    } catch (const Error&) {
    }
  }
  auto a = recover(dir.path(), StoreConfig{});
  auto b = recover(dir.path(), StoreConfig{});
  EXPECT_EQ(a.report, b.report);
  EXPECT_EQ(encode_listing(dump_of(*a.store)), encode_listing(dump_of(*b.store)));
  EXPECT_GT(a.report.truncated_bytes, 0u);
}

TEST(Durability, ResumeTruncatesTornTail) {
  TempDir dir;
  VersionedStore store(StoreConfig{});
  {
    auto c = cfg_for(dir.path(), 0);
    c.crash_at_byte = 150;
    DurabilityManager d(c, store);
    try {
      for (int i = 1; i <= 20; ++i) commit(store, d, 1);
    } catch (const Error&) {
    }
  }
  auto rec = recover(dir.path(), StoreConfig{});
  const auto restored = rec.report.restored_epoch;
  ASSERT_GT(rec.report.truncated_bytes, 0u);
  {
    DurabilityManager d(cfg_for(dir.path(), 0), *rec.store, &rec.report);
    for (int i = 0; i < 3; ++i) commit(*rec.store, d, 1);
  }
  auto again = recover(dir.path(), StoreConfig{});
  EXPECT_EQ(again.report.truncated_bytes, 0u);
  EXPECT_EQ(again.report.restored_epoch, restored + 3);
  EXPECT_EQ(again.store->get_committed(ShardKey::params("k"))->as_vector()[0],
            static_cast<double>(restored + 3));
}

TEST(Durability, ManifestRoundTrip) {
  CheckpointManifest m{17, "ckpt-00000000000000000003.dump", 0xDEADBEEF, 3, 99, 100};
  EXPECT_EQ(parse_manifest(encode_manifest(m)), m);
  EXPECT_THROW(parse_manifest("epoch 5\n"), Error);
}
