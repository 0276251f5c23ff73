#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

#include "tstream/shard.hpp"

namespace tstream {

struct StoreConfig {
  std::uint32_t partitions = 1;
  std::uint32_t max_versions = 8;
  std::uint64_t hash_seed = 0;

  // Throws Error(InvalidArgument) unless partitions >= 1 and max_versions >= 1.
  void validate() const;
};

// (FNV1a64(ns byte || name) XOR hash_seed) mod partitions.
std::uint32_t partition_of(const ShardKey& key, const StoreConfig& config) noexcept;

struct Version {
  std::uint64_t epoch = 0;
  ShardValue value;
};

// Read view pinned at a committed epoch. Obtained from and returned to the
// store that issued it; the id identifies the registration.
struct SnapshotHandle {
  std::uint64_t id = 0;
  std::uint64_t epoch_id = 0;
};

class VersionedStore;

// RAII pin for scoped reads.
class ScopedSnapshot {
 public:
  explicit ScopedSnapshot(VersionedStore& store);
  ~ScopedSnapshot();
  ScopedSnapshot(const ScopedSnapshot&) = delete;
  ScopedSnapshot& operator=(const ScopedSnapshot&) = delete;

  const SnapshotHandle& handle() const noexcept { return handle_; }
  std::uint64_t epoch() const noexcept { return handle_.epoch_id; }

 private:
  VersionedStore& store_;
  SnapshotHandle handle_;
};

// Hash-partitioned multi-version map from ShardKey to a bounded chain of
// (epoch, value) versions.
//
// Writers install versions for epoch `watermark()+1` and then call
// advance_watermark(); readers only see epochs <= their snapshot, so an
// epoch becomes visible all at once. Installs into different partitions may
// run in parallel; the caller guarantees one installer per key.
class VersionedStore {
 public:
  explicit VersionedStore(StoreConfig config);

  VersionedStore(const VersionedStore&) = delete;
  VersionedStore& operator=(const VersionedStore&) = delete;

  const StoreConfig& config() const noexcept { return config_; }
  std::uint32_t partition_of(const ShardKey& key) const noexcept {
    return tstream::partition_of(key, config_);
  }

  std::uint64_t watermark() const noexcept { return watermark_.load(std::memory_order_acquire); }

  SnapshotHandle create_snapshot();
  // Throws Error(SnapshotReleased) on double release or unknown handle.
  void release_snapshot(const SnapshotHandle& handle);
  std::size_t live_snapshots() const;

  // Largest version with epoch <= snapshot epoch, or nullopt.
  // Throws Error(SnapshotReleased) for a dead handle and Error(StaleSnapshot)
  // if the needed version was pruned.
  std::optional<ShardValue> get_at(const ShardKey& key, const SnapshotHandle& snapshot) const;

  // Newest committed value (epoch <= watermark). For the commit path, which
  // runs while no other epoch is being installed.
  std::optional<ShardValue> get_committed(const ShardKey& key) const;

  // Appends a version; rejects epoch <= the newest epoch of the key
  // (Monotonicity), a changed Params dimension (DimensionMismatch) or a
  // value that does not fit the namespace (InvalidArgument).
  void install_version(const ShardKey& key, ShardValue value, std::uint64_t epoch_id);

  // Publishes `epoch_id`; must equal watermark()+1.
  void advance_watermark(std::uint64_t epoch_id);

  Listing dump(const SnapshotHandle& snapshot) const;

  // Loads a listing as the state at `epoch_id` into an empty store.
  void restore(const Listing& listing, std::uint64_t epoch_id);

  // Copy of a key's retained chain (tests and diagnostics).
  std::vector<Version> versions(const ShardKey& key) const;
  std::size_t key_count() const;

 private:
  struct Chain {
    std::vector<Version> versions;  // ascending epoch
    std::uint64_t pruned_max_epoch = 0;
    bool pruned_any = false;
  };

  struct Partition {
    mutable std::shared_mutex mu;
    std::unordered_map<ShardKey, Chain, ShardKeyHash> chains;
  };

  void check_live(const SnapshotHandle& handle) const;
  // Epoch below which no reader can need a version.
  std::uint64_t pin_floor() const;
  void prune(Chain& chain) const;
  static std::optional<ShardValue> visible(const Chain& chain, std::uint64_t epoch,
                                           const ShardKey& key);

  StoreConfig config_;
  std::vector<std::unique_ptr<Partition>> partitions_;
  std::atomic<std::uint64_t> watermark_{0};

  mutable std::mutex snap_mu_;
  std::uint64_t next_snapshot_id_ = 1;
  std::unordered_map<std::uint64_t, std::uint64_t> live_;  // id -> epoch
  std::map<std::uint64_t, std::size_t> live_epochs_;       // epoch -> count
};

}  // namespace tstream
