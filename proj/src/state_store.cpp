#include "tstream/state_store.hpp"

#include <algorithm>

#include "tstream/error.hpp"

namespace tstream {

void StoreConfig::validate() const {
  if (partitions < 1) throw Error(ErrorCode::InvalidArgument, "partitions must be >= 1");
  if (max_versions < 1) throw Error(ErrorCode::InvalidArgument, "max_versions must be >= 1");
}

std::uint32_t partition_of(const ShardKey& key, const StoreConfig& config) noexcept {
  return static_cast<std::uint32_t>((fnv1a64(key) ^ config.hash_seed) % config.partitions);
}

ScopedSnapshot::ScopedSnapshot(VersionedStore& store)
    : store_(store), handle_(store.create_snapshot()) {}

ScopedSnapshot::~ScopedSnapshot() { store_.release_snapshot(handle_); }

VersionedStore::VersionedStore(StoreConfig config) : config_(config) {
  config_.validate();
  partitions_.reserve(config_.partitions);
  for (std::uint32_t i = 0; i < config_.partitions; ++i) {
    partitions_.push_back(std::make_unique<Partition>());
  }
}

SnapshotHandle VersionedStore::create_snapshot() {
  std::lock_guard lock(snap_mu_);
  SnapshotHandle h{next_snapshot_id_++, watermark()};
  live_.emplace(h.id, h.epoch_id);
  ++live_epochs_[h.epoch_id];
  return h;
}

void VersionedStore::release_snapshot(const SnapshotHandle& handle) {
  std::lock_guard lock(snap_mu_);
  auto it = live_.find(handle.id);
  if (it == live_.end() || it->second != handle.epoch_id) {
    throw Error(ErrorCode::SnapshotReleased, "snapshot released twice or never issued");
  }
  live_.erase(it);
  auto e = live_epochs_.find(handle.epoch_id);
  if (--e->second == 0) live_epochs_.erase(e);
}

std::size_t VersionedStore::live_snapshots() const {
  std::lock_guard lock(snap_mu_);
  return live_.size();
}

void VersionedStore::check_live(const SnapshotHandle& handle) const {
  std::lock_guard lock(snap_mu_);
  auto it = live_.find(handle.id);
  if (it == live_.end() || it->second != handle.epoch_id) {
    throw Error(ErrorCode::SnapshotReleased, "read through a released snapshot");
  }
}

std::uint64_t VersionedStore::pin_floor() const {
  std::lock_guard lock(snap_mu_);
  std::uint64_t floor = watermark();
  if (!live_epochs_.empty()) floor = std::min(floor, live_epochs_.begin()->first);
  return floor;
}

std::optional<ShardValue> VersionedStore::visible(const Chain& chain, std::uint64_t epoch,
                                                  const ShardKey& key) {
  auto it = std::upper_bound(chain.versions.begin(), chain.versions.end(), epoch,
                             [](std::uint64_t e, const Version& v) { return e < v.epoch; });
  if (it == chain.versions.begin()) {
    if (chain.pruned_any && chain.pruned_max_epoch <= epoch) {
      throw Error(ErrorCode::StaleSnapshot,
                  "version of " + to_string(key) + " needed by snapshot was pruned");
    }
    return std::nullopt;
  }
  return std::prev(it)->value;
}

std::optional<ShardValue> VersionedStore::get_at(const ShardKey& key,
                                                 const SnapshotHandle& snapshot) const {
  check_live(snapshot);
  const auto& part = *partitions_[partition_of(key)];
  std::shared_lock lock(part.mu);
  auto it = part.chains.find(key);
  if (it == part.chains.end()) return std::nullopt;
  return visible(it->second, snapshot.epoch_id, key);
}

std::optional<ShardValue> VersionedStore::get_committed(const ShardKey& key) const {
  const auto& part = *partitions_[partition_of(key)];
  std::shared_lock lock(part.mu);
  auto it = part.chains.find(key);
  if (it == part.chains.end()) return std::nullopt;
  return visible(it->second, watermark(), key);
}

void VersionedStore::prune(Chain& chain) const {
  auto& vs = chain.versions;
  if (vs.size() <= config_.max_versions) return;
  // Versions from the one visible at the pin floor onward stay.
  const std::uint64_t floor = pin_floor();
  auto protected_from = std::upper_bound(vs.begin(), vs.end(), floor,
                                         [](std::uint64_t e, const Version& v) { return e < v.epoch; });
  if (protected_from != vs.begin()) --protected_from;
  const auto removable = static_cast<std::size_t>(protected_from - vs.begin());
  const std::size_t excess = vs.size() - config_.max_versions;
  const std::size_t n = std::min(removable, excess);
  if (n == 0) return;
  chain.pruned_any = true;
  chain.pruned_max_epoch = vs[n - 1].epoch;
  vs.erase(vs.begin(), vs.begin() + static_cast<std::ptrdiff_t>(n));
}

void VersionedStore::install_version(const ShardKey& key, ShardValue value,
                                     std::uint64_t epoch_id) {
  if (auto err = check_value_for_key(key, value)) {
    throw Error(ErrorCode::InvalidArgument, to_string(key) + ": " + *err);
  }
  auto& part = *partitions_[partition_of(key)];
  std::unique_lock lock(part.mu);
  auto& chain = part.chains[key];
  if (!chain.versions.empty()) {
    const auto& newest = chain.versions.back();
    if (epoch_id <= newest.epoch) {
      throw Error(ErrorCode::Monotonicity,
                  to_string(key) + ": install at epoch " + std::to_string(epoch_id) +
                      " not after " + std::to_string(newest.epoch));
    }
    if (key.ns() == Namespace::Params && newest.value.dim() != value.dim()) {
      throw Error(ErrorCode::DimensionMismatch, to_string(key) + ": dimension change");
    }
  }
  chain.versions.push_back(Version{epoch_id, std::move(value)});
  prune(chain);
}

void VersionedStore::advance_watermark(std::uint64_t epoch_id) {
  auto current = watermark();
  if (epoch_id != current + 1) {
    throw Error(ErrorCode::Monotonicity, "watermark must advance by exactly one epoch");
  }
  watermark_.store(epoch_id, std::memory_order_release);
}

Listing VersionedStore::dump(const SnapshotHandle& snapshot) const {
  check_live(snapshot);
  Listing out;
  for (const auto& part : partitions_) {
    std::shared_lock lock(part->mu);
    for (const auto& [key, chain] : part->chains) {
      if (auto v = visible(chain, snapshot.epoch_id, key)) out.emplace_back(key, std::move(*v));
    }
  }
  std::sort(out.begin(), out.end(),
            [](const KeyValue& a, const KeyValue& b) { return a.first < b.first; });
  return out;
}

void VersionedStore::restore(const Listing& listing, std::uint64_t epoch_id) {
  if (key_count() != 0 || watermark() != 0) {
    throw Error(ErrorCode::InvalidArgument, "restore requires an empty store");
  }
  for (const auto& [key, value] : listing) install_version(key, value, epoch_id);
  watermark_.store(epoch_id, std::memory_order_release);
}

std::vector<Version> VersionedStore::versions(const ShardKey& key) const {
  const auto& part = *partitions_[partition_of(key)];
  std::shared_lock lock(part.mu);
  auto it = part.chains.find(key);
  return it == part.chains.end() ? std::vector<Version>{} : it->second.versions;
}

std::size_t VersionedStore::key_count() const {
  std::size_t n = 0;
  for (const auto& part : partitions_) {
    std::shared_lock lock(part->mu);
    n += part->chains.size();
  }
  return n;
}

}  // namespace tstream
