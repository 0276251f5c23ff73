#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "tstream/state_store.hpp"
#include "tstream/txn_manager.hpp"
#include "tstream/wal.hpp"

namespace tstream {

struct DurabilityConfig {
  std::filesystem::path dir;
  // Checkpoint when epoch % checkpoint_every == 0; 0 disables checkpoints.
  // Also the WAL segment length in epochs.
  std::uint64_t checkpoint_every = 64;
  // Group commit: fsync every G epochs. G > 1 means a crash may lose the
  // last G-1 acknowledged epochs.
  std::uint64_t fsync_every = 1;
  std::size_t retain_checkpoints = 2;
  // Write checkpoints from a background thread.
  bool async_checkpoints = true;
  // Crash injection: stop writing once this many WAL bytes were written in
  // this session, leaving a torn record, and fail the epoch.
  std::optional<std::uint64_t> crash_at_byte;
};

struct CheckpointManifest {
  std::uint64_t epoch_id = 0;
  std::string dump_file;
  std::uint32_t crc = 0;
  std::uint64_t sequence = 0;
  // Clock position at the checkpoint, for resuming admission.
  std::uint64_t last_txn_id = 0;
  std::uint64_t last_ts = 0;

  friend bool operator==(const CheckpointManifest&, const CheckpointManifest&) = default;
};

std::string encode_manifest(const CheckpointManifest& manifest);
// Throws Error(Corruption) if a required field is missing or malformed.
CheckpointManifest parse_manifest(std::string_view text);

struct RecoveryReport {
  std::uint64_t restored_epoch = 0;
  std::uint64_t checkpoint_epoch = 0;
  std::optional<std::uint64_t> checkpoint_sequence;
  std::uint64_t replayed_epochs = 0;
  std::uint64_t truncated_bytes = 0;
  std::uint64_t last_txn_id = 0;
  std::uint64_t last_ts = 0;
  // Where appending resumes: the segment holding the last valid record and
  // its valid length. Empty path when the log is empty.
  std::filesystem::path wal_tail_segment;
  std::uint64_t wal_tail_bytes = 0;

  friend bool operator==(const RecoveryReport&, const RecoveryReport&) = default;
};

struct Recovered {
  std::unique_ptr<VersionedStore> store;
  RecoveryReport report;
};

// Loads the newest valid checkpoint and redoes the WAL after it up to the
// first torn or invalid record. Read-only: files are not modified, so
// running it twice gives the same result.
Recovered recover(const std::filesystem::path& dir, const StoreConfig& config);

// WAL appender and checkpointer attached to a TxnManager.
class DurabilityManager final : public DurabilityHook {
 public:
  // With `resume`, the log is first cut back to the recovered prefix.
  DurabilityManager(DurabilityConfig config, VersionedStore& store,
                    const RecoveryReport* resume = nullptr);
  ~DurabilityManager() override;

  void log_epoch(const WalRecord& record) override;
  void epoch_visible(std::uint64_t epoch_id) override;

  // Writes a checkpoint of `snapshot` (dump, fsync, then manifest by
  // atomic rename) and prunes older checkpoints and WAL segments.
  CheckpointManifest checkpoint(const SnapshotHandle& snapshot);
  void wait_for_checkpoints();

  std::uint64_t wal_bytes_written() const;
  std::vector<CheckpointManifest> checkpoints() const;
  const DurabilityConfig& config() const noexcept { return config_; }

 private:
  class Segment;

  std::filesystem::path segment_path(std::uint64_t first_epoch) const;
  std::uint64_t segment_first_epoch(std::uint64_t epoch) const;
  void prune_locked(const std::vector<CheckpointManifest>& retained);
  CheckpointManifest write_checkpoint(const SnapshotHandle& snapshot, std::uint64_t last_txn_id,
                                      std::uint64_t last_ts);

  DurabilityConfig config_;
  VersionedStore& store_;

  std::mutex wal_mu_;
  std::unique_ptr<Segment> segment_;
  std::uint64_t last_epoch_ = 0;
  std::uint64_t bytes_written_ = 0;
  std::uint64_t epochs_since_sync_ = 0;
  bool crashed_ = false;
  std::uint64_t last_txn_id_ = 0;
  std::uint64_t last_ts_ = 0;

  mutable std::mutex ckpt_mu_;
  std::uint64_t next_sequence_ = 1;
  std::jthread ckpt_thread_;
};

// Lists `wal-*.log` segments in epoch order.
std::vector<std::filesystem::path> list_wal_segments(const std::filesystem::path& dir);
// Lists parseable checkpoint manifests, newest sequence first.
std::vector<CheckpointManifest> list_manifests(const std::filesystem::path& dir);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
// Writes via a temporary file, fsyncs it and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace tstream
