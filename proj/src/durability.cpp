#include "tstream/durability.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "tstream/crc32c.hpp"
#include "tstream/error.hpp"
#include "tstream/log.hpp"

namespace fs = std::filesystem;

namespace tstream {
namespace {

[[noreturn]] void throw_io(const std::string& what, const fs::path& path) {
  throw Error(ErrorCode::Io, what + " " + path.string() + ": " + std::strerror(errno));
}

class Fd {
 public:
  Fd(const fs::path& path, int flags) : path_(path), fd_(::open(path.c_str(), flags, 0644)) {
    if (fd_ < 0) throw_io("open", path);
  }
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;

  void write_all(const std::byte* p, std::size_t n) {
    while (n > 0) {
      const auto w = ::write(fd_, p, n);
      if (w < 0) {
        if (errno == EINTR) continue;
        throw_io("write", path_);
      }
      p += w;
      n -= static_cast<std::size_t>(w);
    }
  }
  void sync() {
    if (::fsync(fd_) != 0) throw_io("fsync", path_);
  }
  void truncate(std::uint64_t size) {
    if (::ftruncate(fd_, static_cast<off_t>(size)) != 0) throw_io("ftruncate", path_);
  }

 private:
  fs::path path_;
  int fd_;
};

void sync_dir(const fs::path& dir) {
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

std::string zero_pad(std::uint64_t v) {
  std::string s = std::to_string(v);
  return std::string(20 - std::min<std::size_t>(20, s.size()), '0') + s;
}

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// "wal-<first epoch>.log" -> first epoch
std::optional<std::uint64_t> segment_epoch(const fs::path& p) {
  const auto name = p.filename().string();
  if (name.size() < 9 || name.rfind("wal-", 0) != 0 || !name.ends_with(".log")) return std::nullopt;
  return parse_u64(std::string_view(name).substr(4, name.size() - 8));
}

std::optional<std::uint64_t> sequence_of(const fs::path& p, std::string_view suffix) {
  const auto name = p.filename().string();
  if (name.rfind("ckpt-", 0) != 0 || !name.ends_with(suffix)) return std::nullopt;
  return parse_u64(std::string_view(name).substr(5, name.size() - 5 - suffix.size()));
}

}  // namespace

std::vector<std::byte> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorCode::Io, "short read " + path.string());
  return bytes;
}

void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    Fd fd(tmp, O_WRONLY | O_CREAT | O_TRUNC);
    fd.write_all(bytes.data(), bytes.size());
    fd.sync();
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "rename " + tmp.string() + ": " + ec.message());
  sync_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

std::string encode_manifest(const CheckpointManifest& m) {
  std::ostringstream out;
  out << "epoch " << m.epoch_id << '\n'
      << "file " << m.dump_file << '\n'
      << "crc " << m.crc << '\n'
      << "sequence " << m.sequence << '\n'
      << "last_txn_id " << m.last_txn_id << '\n'
      << "last_ts " << m.last_ts << '\n';
  return out.str();
}

CheckpointManifest parse_manifest(std::string_view text) {
  std::map<std::string, std::string, std::less<>> fields;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto sp = line.find(' ');
    if (sp == std::string::npos) continue;
    fields[line.substr(0, sp)] = line.substr(sp + 1);
  }
  auto num = [&](const char* name) {
    auto it = fields.find(name);
    if (it == fields.end()) throw Error(ErrorCode::Corruption, std::string("manifest lacks ") + name);
    auto v = parse_u64(it->second);
    if (!v) throw Error(ErrorCode::Corruption, std::string("manifest field ") + name + " malformed");
    return *v;
  };
  CheckpointManifest m;
  m.epoch_id = num("epoch");
  m.crc = static_cast<std::uint32_t>(num("crc"));
  m.sequence = num("sequence");
  m.last_txn_id = fields.contains("last_txn_id") ? num("last_txn_id") : 0;
  m.last_ts = fields.contains("last_ts") ? num("last_ts") : 0;
  auto file = fields.find("file");
  if (file == fields.end() || file->second.empty() || file->second.find('/') != std::string::npos) {
    throw Error(ErrorCode::Corruption, "manifest file name missing or invalid");
  }
  m.dump_file = file->second;
  return m;
}

std::vector<fs::path> list_wal_segments(const fs::path& dir) {
  std::vector<std::pair<std::uint64_t, fs::path>> found;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (auto e = segment_epoch(entry.path())) found.emplace_back(*e, entry.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [_, p] : found) out.push_back(std::move(p));
  return out;
}

std::vector<CheckpointManifest> list_manifests(const fs::path& dir) {
  std::vector<CheckpointManifest> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (!sequence_of(entry.path(), ".manifest")) continue;
    try {
      auto bytes = read_file_bytes(entry.path());
      out.push_back(parse_manifest(
          std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
    } catch (const Error& e) {
      log::warn("ignoring manifest ", entry.path().string(), ": ", e.what());
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.sequence > b.sequence; });
  return out;
}

Recovered recover(const fs::path& dir, const StoreConfig& config) {
  Recovered result;
  auto& report = result.report;

  std::optional<Listing> base;
  for (const auto& m : list_manifests(dir)) {
    const auto dump_path = dir / m.dump_file;
    try {
      auto bytes = read_file_bytes(dump_path);
      if (crc32c(bytes) != m.crc) {
        log::warn("checkpoint ", dump_path.string(), " fails CRC; trying an older one");
        continue;
      }
      base = decode_listing(bytes);
    } catch (const Error& e) {
      log::warn("checkpoint ", dump_path.string(), " unusable: ", e.what());
      continue;
    }
    report.checkpoint_epoch = m.epoch_id;
    report.checkpoint_sequence = m.sequence;
    report.last_txn_id = m.last_txn_id;
    report.last_ts = m.last_ts;
    break;
  }

  result.store = std::make_unique<VersionedStore>(config);
  auto& store = *result.store;
  if (base) store.restore(*base, report.checkpoint_epoch);

  std::uint64_t expected = report.checkpoint_epoch + 1;
  const auto segments = list_wal_segments(dir);
  bool stopped = false;
  for (const auto& seg : segments) {
    auto bytes = read_file_bytes(seg);
    if (stopped) {
      report.truncated_bytes += bytes.size();
      continue;
    }
    auto scan = scan_wal(bytes);
    std::size_t valid_end = 0;
    for (std::size_t i = 0; i < scan.records.size(); ++i) {
      const auto& rec = scan.records[i];
      if (rec.epoch_id < expected) {
        valid_end = scan.record_ends[i];
        continue;
      }
      if (rec.epoch_id != expected) {
        stopped = true;
        break;
      }
      std::map<ShardKey, std::optional<ShardValue>> touched;
      for (const auto& txn : rec.txns) {
        for (const auto& op : txn.ops) {
          auto it = touched.find(op.key);
          if (it == touched.end()) it = touched.emplace(op.key, store.get_committed(op.key)).first;
          if (auto err = apply_op(it->second, op)) {
            throw Error(ErrorCode::Corruption, "WAL epoch " + std::to_string(rec.epoch_id) +
                                                   " does not replay: " + *err);
          }
        }
        report.last_txn_id = std::max(report.last_txn_id, txn.txn_id);
        report.last_ts = std::max(report.last_ts, txn.ts);
      }
      for (auto& [key, value] : touched) store.install_version(key, std::move(*value), rec.epoch_id);
      store.advance_watermark(rec.epoch_id);
      ++expected;
      ++report.replayed_epochs;
      valid_end = scan.record_ends[i];
    }
    if (!scan.clean) stopped = true;
    report.wal_tail_segment = seg;
    report.wal_tail_bytes = valid_end;
    report.truncated_bytes += bytes.size() - valid_end;
  }
  report.restored_epoch = store.watermark();
  return result;
}

class DurabilityManager::Segment {
 public:
  Segment(fs::path path, std::uint64_t first_epoch)
      : path_(std::move(path)), first_epoch_(first_epoch), fd_(path_, O_WRONLY | O_CREAT | O_APPEND) {}

  std::uint64_t first_epoch() const noexcept { return first_epoch_; }
  Fd& fd() noexcept { return fd_; }

 private:
  fs::path path_;
  std::uint64_t first_epoch_;
  Fd fd_;
};

DurabilityManager::DurabilityManager(DurabilityConfig config, VersionedStore& store,
                                     const RecoveryReport* resume)
    : config_(std::move(config)), store_(store) {
  if (config_.fsync_every == 0) config_.fsync_every = 1;
  if (config_.retain_checkpoints == 0) config_.retain_checkpoints = 1;
  fs::create_directories(config_.dir);

  for (const auto& m : list_manifests(config_.dir)) {
    next_sequence_ = std::max(next_sequence_, m.sequence + 1);
  }
  last_epoch_ = store_.watermark();

  if (resume) {
    last_txn_id_ = resume->last_txn_id;
    last_ts_ = resume->last_ts;
    // Cut the torn tail and anything after it.
    bool past_tail = resume->wal_tail_segment.empty();
    for (const auto& seg : list_wal_segments(config_.dir)) {
      if (past_tail) {
        fs::remove(seg);
        continue;
      }
      if (seg == resume->wal_tail_segment) {
        Fd fd(seg, O_WRONLY);
        fd.truncate(resume->wal_tail_bytes);
        fd.sync();
        past_tail = true;
      }
    }
    sync_dir(config_.dir);
  }
}

DurabilityManager::~DurabilityManager() { wait_for_checkpoints(); }

fs::path DurabilityManager::segment_path(std::uint64_t first_epoch) const {
  return config_.dir / ("wal-" + zero_pad(first_epoch) + ".log");
}

std::uint64_t DurabilityManager::segment_first_epoch(std::uint64_t epoch) const {
  if (config_.checkpoint_every == 0) return 1;
  return ((epoch - 1) / config_.checkpoint_every) * config_.checkpoint_every + 1;
}

void DurabilityManager::log_epoch(const WalRecord& record) {
  std::lock_guard lock(wal_mu_);
  if (crashed_) throw Error(ErrorCode::CrashInjected, "WAL writer crashed earlier");
  if (record.epoch_id <= last_epoch_) {
    throw Error(ErrorCode::Monotonicity, "WAL epoch " + std::to_string(record.epoch_id) +
                                             " not after " + std::to_string(last_epoch_));
  }
  const auto bytes = encode_wal_record(record);

  const auto first = segment_first_epoch(record.epoch_id);
  if (!segment_ || segment_->first_epoch() != first) {
    if (segment_) segment_->fd().sync();
    // Resume into an existing segment when the recovered tail lives there.
    fs::path path = segment_path(first);
    for (const auto& seg : list_wal_segments(config_.dir)) {
      if (auto e = segment_epoch(seg); e && *e <= record.epoch_id && *e >= first) path = seg;
    }
    segment_ = std::make_unique<Segment>(path, first);
    sync_dir(config_.dir);
  }

  if (config_.crash_at_byte && bytes_written_ + bytes.size() > *config_.crash_at_byte) {
    const auto partial = static_cast<std::size_t>(*config_.crash_at_byte - bytes_written_);
    segment_->fd().write_all(bytes.data(), partial);
    segment_->fd().sync();
    bytes_written_ += partial;
    crashed_ = true;
    throw Error(ErrorCode::CrashInjected,
                "injected crash at WAL byte " + std::to_string(*config_.crash_at_byte));
  }

  segment_->fd().write_all(bytes.data(), bytes.size());
  bytes_written_ += bytes.size();
  if (++epochs_since_sync_ >= config_.fsync_every) {
    segment_->fd().sync();
    epochs_since_sync_ = 0;
  }
  last_epoch_ = record.epoch_id;
  for (const auto& txn : record.txns) {
    last_txn_id_ = std::max(last_txn_id_, txn.txn_id);
    last_ts_ = std::max(last_ts_, txn.ts);
  }
}

void DurabilityManager::epoch_visible(std::uint64_t epoch_id) {
  if (config_.checkpoint_every == 0 || epoch_id % config_.checkpoint_every != 0) return;
  std::uint64_t txn_id = 0;
  std::uint64_t ts = 0;
  {
    std::lock_guard lock(wal_mu_);
    txn_id = last_txn_id_;
    ts = last_ts_;
  }
  if (!config_.async_checkpoints) {
    std::lock_guard lock(ckpt_mu_);
    auto snap = store_.create_snapshot();
    try {
      write_checkpoint(snap, txn_id, ts);
    } catch (...) {
      store_.release_snapshot(snap);
      throw;
    }
    store_.release_snapshot(snap);
    return;
  }
  std::unique_lock lock(ckpt_mu_, std::try_to_lock);
  if (!lock.owns_lock()) {
    log::debug("checkpoint at epoch ", epoch_id, " skipped: previous one still running");
    return;
  }
  if (ckpt_thread_.joinable()) ckpt_thread_.join();
  auto snap = store_.create_snapshot();
  ckpt_thread_ = std::jthread([this, snap, txn_id, ts] {
    std::lock_guard inner(ckpt_mu_);
    try {
      write_checkpoint(snap, txn_id, ts);
    } catch (const std::exception& e) {
      log::error("checkpoint at epoch ", snap.epoch_id, " failed: ", e.what());
    }
    store_.release_snapshot(snap);
  });
}

CheckpointManifest DurabilityManager::checkpoint(const SnapshotHandle& snapshot) {
  std::uint64_t txn_id = 0;
  std::uint64_t ts = 0;
  {
    std::lock_guard lock(wal_mu_);
    txn_id = last_txn_id_;
    ts = last_ts_;
  }
  wait_for_checkpoints();
  std::lock_guard lock(ckpt_mu_);
  return write_checkpoint(snapshot, txn_id, ts);
}

// Caller holds ckpt_mu_.
CheckpointManifest DurabilityManager::write_checkpoint(const SnapshotHandle& snapshot,
                                                       std::uint64_t last_txn_id,
                                                       std::uint64_t last_ts) {
  CheckpointManifest m;
  m.epoch_id = snapshot.epoch_id;
  m.sequence = next_sequence_++;
  m.dump_file = "ckpt-" + zero_pad(m.sequence) + ".dump";
  m.last_txn_id = last_txn_id;
  m.last_ts = last_ts;

  const auto bytes = encode_listing(store_.dump(snapshot));
  m.crc = crc32c(bytes);
  write_file_atomic(config_.dir / m.dump_file, bytes);
  const auto text = encode_manifest(m);
  write_file_atomic(config_.dir / ("ckpt-" + zero_pad(m.sequence) + ".manifest"),
                    std::as_bytes(std::span(text.data(), text.size())));

  auto manifests = list_manifests(config_.dir);
  if (manifests.size() > config_.retain_checkpoints) {
    manifests.resize(config_.retain_checkpoints);
  }
  prune_locked(manifests);
  log::info("checkpoint ", m.sequence, " at epoch ", m.epoch_id);
  return m;
}

void DurabilityManager::prune_locked(const std::vector<CheckpointManifest>& retained) {
  std::uint64_t oldest_seq = retained.empty() ? 0 : retained.back().sequence;
  std::uint64_t oldest_epoch = retained.empty() ? 0 : retained.back().epoch_id;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(config_.dir, ec)) {
    const auto& p = entry.path();
    auto seq = sequence_of(p, ".manifest");
    if (!seq) seq = sequence_of(p, ".dump");
    if (seq && *seq < oldest_seq) fs::remove(p, ec);
  }
  // A segment may go once every epoch in it is covered by the oldest
  // retained checkpoint. The newest segment always stays.
  std::lock_guard lock(wal_mu_);
  const auto segments = list_wal_segments(config_.dir);
  for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
    const auto next_first = segment_epoch(segments[i + 1]);
    if (next_first && *next_first - 1 <= oldest_epoch) {
      if (segment_ && segment_path(segment_->first_epoch()) == segments[i]) continue;
      fs::remove(segments[i], ec);
    }
  }
}

void DurabilityManager::wait_for_checkpoints() {
  if (ckpt_thread_.joinable()) ckpt_thread_.join();
}

std::uint64_t DurabilityManager::wal_bytes_written() const {
  auto& self = const_cast<DurabilityManager&>(*this);
  std::lock_guard lock(self.wal_mu_);
  return bytes_written_;
}

std::vector<CheckpointManifest> DurabilityManager::checkpoints() const {
  return list_manifests(config_.dir);
}

}  // namespace tstream
