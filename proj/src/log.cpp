#include "tstream/error.hpp"
#include "tstream/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace tstream {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::Monotonicity: return "monotonicity";
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::StaleSnapshot: return "stale-snapshot";
    case ErrorCode::SnapshotReleased: return "snapshot-released";
    case ErrorCode::Corruption: return "corruption";
    case ErrorCode::Io: return "io";
    case ErrorCode::Halted: return "halted";
    case ErrorCode::CrashInjected: return "crash-injected";
  }
  return "unknown";
}

namespace log {
namespace {

Level parse_env() {
  const char* env = std::getenv("TSTREAM_LOG");
  if (env == nullptr) return Level::Warn;
  std::string v(env);
  if (v == "error") return Level::Error;
  if (v == "info") return Level::Info;
  if (v == "debug" || v == "trace") return Level::Debug;
  return Level::Warn;
}

std::atomic<int>& level_slot() {
  static std::atomic<int> slot{static_cast<int>(parse_env())};
  return slot;
}

std::mutex& out_mutex() {
  static std::mutex mu;
  return mu;
}

const char* tag(Level level) {
  switch (level) {
    case Level::Error: return "E";
    case Level::Warn: return "W";
    case Level::Info: return "I";
    case Level::Debug: return "D";
  }
  return "?";
}

}  // namespace

Level threshold() { return static_cast<Level>(level_slot().load(std::memory_order_relaxed)); }

void set_threshold(Level level) { level_slot().store(static_cast<int>(level)); }

void write(Level level, std::string_view message) {
  std::lock_guard lock(out_mutex());
  std::cerr << "[tstream " << tag(level) << "] " << message << '\n';
}

}  // namespace log
}  // namespace tstream
