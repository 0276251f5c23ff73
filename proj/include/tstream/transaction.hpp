#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tstream/shard.hpp"

namespace tstream {

enum class OpKind : std::uint8_t { Write = 0, Apply = 1, Read = 2 };

// One state access against a single key. Write carries the new value,
// Apply an elementwise delta, Read nothing.
struct StateOp {
  ShardKey key;
  OpKind kind = OpKind::Read;
  ShardValue payload;

  static StateOp read(ShardKey key) { return {std::move(key), OpKind::Read, ShardValue{}}; }
  static StateOp write(ShardKey key, ShardValue value) {
    return {std::move(key), OpKind::Write, std::move(value)};
  }
  static StateOp apply(ShardKey key, std::vector<double> delta) {
    return {std::move(key), OpKind::Apply, ShardValue(std::move(delta))};
  }

  friend bool operator==(const StateOp&, const StateOp&) = default;
};

enum class TxnKind : std::uint8_t { Update = 0, Inference = 1 };

struct Transaction {
  std::uint64_t txn_id = 0;  // assigned at admission
  std::uint64_t ts = 0;      // assigned at admission
  TxnKind kind = TxnKind::Update;
  std::vector<StateOp> ops;

  friend bool operator==(const Transaction&, const Transaction&) = default;
};

inline constexpr std::size_t kMaxOpsPerTxn = 0xFFFF;

// Admission rules: at least one op, no duplicate keys, Inference = Reads
// only, Update = Write/Apply only, payloads legal for their namespace and
// finite, Apply only on Params. Returns the reason on failure.
std::optional<std::string> validate_transaction(const Transaction& txn);

// Deterministic per-key effect of one Write/Apply. `current` is the value
// before the op (absent = never written; Apply starts from zeros of the
// delta's dim). Returns the reason if the op cannot commit (dimension change
// or non-finite result); `current` is left unchanged in that case.
std::optional<std::string> apply_op(std::optional<ShardValue>& current, const StateOp& op);

enum class OutcomeStatus : std::uint8_t { Committed = 0, Rejected = 1 };
enum class RejectReason : std::uint8_t { None = 0, Validation, Backpressure, Halted };

const char* to_string(TxnKind kind) noexcept;
const char* to_string(OutcomeStatus status) noexcept;
const char* to_string(RejectReason reason) noexcept;

struct ReadResult {
  ShardKey key;
  std::optional<ShardValue> value;  // nullopt = absent
};

struct TxnOutcome {
  std::uint64_t txn_id = 0;
  std::uint64_t ts = 0;
  TxnKind kind = TxnKind::Update;
  OutcomeStatus status = OutcomeStatus::Committed;
  // Committed epoch for updates, snapshot epoch for inference.
  std::uint64_t epoch = 0;
  RejectReason reason = RejectReason::None;
  std::string detail;
  std::vector<ReadResult> reads;
  std::uint64_t latency_ns = 0;

  bool committed() const noexcept { return status == OutcomeStatus::Committed; }
};

}  // namespace tstream
