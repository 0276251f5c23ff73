#include "tstream/transaction.hpp"

#include <cmath>
#include <unordered_set>

namespace tstream {

std::optional<std::string> validate_transaction(const Transaction& txn) {
  if (txn.ops.empty()) return "transaction has no operations";
  if (txn.ops.size() > kMaxOpsPerTxn) return "too many operations";
  std::unordered_set<ShardKey, ShardKeyHash> seen;
  for (const auto& op : txn.ops) {
    if (!seen.insert(op.key).second) return "duplicate key " + to_string(op.key);
    if (txn.kind == TxnKind::Inference) {
      if (op.kind != OpKind::Read) return "inference transaction may only read";
      continue;
    }
    switch (op.kind) {
      case OpKind::Read:
        return "update transaction may not contain reads";
      case OpKind::Write:
        if (auto err = check_value_for_key(op.key, op.payload)) return *err;
        break;
      case OpKind::Apply:
        if (op.key.ns() != Namespace::Params) return "apply is only defined on Params keys";
        if (auto err = check_value_for_key(op.key, op.payload)) return *err;
        break;
    }
  }
  return std::nullopt;
}

std::optional<std::string> apply_op(std::optional<ShardValue>& current, const StateOp& op) {
  if (op.kind == OpKind::Write) {
    if (op.key.ns() == Namespace::Params && current && current->dim() != op.payload.dim()) {
      return "write changes dimension of " + to_string(op.key);
    }
    current = op.payload;
    return std::nullopt;
  }
  if (op.kind != OpKind::Apply) return "read has no effect on state";

  const auto& delta = op.payload.as_vector();
  std::vector<double> next = current ? current->as_vector() : std::vector<double>(delta.size(), 0.0);
  if (next.size() != delta.size()) return "apply dimension mismatch on " + to_string(op.key);
  for (std::size_t i = 0; i < next.size(); ++i) {
    next[i] += delta[i];
    if (!std::isfinite(next[i])) return "apply produced non-finite value on " + to_string(op.key);
  }
  current = ShardValue(std::move(next));
  return std::nullopt;
}

const char* to_string(TxnKind kind) noexcept {
  return kind == TxnKind::Update ? "update" : "inference";
}

const char* to_string(OutcomeStatus status) noexcept {
  return status == OutcomeStatus::Committed ? "committed" : "rejected";
}

const char* to_string(RejectReason reason) noexcept {
  switch (reason) {
    case RejectReason::None: return "none";
    case RejectReason::Validation: return "validation";
    case RejectReason::Backpressure: return "backpressure";
    case RejectReason::Halted: return "halted";
  }
  return "unknown";
}

}  // namespace tstream
