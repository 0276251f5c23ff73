#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "tstream/shard.hpp"
#include "tstream/stream.hpp"
#include "tstream/transaction.hpp"

namespace tstream {

// Single-threaded, epoch-free reference executor: applies whole
// transactions one at a time and skips any transaction with an op that
// cannot commit. Shares no execution code with the engine.
class SerialOracle {
 public:
  // False if the transaction was rejected (state unchanged).
  bool execute(const Transaction& txn);
  Listing dump() const;
  std::size_t size() const noexcept { return state_.size(); }

 private:
  std::map<ShardKey, ShardValue> state_;
};

// Direct-apply mapping of a training example: feature f=v becomes
// Apply(w:f, [v]); a feature named "set.f" becomes Write(w:f, [v]).
Transaction example_to_update(const TrainExample& example);

// Runs the trace through the pipeline, numbers work items 1, 2, ... the way
// a single submitter's admissions are numbered, and executes the update
// items with number <= `through_txn_id` in order.
Listing oracle_from_trace(const std::vector<StreamEvent>& trace, const PipelineSpec& pipeline,
                          std::uint64_t through_txn_id = UINT64_MAX);

// Replays already-numbered transactions in (ts, txn_id) order.
Listing oracle_replay(std::vector<Transaction> txns);

}  // namespace tstream
