#include "tstream/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "tstream/learner.hpp"

namespace tstream {

bool SerialOracle::execute(const Transaction& txn) {
  if (txn.kind != TxnKind::Update || validate_transaction(txn)) return false;
  std::map<ShardKey, ShardValue> staged;
  for (const auto& op : txn.ops) {
    const ShardValue* prior = nullptr;
    if (auto s = staged.find(op.key); s != staged.end()) prior = &s->second;
    else if (auto c = state_.find(op.key); c != state_.end()) prior = &c->second;

    if (op.kind == OpKind::Write) {
      if (op.key.ns() == Namespace::Params && prior && prior->dim() != op.payload.dim()) return false;
      staged.insert_or_assign(op.key, op.payload);
      continue;
    }
    const auto& delta = op.payload.as_vector();
    std::vector<double> v;
    if (prior) {
      v = prior->as_vector();
    } else {
      v.assign(delta.size(), 0.0);
    }
    if (v.size() != delta.size()) return false;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = v[i] + delta[i];
      if (std::isnan(v[i]) || std::isinf(v[i])) return false;
    }
    staged.insert_or_assign(op.key, ShardValue(std::move(v)));
  }
  for (auto& [k, v] : staged) state_.insert_or_assign(k, std::move(v));
  return true;
}

Listing SerialOracle::dump() const { return Listing(state_.begin(), state_.end()); }

Transaction example_to_update(const TrainExample& example) {
  Transaction txn;
  txn.kind = TxnKind::Update;
  for (const auto& [name, v] : example.features) {
    if (name.rfind("set.", 0) == 0 && name.size() > 4) {
      txn.ops.push_back(StateOp::write(weight_key(name.substr(4)), ShardValue::vector({v})));
    } else {
      txn.ops.push_back(StateOp::apply(weight_key(name), {v}));
    }
  }
  return txn;
}

Listing oracle_from_trace(const std::vector<StreamEvent>& trace, const PipelineSpec& pipeline,
                          std::uint64_t through_txn_id) {
  Pipeline p(pipeline);
  SerialOracle oracle;
  std::vector<WorkItem> items;
  std::uint64_t next_id = 1;
  for (const auto& ev : trace) {
    items.clear();
    p.process(ev, items);
    for (const auto& item : items) {
      const std::uint64_t id = next_id++;
      if (id > through_txn_id) return oracle.dump();
      if (const auto* ex = std::get_if<TrainExample>(&item)) {
        auto txn = example_to_update(*ex);
        txn.txn_id = id;
        txn.ts = id;
        oracle.execute(txn);
      }
    }
  }
  return oracle.dump();
}

Listing oracle_replay(std::vector<Transaction> txns) {
  std::sort(txns.begin(), txns.end(), [](const Transaction& a, const Transaction& b) {
    return std::tie(a.ts, a.txn_id) < std::tie(b.ts, b.txn_id);
  });
  SerialOracle oracle;
  for (const auto& t : txns) oracle.execute(t);
  return oracle.dump();
}

}  // namespace tstream
