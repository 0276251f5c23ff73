#include "tstream/learner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include "tstream/codec.hpp"
#include "tstream/error.hpp"

namespace tstream {

void ModelSpec::validate() const {
  if (!(std::isfinite(learning_rate) && learning_rate > 0)) {
    throw Error(ErrorCode::InvalidArgument, "learning rate must be finite and > 0");
  }
  if (!(std::isfinite(l2) && l2 >= 0)) {
    throw Error(ErrorCode::InvalidArgument, "l2 must be finite and >= 0");
  }
}

ShardKey weight_key(std::string_view feature) { return ShardKey::params("w:" + std::string(feature)); }
ShardKey bias_key() { return ShardKey::params("b"); }
ShardKey training_history_key() { return ShardKey::meta("training_history"); }

std::string TrainingMeta::encode() const {
  ByteWriter w;
  w.u64(examples_seen);
  w.f64(cumulative_loss);
  const auto& b = w.buffer();
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

TrainingMeta TrainingMeta::decode(std::string_view bytes) {
  if (bytes.size() != 16) throw Error(ErrorCode::Corruption, "training meta must be 16 bytes");
  ByteReader r(std::as_bytes(std::span(bytes.data(), bytes.size())));
  TrainingMeta m;
  m.examples_seen = r.u64();
  m.cumulative_loss = r.f64();
  return m;
}

double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double point_loss(ModelKind kind, double z, double y) noexcept {
  if (kind == ModelKind::LinearRegression) return 0.5 * (z - y) * (z - y);
  // -[y ln s(z) + (1-y) ln(1-s(z))] = softplus(z) - y z
  const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  return softplus - y * z;
}

double ModelParams::score(const Features& x) const noexcept {
  double z = bias;
  for (const auto& [name, v] : x) {
    auto it = weights.find(name);
    if (it != weights.end()) z += it->second * v;
  }
  return z;
}

Features canonical_features(const Features& features) {
  Features out;
  for (const auto& [name, v] : features) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& f) { return f.first == name; });
    if (it == out.end()) out.emplace_back(name, v);
    else it->second += v;
  }
  return out;
}

namespace {

double scalar_of(const std::optional<ShardValue>& v) {
  if (!v || !v->is_vector() || v->dim() == 0) return 0.0;
  return v->as_vector()[0];
}

}  // namespace

ModelParams read_params(const VersionedStore& store, const SnapshotHandle& snapshot,
                        const Features& features) {
  ModelParams params;
  for (const auto& [name, _] : features) {
    if (!params.weights.contains(name)) {
      params.weights[name] = scalar_of(store.get_at(weight_key(name), snapshot));
    }
  }
  params.bias = scalar_of(store.get_at(bias_key(), snapshot));
  return params;
}

double predict(const VersionedStore& store, const SnapshotHandle& snapshot,
               const Features& features, ModelKind kind) {
  const auto x = canonical_features(features);
  const double z = read_params(store, snapshot, x).score(x);
  return kind == ModelKind::LogisticRegression ? sigmoid(z) : z;
}

double predict_from_reads(const std::vector<ReadResult>& reads, const Features& features,
                          ModelKind kind) {
  ModelParams params;
  const auto bias = bias_key();
  for (const auto& r : reads) {
    if (r.key == bias) {
      params.bias = scalar_of(r.value);
    } else if (r.key.ns() == Namespace::Params && r.key.name().rfind("w:", 0) == 0) {
      params.weights[r.key.name().substr(2)] = scalar_of(r.value);
    }
  }
  const double z = params.score(canonical_features(features));
  return kind == ModelKind::LogisticRegression ? sigmoid(z) : z;
}

Gradient compute_gradient(const ModelParams& params, const Features& features, double label,
                          const ModelSpec& spec) {
  const auto x = canonical_features(features);
  Gradient g;
  const double z = params.score(x);
  const double p = spec.kind == ModelKind::LogisticRegression ? sigmoid(z) : z;
  const double residual = p - label;
  g.score = p;
  g.loss = point_loss(spec.kind, z, label);
  for (const auto& [name, v] : x) {
    auto it = params.weights.find(name);
    const double w = it == params.weights.end() ? 0.0 : it->second;
    g.weights[name] = residual * v + spec.l2 * w;
  }
  g.bias = residual;
  return g;
}

std::optional<UpdateIntent> compute_update(const VersionedStore& store,
                                           const SnapshotHandle& snapshot,
                                           const TrainExample& example, const ModelSpec& spec,
                                           std::uint64_t example_id) {
  if (!example.label) return std::nullopt;
  const auto x = canonical_features(example.features);
  const auto params = read_params(store, snapshot, x);
  const auto g = compute_gradient(params, x, *example.label, spec);
  if (!std::isfinite(g.loss) || !std::isfinite(g.bias)) return std::nullopt;

  UpdateIntent intent;
  intent.origin_example = example_id;
  intent.snapshot_epoch = snapshot.epoch_id;
  intent.loss = g.loss;
  for (const auto& [name, _] : x) {
    const double d = -spec.learning_rate * g.weights.at(name);
    if (!std::isfinite(d)) return std::nullopt;
    intent.deltas.emplace_back(weight_key(name), std::vector<double>{d});
  }
  const double db = -spec.learning_rate * g.bias;
  if (!std::isfinite(db)) return std::nullopt;
  intent.deltas.emplace_back(bias_key(), std::vector<double>{db});
  return intent;
}

Transaction to_update_txn(const UpdateIntent& intent, const TrainingMeta& meta,
                          const ShardKey& meta_key) {
  Transaction txn;
  txn.kind = TxnKind::Update;
  txn.ops.reserve(intent.deltas.size() + 1);
  for (const auto& [key, delta] : intent.deltas) txn.ops.push_back(StateOp::apply(key, delta));
  txn.ops.push_back(StateOp::write(meta_key, ShardValue::bytes(meta.encode())));
  return txn;
}

OnlineLearner::OnlineLearner(TxnManager& manager, ModelSpec spec, std::size_t max_retries,
                             std::uint32_t learner_id)
    : manager_(manager),
      spec_(spec),
      max_retries_(max_retries),
      meta_key_(learner_id == 0 ? training_history_key()
                                : ShardKey::meta("training_history/" + std::to_string(learner_id))) {
  spec_.validate();
}

bool OnlineLearner::train(const TrainExample& example) {
  auto& store = manager_.store();
  std::optional<UpdateIntent> intent;
  {
    ScopedSnapshot snap(store);
    std::uint64_t id = 0;
    {
      std::lock_guard lock(mu_);
      id = ++examples_;
    }
    intent = compute_update(store, snap.handle(), example, spec_, id);
  }
  if (!intent) {
    std::lock_guard lock(mu_);
    ++stats_.skipped;
    return false;
  }

  const std::uint64_t epoch = intent->snapshot_epoch;
  const double loss = intent->loss;
  for (std::size_t attempt = 0;; ++attempt) {
    Transaction txn;
    {
      std::lock_guard lock(mu_);
      TrainingMeta next{local_.examples_seen + 1, local_.cumulative_loss + loss};
      txn = to_update_txn(*intent, next, meta_key_);
      local_ = next;
      ++stats_.submitted;
    }
    auto ticket = manager_.admit(std::move(txn), [this, epoch, loss](const TxnOutcome& out) {
      on_outcome(out, epoch, loss);
    });
    if (ticket.accepted) return true;
    if (ticket.reason != RejectReason::Backpressure || attempt >= max_retries_) {
      if (ticket.reason == RejectReason::Backpressure) {
        std::lock_guard lock(mu_);
        ++stats_.dropped;
      }
      return false;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

void OnlineLearner::on_outcome(const TxnOutcome& outcome, std::uint64_t snapshot_epoch,
                               double loss) {
  std::lock_guard lock(mu_);
  if (outcome.committed()) {
    ++stats_.committed;
    ++stats_.staleness[outcome.epoch - snapshot_epoch];
    return;
  }
  if (outcome.reason != RejectReason::Backpressure) ++stats_.rejected;
  // Later writes must not count the rejected example.
  if (local_.examples_seen > 0) --local_.examples_seen;
  local_.cumulative_loss -= loss;
}

LearnerStats OnlineLearner::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

std::optional<InferenceReply> InferenceGateway::serve(const InferenceRequest& request) {
  auto ticket = manager_.admit(to_inference_txn(request));
  if (!ticket.outcome || !ticket.outcome->committed()) return std::nullopt;
  InferenceReply reply;
  reply.txn_id = ticket.outcome->txn_id;
  reply.epoch = ticket.outcome->epoch;
  reply.prediction = predict_from_reads(ticket.outcome->reads, request.features, kind_);
  router_.deliver(request.reply_channel, reply);
  return reply;
}

}  // namespace tstream
