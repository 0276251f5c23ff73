#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tstream/state_store.hpp"
#include "tstream/stream.hpp"
#include "tstream/txn_manager.hpp"

namespace tstream {

enum class ModelKind : std::uint8_t { LinearRegression, LogisticRegression };

struct ModelSpec {
  ModelKind kind = ModelKind::LogisticRegression;
  double learning_rate = 0.1;
  double l2 = 0.0;

  void validate() const;
};

// Key mapping: weight of feature f at Params "w:"+f, bias at Params "b",
// all dim 1; training history at Meta "training_history".
ShardKey weight_key(std::string_view feature);
ShardKey bias_key();
ShardKey training_history_key();

// Little-endian record (examples_seen u64, cumulative_loss f64).
struct TrainingMeta {
  std::uint64_t examples_seen = 0;
  double cumulative_loss = 0.0;

  std::string encode() const;
  static TrainingMeta decode(std::string_view bytes);

  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

double sigmoid(double z) noexcept;

// Point loss at linear score z: 0.5 (z - y)^2, or log loss of sigmoid(z).
double point_loss(ModelKind kind, double z, double y) noexcept;

// Dense parameters gathered from a snapshot; absent weights are 0.
struct ModelParams {
  std::map<std::string, double> weights;
  double bias = 0.0;

  double score(const Features& x) const noexcept;  // b + sum w_f x_f
};

// Merges duplicate feature names by summing their values.
Features canonical_features(const Features& features);

ModelParams read_params(const VersionedStore& store, const SnapshotHandle& snapshot,
                        const Features& features);

// LinearRegression: z; LogisticRegression: sigmoid(z).
double predict(const VersionedStore& store, const SnapshotHandle& snapshot,
               const Features& features, ModelKind kind);
// Same, from the read results of an inference transaction.
double predict_from_reads(const std::vector<ReadResult>& reads, const Features& features,
                          ModelKind kind);

struct Gradient {
  std::map<std::string, double> weights;
  double bias = 0.0;
  double loss = 0.0;
  double score = 0.0;  // z (linear) or p (logistic)
};

// Analytic gradient of point loss + (l2/2) * sum w_f^2 over the example's
// features; the bias is not regularized.
Gradient compute_gradient(const ModelParams& params, const Features& features, double label,
                          const ModelSpec& spec);

struct UpdateIntent {
  std::vector<std::pair<ShardKey, std::vector<double>>> deltas;
  std::uint64_t origin_example = 0;
  std::uint64_t snapshot_epoch = 0;
  double loss = 0.0;
};

// One SGD step: delta = -lr * gradient. nullopt when the example has no
// label or an intermediate is non-finite.
std::optional<UpdateIntent> compute_update(const VersionedStore& store,
                                           const SnapshotHandle& snapshot,
                                           const TrainExample& example, const ModelSpec& spec,
                                           std::uint64_t example_id = 0);

// One Update transaction: Apply per delta plus the training-history Write.
Transaction to_update_txn(const UpdateIntent& intent, const TrainingMeta& meta,
                          const ShardKey& meta_key);

struct LearnerStats {
  std::uint64_t submitted = 0;
  std::uint64_t committed = 0;
  std::uint64_t rejected = 0;
  std::uint64_t skipped = 0;  // no label / non-finite
  std::uint64_t dropped = 0;  // backpressure after retries
  std::map<std::uint64_t, std::uint64_t> staleness;  // (commit epoch - snapshot epoch) -> count
};

// Asynchronous SGD worker: each example reads a fresh snapshot, computes
// deltas and submits them as one Update transaction.
class OnlineLearner {
 public:
  OnlineLearner(TxnManager& manager, ModelSpec spec, std::size_t max_retries = 3,
                std::uint32_t learner_id = 0);

  // True when a transaction was admitted.
  bool train(const TrainExample& example);

  LearnerStats stats() const;
  const ModelSpec& spec() const noexcept { return spec_; }
  const ShardKey& meta_key() const noexcept { return meta_key_; }

 private:
  TxnManager& manager_;
  ModelSpec spec_;
  std::size_t max_retries_;
  ShardKey meta_key_;

  void on_outcome(const TxnOutcome& outcome, std::uint64_t snapshot_epoch, double loss);

  mutable std::mutex mu_;
  std::uint64_t examples_ = 0;
  // Totals over submitted, not-rejected updates; written with each update.
  TrainingMeta local_;
  LearnerStats stats_;
};

// Admits an inference request and delivers the prediction on its channel.
class InferenceGateway {
 public:
  InferenceGateway(TxnManager& manager, ModelKind kind, ReplyRouter& router)
      : manager_(manager), kind_(kind), router_(router) {}

  // Returns the reply (also when the channel was closed and it was
  // counted abandoned); nullopt if the transaction was rejected.
  std::optional<InferenceReply> serve(const InferenceRequest& request);

 private:
  TxnManager& manager_;
  ModelKind kind_;
  ReplyRouter& router_;
};

}  // namespace tstream
