#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "tstream/transaction.hpp"

namespace tstream {

using Features = std::vector<std::pair<std::string, double>>;

enum class EventKind : std::uint8_t { Observation = 0, Query = 1, Raw = 2 };

struct StreamEvent {
  std::string source_id;
  std::uint64_t event_ts = 0;
  EventKind kind = EventKind::Observation;
  Features features;            // Observation / Query
  std::optional<double> label;  // Observation only
  std::string payload;          // Raw only

  friend bool operator==(const StreamEvent&, const StreamEvent&) = default;
};

// True when all feature values and the label are finite.
bool event_is_finite(const StreamEvent& event) noexcept;

// -- pipeline specification -------------------------------------------------

enum class CmpOp : std::uint8_t { Lt, Le, Gt, Ge, Eq, Ne };

struct Predicate {
  enum class Subject : std::uint8_t { Feature, Label, Source, Kind, HasFeature };
  Subject subject = Subject::Feature;
  std::string name;   // feature name (Feature, HasFeature)
  CmpOp op = CmpOp::Eq;
  double value = 0;   // numeric subjects
  std::string text;   // Source / Kind ("obs", "query", "raw")
};

// Passes an event iff every predicate holds. A missing feature fails.
struct FilterStage {
  std::vector<Predicate> all_of;
};

struct TransformAction {
  enum class Type : std::uint8_t { Rename, Scale, Drop, ParseRaw };
  Type type = Type::Rename;
  std::string feature;
  std::string to;    // Rename target
  double mul = 1.0;  // Scale: v * mul + add
  double add = 0.0;
};

struct TransformStage {
  std::vector<TransformAction> actions;
};

enum class Reducer : std::uint8_t { Sum, Mean, Count, Last };
enum class WindowUnit : std::uint8_t { Events, Time };

// Tumbling window over Observations; Queries pass through unchanged.
struct AggregateStage {
  std::uint64_t window = 1;
  WindowUnit unit = WindowUnit::Events;
  Reducer reducer = Reducer::Sum;
};

using Stage = std::variant<FilterStage, TransformStage, AggregateStage>;

struct PipelineSpec {
  std::vector<Stage> stages;

  // At most one Aggregate stage; window >= 1.
  void validate() const;
};

// JSON form: {"stages": [{"type": "filter", "all_of": [...]},
//   {"type": "transform", "actions": [...]},
//   {"type": "aggregate", "window": 5, "unit": "events", "reducer": "sum"}]}
PipelineSpec parse_pipeline_json(std::string_view text);
PipelineSpec load_pipeline_file(const std::string& path);

// -- work items -------------------------------------------------------------

struct TrainExample {
  std::string source_id;
  Features features;
  std::optional<double> label;
  std::uint64_t origin_ts = 0;
  std::uint64_t represented_events = 1;  // > 1 for window outputs

  friend bool operator==(const TrainExample&, const TrainExample&) = default;
};

struct InferenceRequest {
  Features features;
  std::string reply_channel;  // the requesting source
  std::uint64_t origin_ts = 0;

  friend bool operator==(const InferenceRequest&, const InferenceRequest&) = default;
};

using WorkItem = std::variant<TrainExample, InferenceRequest>;

// -- windows ----------------------------------------------------------------

// Tumbling window state for one source. push() returns the window output
// when the pushed event closes a window.
class TumblingWindow {
 public:
  explicit TumblingWindow(AggregateStage stage) : stage_(stage) {}

  std::optional<StreamEvent> push(const StreamEvent& event);
  std::size_t pending() const noexcept { return events_.size(); }
  // Events represented by the last output returned from push().
  std::size_t last_output_size() const noexcept { return last_output_size_; }

 private:
  StreamEvent reduce() const;

  AggregateStage stage_;
  std::vector<StreamEvent> events_;
  std::uint64_t window_index_ = 0;
  std::size_t last_output_size_ = 0;
};

// -- pipeline execution -----------------------------------------------------

enum class DropReason : std::uint8_t { Filtered = 0, Malformed = 1, Backpressure = 2 };
const char* to_string(DropReason reason) noexcept;

struct IngestCounters {
  std::uint64_t ingested = 0;
  std::uint64_t emitted_events = 0;  // inputs represented by emitted work items
  std::uint64_t work_items = 0;
  std::uint64_t dropped_filtered = 0;
  std::uint64_t dropped_malformed = 0;
  std::uint64_t dropped_backpressure = 0;
  std::uint64_t in_flight = 0;  // queued or sitting in an open window

  std::uint64_t dropped() const noexcept {
    return dropped_filtered + dropped_malformed + dropped_backpressure;
  }
  // ingested = emitted_events + dropped + in_flight
  bool reconciles() const noexcept { return ingested == emitted_events + dropped() + in_flight; }
};

// Deterministic single-threaded pipeline with per-source stage state.
class Pipeline {
 public:
  explicit Pipeline(PipelineSpec spec);

  enum class Verdict : std::uint8_t { Emitted, Pending, Filtered, Malformed };

  // Runs one event through all stages, appending any work item to `out`.
  Verdict process(const StreamEvent& event, std::vector<WorkItem>& out);

  // Counts only what passed through process(); in_flight = open windows.
  IngestCounters counters() const;

 private:
  struct SourceState {
    std::optional<std::uint64_t> last_ts;
    std::optional<TumblingWindow> window;
  };

  PipelineSpec spec_;
  std::map<std::string, SourceState, std::less<>> sources_;
  IngestCounters counters_;
};

enum class IngestResult : std::uint8_t { Accepted, DroppedMalformed, DroppedBackpressure };

struct IngestConfig {
  std::size_t queue_capacity = 4096;
  std::chrono::milliseconds enqueue_timeout{100};
};

using WorkSink = std::function<void(WorkItem)>;

// Bounded-queue front of the pipeline. ingest() may be called from many
// threads; one dispatcher thread runs the pipeline (so each source is
// processed in arrival order) and hands work items to the sink.
class StreamIngest {
 public:
  StreamIngest(PipelineSpec spec, IngestConfig config, WorkSink sink);
  ~StreamIngest();
  StreamIngest(const StreamIngest&) = delete;
  StreamIngest& operator=(const StreamIngest&) = delete;

  IngestResult ingest(StreamEvent event);
  // Waits until every accepted event has left the queue and the sink.
  void drain();
  void stop();
  IngestCounters counters() const;

 private:
  void dispatch_loop(std::stop_token stop);

  Pipeline pipeline_;
  IngestConfig config_;
  WorkSink sink_;

  mutable std::mutex mu_;
  std::condition_variable_any not_empty_;
  std::condition_variable not_full_;
  std::condition_variable idle_;
  std::deque<StreamEvent> queue_;
  bool busy_ = false;
  IngestCounters front_;  // ingest-side counters (ingested, malformed, backpressure)
  std::jthread dispatcher_;
};

// -- inference routing ------------------------------------------------------

// Read-only transaction over the weight keys of the request's features and
// the bias key.
Transaction to_inference_txn(const InferenceRequest& request);

struct InferenceReply {
  std::uint64_t txn_id = 0;
  std::uint64_t epoch = 0;
  double prediction = 0;
};

// Channel registry for inference replies.
class ReplyRouter {
 public:
  using Callback = std::function<void(const InferenceReply&)>;

  void open(const std::string& channel, Callback callback);
  void close(const std::string& channel);
  // False (abandoned) if the channel is not open.
  bool deliver(const std::string& channel, const InferenceReply& reply);
  std::uint64_t abandoned() const;

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, Callback> channels_;
  std::uint64_t abandoned_ = 0;
};

}  // namespace tstream
