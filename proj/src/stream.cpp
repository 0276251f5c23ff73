#include "tstream/stream.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tstream/error.hpp"
#include "tstream/learner.hpp"

namespace tstream {

bool event_is_finite(const StreamEvent& event) noexcept {
  for (const auto& [_, v] : event.features) {
    if (!std::isfinite(v)) return false;
  }
  return !event.label || std::isfinite(*event.label);
}

void PipelineSpec::validate() const {
  int aggregates = 0;
  for (const auto& stage : stages) {
    if (const auto* agg = std::get_if<AggregateStage>(&stage)) {
      ++aggregates;
      if (agg->window < 1) throw Error(ErrorCode::InvalidArgument, "aggregate window must be >= 1");
    }
  }
  if (aggregates > 1) throw Error(ErrorCode::InvalidArgument, "at most one aggregate stage");
}

namespace {

using nlohmann::json;

CmpOp parse_cmp(const std::string& s) {
  if (s == "<") return CmpOp::Lt;
  if (s == "<=") return CmpOp::Le;
  if (s == ">") return CmpOp::Gt;
  if (s == ">=") return CmpOp::Ge;
  if (s == "==") return CmpOp::Eq;
  if (s == "!=") return CmpOp::Ne;
  throw Error(ErrorCode::InvalidArgument, "unknown comparison '" + s + "'");
}

Predicate parse_predicate(const json& j) {
  Predicate p;
  if (j.contains("feature")) {
    p.subject = Predicate::Subject::Feature;
    p.name = j.at("feature").get<std::string>();
  } else if (j.contains("has_feature")) {
    p.subject = Predicate::Subject::HasFeature;
    p.name = j.at("has_feature").get<std::string>();
    return p;
  } else if (j.contains("label")) {
    p.subject = Predicate::Subject::Label;
  } else if (j.contains("source")) {
    p.subject = Predicate::Subject::Source;
    p.text = j.at("source").get<std::string>();
  } else if (j.contains("kind")) {
    p.subject = Predicate::Subject::Kind;
    p.text = j.at("kind").get<std::string>();
  } else {
    throw Error(ErrorCode::InvalidArgument, "predicate needs feature/label/source/kind");
  }
  p.op = parse_cmp(j.value("op", std::string("==")));
  if (p.subject == Predicate::Subject::Feature || p.subject == Predicate::Subject::Label) {
    p.value = j.at("value").get<double>();
  }
  if ((p.subject == Predicate::Subject::Source || p.subject == Predicate::Subject::Kind) &&
      p.op != CmpOp::Eq && p.op != CmpOp::Ne) {
    throw Error(ErrorCode::InvalidArgument, "text predicates support == and != only");
  }
  return p;
}

TransformAction parse_action(const json& j) {
  TransformAction a;
  const auto op = j.at("op").get<std::string>();
  if (op == "rename") {
    a.type = TransformAction::Type::Rename;
    a.feature = j.at("feature").get<std::string>();
    a.to = j.at("to").get<std::string>();
  } else if (op == "scale") {
    a.type = TransformAction::Type::Scale;
    a.feature = j.at("feature").get<std::string>();
    a.mul = j.value("mul", 1.0);
    a.add = j.value("add", 0.0);
  } else if (op == "drop") {
    a.type = TransformAction::Type::Drop;
    a.feature = j.at("feature").get<std::string>();
  } else if (op == "parse_raw") {
    a.type = TransformAction::Type::ParseRaw;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown transform op '" + op + "'");
  }
  return a;
}

Reducer parse_reducer(const std::string& s) {
  if (s == "sum") return Reducer::Sum;
  if (s == "mean") return Reducer::Mean;
  if (s == "count") return Reducer::Count;
  if (s == "last") return Reducer::Last;
  throw Error(ErrorCode::InvalidArgument, "unknown reducer '" + s + "'");
}

bool compare(double lhs, CmpOp op, double rhs) {
  switch (op) {
    case CmpOp::Lt: return lhs < rhs;
    case CmpOp::Le: return lhs <= rhs;
    case CmpOp::Gt: return lhs > rhs;
    case CmpOp::Ge: return lhs >= rhs;
    case CmpOp::Eq: return lhs == rhs;
    case CmpOp::Ne: return lhs != rhs;
  }
  return false;
}

const char* kind_name(EventKind k) {
  switch (k) {
    case EventKind::Observation: return "obs";
    case EventKind::Query: return "query";
    case EventKind::Raw: return "raw";
  }
  return "?";
}

std::optional<double> feature(const StreamEvent& ev, std::string_view name) {
  for (const auto& [n, v] : ev.features) {
    if (n == name) return v;
  }
  return std::nullopt;
}

bool holds(const Predicate& p, const StreamEvent& ev) {
  switch (p.subject) {
    case Predicate::Subject::Feature: {
      auto v = feature(ev, p.name);
      return v && compare(*v, p.op, p.value);
    }
    case Predicate::Subject::HasFeature:
      return feature(ev, p.name).has_value();
    case Predicate::Subject::Label:
      return ev.label && compare(*ev.label, p.op, p.value);
    case Predicate::Subject::Source:
      return (ev.source_id == p.text) == (p.op == CmpOp::Eq);
    case Predicate::Subject::Kind:
      return (p.text == kind_name(ev.kind)) == (p.op == CmpOp::Eq);
  }
  return false;
}

// Raw payload "name=value,name=value[,label=value]" -> Observation.
bool parse_raw(StreamEvent& ev) {
  Features features;
  std::optional<double> label;
  std::string_view rest = ev.payload;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos || eq == 0) return false;
    double v = 0;
    const auto num = item.substr(eq + 1);
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
    if (ec != std::errc{} || ptr != num.data() + num.size()) return false;
    if (item.substr(0, eq) == "label") {
      label = v;
    } else {
      features.emplace_back(std::string(item.substr(0, eq)), v);
    }
  }
  ev.kind = EventKind::Observation;
  ev.features = std::move(features);
  ev.label = label;
  ev.payload.clear();
  return true;
}

// False if the event became malformed.
bool transform(const TransformStage& stage, StreamEvent& ev) {
  for (const auto& a : stage.actions) {
    switch (a.type) {
      case TransformAction::Type::ParseRaw:
        if (ev.kind == EventKind::Raw && !parse_raw(ev)) return false;
        break;
      case TransformAction::Type::Rename:
        for (auto& [n, _] : ev.features) {
          if (n == a.feature) n = a.to;
        }
        break;
      case TransformAction::Type::Scale:
        for (auto& [n, v] : ev.features) {
          if (n == a.feature) v = v * a.mul + a.add;
        }
        break;
      case TransformAction::Type::Drop:
        std::erase_if(ev.features, [&](const auto& f) { return f.first == a.feature; });
        break;
    }
  }
  return event_is_finite(ev);
}

}  // namespace

PipelineSpec parse_pipeline_json(std::string_view text) {
  PipelineSpec spec;
  try {
    const auto doc = json::parse(text);
    for (const auto& s : doc.at("stages")) {
      const auto type = s.at("type").get<std::string>();
      if (type == "filter") {
        FilterStage f;
        for (const auto& p : s.at("all_of")) f.all_of.push_back(parse_predicate(p));
        spec.stages.emplace_back(std::move(f));
      } else if (type == "transform") {
        TransformStage t;
        for (const auto& a : s.at("actions")) t.actions.push_back(parse_action(a));
        spec.stages.emplace_back(std::move(t));
      } else if (type == "aggregate") {
        AggregateStage agg;
        agg.window = s.at("window").get<std::uint64_t>();
        const auto unit = s.value("unit", std::string("events"));
        if (unit == "events") agg.unit = WindowUnit::Events;
        else if (unit == "time") agg.unit = WindowUnit::Time;
        else throw Error(ErrorCode::InvalidArgument, "unknown window unit '" + unit + "'");
        agg.reducer = parse_reducer(s.value("reducer", std::string("sum")));
        spec.stages.emplace_back(agg);
      } else {
        throw Error(ErrorCode::InvalidArgument, "unknown stage type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("pipeline config: ") + e.what());
  }
  spec.validate();
  return spec;
}

PipelineSpec load_pipeline_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open pipeline config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pipeline_json(ss.str());
}

std::optional<StreamEvent> TumblingWindow::push(const StreamEvent& event) {
  last_output_size_ = 0;
  std::optional<StreamEvent> out;
  if (stage_.unit == WindowUnit::Time) {
    const std::uint64_t index = event.event_ts / stage_.window;
    if (!events_.empty() && index != window_index_) {
      out = reduce();
      last_output_size_ = events_.size();
      events_.clear();
    }
    window_index_ = index;
    events_.push_back(event);
    return out;
  }
  events_.push_back(event);
  if (events_.size() >= stage_.window) {
    out = reduce();
    last_output_size_ = events_.size();
    events_.clear();
  }
  return out;
}

StreamEvent TumblingWindow::reduce() const {
  StreamEvent out;
  out.source_id = events_.back().source_id;
  out.event_ts = events_.back().event_ts;
  out.kind = EventKind::Observation;

  // Feature order follows first appearance in the window.
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, std::uint64_t>> acc;  // value, count
  for (const auto& ev : events_) {
    for (const auto& [name, v] : ev.features) {
      auto [it, inserted] = acc.try_emplace(name, 0.0, 0);
      if (inserted) order.push_back(name);
      auto& [value, count] = it->second;
      ++count;
      value = stage_.reducer == Reducer::Last ? v : value + v;
    }
  }
  for (const auto& name : order) {
    const auto& [value, count] = acc.at(name);
    double r = value;
    if (stage_.reducer == Reducer::Mean) r = value / static_cast<double>(count);
    if (stage_.reducer == Reducer::Count) r = static_cast<double>(count);
    out.features.emplace_back(name, r);
  }

  // Label: same reducer when every event carries one (Count keeps the last).
  bool all_labeled = true;
  double sum = 0;
  for (const auto& ev : events_) {
    if (!ev.label) {
      all_labeled = false;
      break;
    }
    sum += *ev.label;
  }
  if (all_labeled) {
    switch (stage_.reducer) {
      case Reducer::Sum: out.label = sum; break;
      case Reducer::Mean: out.label = sum / static_cast<double>(events_.size()); break;
      case Reducer::Count:
      case Reducer::Last: out.label = events_.back().label; break;
    }
  }
  return out;
}

const char* to_string(DropReason reason) noexcept {
  switch (reason) {
    case DropReason::Filtered: return "filtered";
    case DropReason::Malformed: return "malformed";
    case DropReason::Backpressure: return "backpressure";
  }
  return "unknown";
}

Pipeline::Pipeline(PipelineSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Pipeline::Verdict Pipeline::process(const StreamEvent& event, std::vector<WorkItem>& out) {
  ++counters_.ingested;
  if (!event_is_finite(event)) {
    ++counters_.dropped_malformed;
    return Verdict::Malformed;
  }
  auto& src = sources_[event.source_id];
  // Per-source event time must not go backwards.
  if (src.last_ts && event.event_ts < *src.last_ts) {
    ++counters_.dropped_filtered;
    return Verdict::Filtered;
  }
  src.last_ts = event.event_ts;

  StreamEvent ev = event;
  // Input events carried by `ev`; more than one after a window closes.
  std::uint64_t represented = 1;
  for (const auto& stage : spec_.stages) {
    if (const auto* f = std::get_if<FilterStage>(&stage)) {
      for (const auto& p : f->all_of) {
        if (!holds(p, ev)) {
          counters_.dropped_filtered += represented;
          return Verdict::Filtered;
        }
      }
    } else if (const auto* t = std::get_if<TransformStage>(&stage)) {
      if (!transform(*t, ev)) {
        counters_.dropped_malformed += represented;
        return Verdict::Malformed;
      }
    } else if (const auto* agg = std::get_if<AggregateStage>(&stage)) {
      if (ev.kind != EventKind::Observation) continue;
      if (!src.window) src.window.emplace(*agg);
      const auto before = src.window->pending();
      auto closed = src.window->push(ev);
      counters_.in_flight = counters_.in_flight + src.window->pending() - before;
      if (!closed) return Verdict::Pending;
      represented = src.window->last_output_size();
      ev = std::move(*closed);
    }
  }

  if (ev.kind == EventKind::Raw) {
    counters_.dropped_malformed += represented;
    return Verdict::Malformed;
  }
  if (ev.kind == EventKind::Query) {
    out.emplace_back(InferenceRequest{ev.features, ev.source_id, ev.event_ts});
  } else {
    out.emplace_back(TrainExample{ev.source_id, ev.features, ev.label, ev.event_ts, represented});
  }
  ++counters_.work_items;
  counters_.emitted_events += represented;
  return Verdict::Emitted;
}

IngestCounters Pipeline::counters() const { return counters_; }

StreamIngest::StreamIngest(PipelineSpec spec, IngestConfig config, WorkSink sink)
    : pipeline_(std::move(spec)), config_(config), sink_(std::move(sink)) {
  if (config_.queue_capacity == 0) throw Error(ErrorCode::InvalidArgument, "queue capacity must be >= 1");
  dispatcher_ = std::jthread([this](std::stop_token st) { dispatch_loop(st); });
}

StreamIngest::~StreamIngest() { stop(); }

IngestResult StreamIngest::ingest(StreamEvent event) {
  std::unique_lock lock(mu_);
  ++front_.ingested;
  if (!event_is_finite(event)) {
    ++front_.dropped_malformed;
    return IngestResult::DroppedMalformed;
  }
  if (!not_full_.wait_for(lock, config_.enqueue_timeout,
                          [&] { return queue_.size() < config_.queue_capacity; })) {
    ++front_.dropped_backpressure;
    return IngestResult::DroppedBackpressure;
  }
  queue_.push_back(std::move(event));
  not_empty_.notify_one();
  return IngestResult::Accepted;
}

void StreamIngest::dispatch_loop(std::stop_token stop) {
  std::vector<WorkItem> items;
  for (;;) {
    items.clear();
    {
      std::unique_lock lock(mu_);
      if (!not_empty_.wait(lock, stop, [&] { return !queue_.empty(); })) return;
      // Pop and process under one lock hold so counters() never sees an
      // event in neither place.
      StreamEvent ev = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
      pipeline_.process(ev, items);
      not_full_.notify_one();
    }
    for (auto& item : items) {
      if (sink_) sink_(std::move(item));
    }
    std::lock_guard lock(mu_);
    busy_ = false;
    if (queue_.empty()) idle_.notify_all();
  }
}

void StreamIngest::drain() {
  std::unique_lock lock(mu_);
  idle_.wait(lock, [&] { return queue_.empty() && !busy_; });
}

void StreamIngest::stop() {
  if (!dispatcher_.joinable()) return;
  drain();
  dispatcher_.request_stop();
  dispatcher_.join();
}

IngestCounters StreamIngest::counters() const {
  std::lock_guard lock(mu_);
  IngestCounters out = pipeline_.counters();
  out.ingested = front_.ingested;
  out.dropped_malformed += front_.dropped_malformed;
  out.dropped_backpressure = front_.dropped_backpressure;
  out.in_flight += queue_.size();
  return out;
}

Transaction to_inference_txn(const InferenceRequest& request) {
  Transaction txn;
  txn.kind = TxnKind::Inference;
  std::set<std::string> seen;
  for (const auto& [name, _] : request.features) {
    if (seen.insert(name).second) txn.ops.push_back(StateOp::read(weight_key(name)));
  }
  txn.ops.push_back(StateOp::read(bias_key()));
  return txn;
}

void ReplyRouter::open(const std::string& channel, Callback callback) {
  std::lock_guard lock(mu_);
  channels_[channel] = std::move(callback);
}

void ReplyRouter::close(const std::string& channel) {
  std::lock_guard lock(mu_);
  channels_.erase(channel);
}

bool ReplyRouter::deliver(const std::string& channel, const InferenceReply& reply) {
  Callback cb;
  {
    std::lock_guard lock(mu_);
    auto it = channels_.find(channel);
    if (it == channels_.end()) {
      ++abandoned_;
      return false;
    }
    cb = it->second;
  }
  cb(reply);
  return true;
}

std::uint64_t ReplyRouter::abandoned() const {
  std::lock_guard lock(mu_);
  return abandoned_;
}

}  // namespace tstream
