#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "tstream/stream.hpp"

namespace tstream {

// Replayable trace: one event per line, tab-separated
//
//   source_id  event_ts  kind  features  label
//
// kind is obs|query|raw; features is a comma-separated name=value list (hex
// payload for raw); label is empty when absent. Doubles use the shortest
// decimal form that round-trips exactly.
std::string format_trace_line(const StreamEvent& event);
// Throws Error(InvalidArgument) on malformed lines.
StreamEvent parse_trace_line(std::string_view line);

void write_trace(std::ostream& out, const std::vector<StreamEvent>& events);
std::vector<StreamEvent> read_trace(std::istream& in);

void write_trace_file(const std::string& path, const std::vector<StreamEvent>& events);
std::vector<StreamEvent> read_trace_file(const std::string& path);

std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace tstream
