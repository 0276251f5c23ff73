#include "tstream/trace.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "tstream/error.hpp"

namespace tstream {
namespace {

[[noreturn]] void bad(const std::string& why) {
  throw Error(ErrorCode::InvalidArgument, "trace: " + why);
}

void check_name(std::string_view name) {
  if (name.empty()) bad("empty feature name");
  if (name.find_first_of("\t\n\r,=") != std::string_view::npos) {
    bad("feature name contains a separator: " + std::string(name));
  }
}

const char* kind_token(EventKind k) {
  switch (k) {
    case EventKind::Observation: return "obs";
    case EventKind::Query: return "query";
    case EventKind::Raw: return "raw";
  }
  return "?";
}

std::string hex_encode(std::string_view bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(kDigits[c >> 4]);
    out.push_back(kDigits[c & 0xF]);
  }
  return out;
}

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string hex_decode(std::string_view hex) {
  if (hex.size() % 2 != 0) bad("odd-length raw payload");
  std::string out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    const int hi = hex_digit(hex[i]);
    const int lo = hex_digit(hex[i + 1]);
    if (hi < 0 || lo < 0) bad("bad hex digit in raw payload");
    out.push_back(static_cast<char>((hi << 4) | lo));
  }
  return out;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) bad("cannot format double");
  return std::string(buf.data(), ptr);
}

double parse_double(std::string_view s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) bad("bad number '" + std::string(s) + "'");
  return v;
}

std::string format_trace_line(const StreamEvent& ev) {
  if (ev.source_id.empty() || ev.source_id.find_first_of("\t\n\r") != std::string::npos) {
    bad("source_id must be non-empty and free of tabs/newlines");
  }
  std::string line = ev.source_id;
  line += '\t';
  line += std::to_string(ev.event_ts);
  line += '\t';
  line += kind_token(ev.kind);
  line += '\t';
  if (ev.kind == EventKind::Raw) {
    line += hex_encode(ev.payload);
  } else {
    bool first = true;
    for (const auto& [name, v] : ev.features) {
      check_name(name);
      if (!first) line += ',';
      first = false;
      line += name;
      line += '=';
      line += format_double(v);
    }
  }
  line += '\t';
  if (ev.label) line += format_double(*ev.label);
  return line;
}

StreamEvent parse_trace_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto cols = split(line, '\t');
  if (cols.size() != 5) bad("expected 5 tab-separated fields");
  StreamEvent ev;
  if (cols[0].empty()) bad("empty source_id");
  ev.source_id = std::string(cols[0]);
  {
    auto [ptr, ec] = std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), ev.event_ts);
    if (ec != std::errc{} || ptr != cols[1].data() + cols[1].size()) bad("bad event_ts");
  }
  if (cols[2] == "obs") ev.kind = EventKind::Observation;
  else if (cols[2] == "query") ev.kind = EventKind::Query;
  else if (cols[2] == "raw") ev.kind = EventKind::Raw;
  else bad("unknown kind '" + std::string(cols[2]) + "'");

  if (ev.kind == EventKind::Raw) {
    ev.payload = hex_decode(cols[3]);
  } else if (!cols[3].empty()) {
    for (auto item : split(cols[3], ',')) {
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) bad("feature without '='");
      check_name(item.substr(0, eq));
      ev.features.emplace_back(std::string(item.substr(0, eq)), parse_double(item.substr(eq + 1)));
    }
  }
  if (!cols[4].empty()) ev.label = parse_double(cols[4]);
  return ev;
}

void write_trace(std::ostream& out, const std::vector<StreamEvent>& events) {
  for (const auto& ev : events) out << format_trace_line(ev) << '\n';
}

std::vector<StreamEvent> read_trace(std::istream& in) {
  std::vector<StreamEvent> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      events.push_back(parse_trace_line(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidArgument, std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
    }
  }
  return events;
}

void write_trace_file(const std::string& path, const std::vector<StreamEvent>& events) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write trace " + path);
  write_trace(out, events);
  if (!out) throw Error(ErrorCode::Io, "write failed for trace " + path);
}

std::vector<StreamEvent> read_trace_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open trace " + path);
  return read_trace(in);
}

}  // namespace tstream
