#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>

#include "tstream/error.hpp"
#include "tstream/trace.hpp"

using namespace tstream;

TEST(Trace, LineFormat) {
  StreamEvent e;
  e.source_id = "s1";
  e.event_ts = 42;
  e.kind = EventKind::Observation;
  e.features = {{"x", 0.1}, {"y", -2.0}};
  e.label = 1.0;
  EXPECT_EQ(format_trace_line(e), "s1\t42\tobs\tx=0.1,y=-2\t1");
  EXPECT_EQ(parse_trace_line("s1\t42\tobs\tx=0.1,y=-2\t1"), e);

  StreamEvent q;
  q.source_id = "c";
  q.event_ts = 7;
  q.kind = EventKind::Query;
  q.features = {{"k", 1.0}};
  EXPECT_EQ(format_trace_line(q), "c\t7\tquery\tk=1\t");
}

TEST(Trace, DoublesRoundTripExactly) {
  for (double v : {0.1, -0.0, 1e308, -1e-308, std::numeric_limits<double>::denorm_min(),
                   std::numeric_limits<double>::max(), 1.0 / 3.0}) {
    const double back = parse_double(format_double(v));
    EXPECT_EQ(std::memcmp(&back, &v, sizeof v), 0) << format_double(v);
  }
}

TEST(Trace, RawPayloadIsHexEncoded) {
  StreamEvent r;
  r.source_id = "dev";
  r.event_ts = 1;
  r.kind = EventKind::Raw;
  r.payload = std::string("a=1,\t\n\0\xff", 8);
  const auto line = format_trace_line(r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(parse_trace_line(line), r);
}

TEST(Trace, MalformedLinesAreErrors) {
  for (const char* bad : {"", "s\t1\tobs", "s\tx\tobs\t\t", "s\t1\twhat\t\t", "s\t1\tobs\tx\t",
                          "s\t1\tobs\tx=1\tnotnum", "s\t1\traw\tzz\t"}) {
    EXPECT_THROW(parse_trace_line(bad), Error) << bad;
  }
}

TEST(Trace, StreamRoundTrip) {
  std::mt19937_64 rng(11);
  std::vector<StreamEvent> evs;
  for (int i = 0; i < 300; ++i) {
    StreamEvent e;
    e.source_id = "s" + std::to_string(rng() % 5);
    e.event_ts = rng();
    e.kind = static_cast<EventKind>(rng() % 3);
    if (e.kind == EventKind::Raw) {
      for (int j = 0; j < 6; ++j) e.payload.push_back(static_cast<char>(rng()));
    } else {
      for (int j = 0; j < static_cast<int>(rng() % 4); ++j) {
        double v;
        const std::uint64_t bits = rng();
        std::memcpy(&v, &bits, sizeof v);
        if (!std::isfinite(v)) v = 0.5;
        e.features.emplace_back("f" + std::to_string(j), v);
      }
      if (e.kind == EventKind::Observation && rng() % 2) e.label = static_cast<double>(rng() % 2);
    }
    evs.push_back(std::move(e));
  }
  std::stringstream ss;
  write_trace(ss, evs);
  const std::string text = ss.str();
  std::stringstream in(text);
  const auto back = read_trace(in);
  EXPECT_EQ(back, evs);
  std::stringstream again;
  write_trace(again, back);
  EXPECT_EQ(again.str(), text);
}
