#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "../support/test_support.hpp"
#include "uavrelay/errors.hpp"
#include "uavrelay/traffic.hpp"

using namespace uavrelay;
using testsupport::path_graph;

namespace {

TrafficSeries parse(const std::string& text, const RoadTopologyGraph& g) {
  std::istringstream in(text);
  return parse_trajectories(in, g, "t.csv");
}

std::string error_of(const std::string& text, const RoadTopologyGraph& g) {
  try {
    parse(text, g);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

RoadTopologyGraph line_graph(int edges) { return path_graph(edges + 1, 100.0); }

}  // namespace

TEST_CASE("distinct vehicles on one edge are counted") {
  const auto g = line_graph(8);
  const auto s = parse(
      "slot,vehicle_id,edge_id\n1,a,5\n1,b,5\n1,c,5\n", g);
  REQUIRE(s.slots() == 1);
  CHECK(s.slot(1)[5] == 3);
  CHECK(s.total(1) == 3);
}

TEST_CASE("repeated identical record counts once") {
  const auto g = line_graph(3);
  const auto s = parse("slot,vehicle_id,edge_id\n1,a,2\n1,a,2\n", g);
  CHECK(s.slot(1)[2] == 1);
}

TEST_CASE("missing slots are zero-filled") {
  const auto g = line_graph(3);
  const auto s = parse("slot,vehicle_id,edge_id\n1,a,0\n3,b,2\n", g);
  REQUIRE(s.slots() == 3);
  CHECK(s.total(2) == 0);
  for (int c : s.slot(2)) CHECK(c == 0);
  CHECK(s.slot(3)[2] == 1);
}

TEST_CASE("trajectory errors name the line") {
  const auto g = line_graph(3);
  CHECK(error_of("slot,vehicle_id,edge_id\n", g).find("no trajectory") !=
        std::string::npos);
  CHECK(error_of("", g).find("t.csv:1") != std::string::npos);
  CHECK(error_of("slot,vehicle,edge\n1,a,0\n", g).find("t.csv:1") !=
        std::string::npos);
  CHECK(error_of("slot,vehicle_id,edge_id\n1,a,0\n1,b,7\n", g)
            .find("t.csv:3: unknown edge id 7") != std::string::npos);
  const auto dup = error_of("slot,vehicle_id,edge_id\n1,a,0\n2,a,1\n1,a,2\n", g);
  CHECK(dup.find("t.csv:4") != std::string::npos);
  CHECK(dup.find("line 2") != std::string::npos);
  CHECK(error_of("slot,vehicle_id,edge_id\n0,a,0\n", g).find("t.csv:2") !=
        std::string::npos);
  CHECK(error_of("slot,vehicle_id,edge_id\nx,a,0\n", g).find("t.csv:2") !=
        std::string::npos);
  CHECK(error_of("slot,vehicle_id,edge_id\n1,a\n", g).find("t.csv:2") !=
        std::string::npos);
}

TEST_CASE("zero base rate gives all zeros") {
  const auto g = line_graph(10);
  TrafficProfile p;
  p.seed = 3;
  p.slots = 20;
  p.base_rate = 0.0;
  const auto s = generate_traffic(p, g);
  REQUIRE(s.slots() == 20);
  for (int t = 1; t <= 20; ++t) CHECK(s.total(t) == 0);
}

TEST_CASE("generation is deterministic in the seed") {
  const auto g = line_graph(10);
  TrafficProfile p;
  p.seed = 11;
  p.slots = 30;
  p.base_rate = 1.5;
  CHECK(generate_traffic(p, g) == generate_traffic(p, g));
  auto q = p;
  q.seed = 12;
  CHECK_FALSE(generate_traffic(p, g) == generate_traffic(q, g));
}

TEST_CASE("empirical mean tracks the base rate") {
  const auto g = line_graph(100);
  TrafficProfile p;
  p.seed = 7;
  p.slots = 100;
  p.base_rate = 2.0;
  const auto s = generate_traffic(p, g);
  long sum = 0;
  for (int t = 1; t <= s.slots(); ++t) {
    long slot_sum = 0;
    for (int c : s.slot(t)) {
      CHECK(c >= 0);
      slot_sum += c;
    }
    CHECK(slot_sum == s.total(t));
    sum += slot_sum;
  }
  const double mean = static_cast<double>(sum) / (100.0 * 100.0);
  CHECK(std::abs(mean - 2.0) < 0.05 * 2.0);
}

TEST_CASE("hotspots and time curve scale the rate") {
  const auto g = line_graph(4);
  TrafficProfile p;
  p.seed = 1;
  p.slots = 10;
  p.base_rate = 0.5;
  p.hotspots = {{2, 3.0}};
  p.time_curve = {{1, 4, 1.0}, {5, 10, 2.0}};
  CHECK(expected_rate(p, 0, 1) == doctest::Approx(0.5));
  CHECK(expected_rate(p, 2, 1) == doctest::Approx(1.5));
  CHECK(expected_rate(p, 2, 7) == doctest::Approx(3.0));
  CHECK(expected_rate(p, 1, 10) == doctest::Approx(1.0));
  CHECK_NOTHROW(validate_profile(p, g));

  // Heavier segment is visibly busier over many draws.
  const auto big = line_graph(200);
  TrafficProfile q;
  q.seed = 5;
  q.slots = 40;
  q.base_rate = 1.0;
  q.time_curve = {{1, 20, 1.0}, {21, 40, 3.0}};
  const auto s = generate_traffic(q, big);
  long early = 0;
  long late = 0;
  for (int t = 1; t <= 20; ++t) early += s.total(t);
  for (int t = 21; t <= 40; ++t) late += s.total(t);
  CHECK(static_cast<double>(late) / early == doctest::Approx(3.0).epsilon(0.1));
}

TEST_CASE("profile validation") {
  const auto g = line_graph(4);
  TrafficProfile p;
  p.slots = 10;
  p.base_rate = 1.0;
  auto bad = p;
  bad.base_rate = -1.0;
  CHECK_THROWS_AS(validate_profile(bad, g), ConfigError);
  bad = p;
  bad.slots = 0;
  CHECK_THROWS_AS(validate_profile(bad, g), ConfigError);
  bad = p;
  bad.hotspots = {{9, 2.0}};
  CHECK_THROWS_AS(validate_profile(bad, g), ConfigError);
  bad = p;
  bad.hotspots = {{1, -2.0}};
  CHECK_THROWS_AS(validate_profile(bad, g), ConfigError);
  bad = p;
  bad.time_curve = {{1, 5, 1.0}, {5, 10, 1.0}};
  CHECK_THROWS_AS(validate_profile(bad, g), ConfigError);
  bad = p;
  bad.time_curve = {{1, 5, 1.0}, {7, 10, 1.0}};
  CHECK_THROWS_AS(validate_profile(bad, g), ConfigError);
  bad = p;
  bad.time_curve = {{1, 8, 1.0}};
  CHECK_THROWS_AS(validate_profile(bad, g), ConfigError);
  bad = p;
  bad.time_curve = {{1, 10, -1.0}};
  CHECK_THROWS_AS(validate_profile(bad, g), ConfigError);
}

TEST_CASE("trajectory csv round trip") {
  const auto g = line_graph(6);
  TrafficProfile p;
  p.seed = 21;
  p.slots = 15;
  p.base_rate = 1.2;
  const auto s = generate_traffic(p, g);
  REQUIRE(s.total(s.slots()) > 0);
  std::ostringstream out;
  write_trajectories(out, s);
  CHECK(parse(out.str(), g) == s);

  const auto dir = testsupport::temp_dir("traffic_rt");
  std::ofstream(dir / "t.csv") << out.str();
  CHECK(load_trajectories(dir / "t.csv", g) == s);
  CHECK_THROWS_AS(load_trajectories(dir / "missing.csv", g), ConfigError);
}

TEST_CASE("series construction and percentile") {
  CHECK_THROWS_AS(TrafficSeries(2, {{1, 2, 3}}), StructuralError);
  CHECK_THROWS_AS(TrafficSeries(2, {{1, -1}}), StructuralError);
  std::vector<std::vector<int>> rows(100, std::vector<int>(1, 0));
  for (int i = 0; i < 100; ++i) rows[i][0] = i + 1;
  const TrafficSeries s(1, rows);
  CHECK(s.percentile99() == 99);
  const TrafficSeries zeros(2, {{0, 0}});
  CHECK(zeros.percentile99() == 1);
  CHECK_THROWS(s.slot(0));
  CHECK_THROWS(s.slot(101));
}
