#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <thread>
#include <unordered_map>

#include "../support/test_support.hpp"
#include "uavrelay/errors.hpp"
#include "uavrelay/semantic.hpp"
#include "uavrelay/trainer.hpp"

using namespace uavrelay;
using doctest::Approx;
using testsupport::path_graph;

namespace {

std::shared_ptr<const Scenario> path_scenario(int n, std::vector<int> counts,
                                              VertexId start,
                                              std::vector<VertexId> rsu,
                                              EnergyParams en = {}) {
  RoadMap map{path_graph(n, 100.0, std::move(rsu)), start};
  TrafficSeries traffic(map.graph.edge_count(),
                        std::vector<std::vector<int>>(50, counts));
  return make_scenario(std::move(map), std::move(traffic), en, {});
}

std::shared_ptr<const Scenario> grid_scenario(std::uint64_t seed,
                                              int horizon = 20) {
  RoadMap map{make_grid_graph(4, 4, 200.0, {0}), 15};
  TrafficProfile p;
  p.seed = seed;
  p.slots = horizon;
  p.base_rate = 0.4;
  auto traffic = generate_traffic(p, map.graph);
  EpisodeConfig ep;
  ep.horizon = horizon;
  return make_scenario(std::move(map), std::move(traffic), {}, ep);
}

// Distinct states reached by a random walk.
std::vector<std::string> random_inputs(const std::shared_ptr<const Scenario>& sc,
                                       int count, std::uint64_t seed) {
  Environment env(sc);
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  std::set<std::string> seen;
  while (static_cast<int>(out.size()) < count) {
    const auto input = serialize_state(env.state().raw, sc->graph()).input;
    if (seen.insert(input).second) out.push_back(input);
    const auto mask = env.feasible_actions(env.state());
    VertexId a;
    do {
      a = std::uniform_int_distribution<int>(0, env.action_count() - 1)(rng);
    } while (!mask[a]);
    if (env.step(a).done) env.reset();
  }
  return out;
}

std::vector<SerializedState> as_states(const std::vector<std::string>& inputs) {
  std::vector<SerializedState> out;
  for (const auto& in : inputs) out.push_back({system_prompt(), in});
  return out;
}

std::string stub_command(const std::filesystem::path& table,
                         const std::string& extra = "") {
  return std::string(UAVRELAY_STUB) + " --table '" + table.string() + "' " + extra;
}

}  // namespace

TEST_CASE("serialization") {
  const auto g = path_graph(4, 100.0);
  const std::vector<int> zeros(3 + 4, 0);
  CHECK(serialize_state(zeros, g).input ==
        R"({"vehicle_per_edge":[0,0,0],"node_weight":[0,0,0,0]})");
  CHECK(serialize_state(zeros, g).instruction == system_prompt());
  const std::vector<int> raw{3, 0, 12, 0, 2, 1, 0};
  const auto s = serialize_state(raw, g);
  CHECK(s.input == R"({"vehicle_per_edge":[3,0,12],"node_weight":[0,2,1,0]})");
  CHECK(serialize_state(raw, g) == s);
  CHECK(parse_state_input(s.input, g) == raw);
  CHECK_THROWS_AS(parse_state_input(R"({"vehicle_per_edge":[1]})", g),
                  StructuralError);
  CHECK_THROWS_AS(parse_state_input("not json", g), StructuralError);
  CHECK_THROWS_AS(
      parse_state_input(R"({"vehicle_per_edge":[0,0,0.5],"node_weight":[0,0,0,0]})", g),
      StructuralError);
}

TEST_CASE("reference map serialization with empty roads") {
  auto map = load_map(UAVRELAY_DATA_DIR "/reference_map.yaml");
  const int m = map.graph.edge_count();
  TrafficSeries traffic(m, std::vector<std::vector<int>>(50, std::vector<int>(m, 0)));
  Environment env(make_scenario(map, traffic, {}, {}));
  const auto input = serialize_state(env.state().raw, map.graph).input;
  const auto back = parse_state_input(input, map.graph);
  std::vector<int> weights(back.begin() + m, back.end());
  for (int v = 0; v < map.graph.vertex_count(); ++v) {
    const int expect = v == 9 ? 2 : (v >= 11 && v <= 13 ? 1 : 0);
    CHECK(weights[v] == expect);
  }
  CHECK(input.find(' ') == std::string::npos);
  CHECK(input.rfind(R"({"vehicle_per_edge":[0,)", 0) == 0);
}

TEST_CASE("discretize examples") {
  const std::vector<double> r{-0.5, 0.0, 0.5};
  CHECK(discretize_scores(r).scores == std::vector<int>{0, 5, 9});
  const std::vector<double> flat{0.3, 0.3, 0.3, 0.3};
  CHECK(discretize_scores(flat).digits() == "5555");
  CHECK(neutral_scores(3).digits() == "555");
  const std::vector<double> two{1.0, 4.0};
  CHECK(discretize_scores(two).digits() == "09");
  const std::vector<double> other{0.0, 0.25, 1.0};
  CHECK(discretize_scores(other, 4).scores == std::vector<int>{0, 1, 4});
}

TEST_CASE("discretize properties") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + trial % 30;
    std::vector<double> r(n);
    for (auto& x : r) x = normal(rng);
    const auto y = discretize_scores(r);
    const auto imax = std::max_element(r.begin(), r.end()) - r.begin();
    const auto imin = std::min_element(r.begin(), r.end()) - r.begin();
    CHECK(y.scores[imax] == 9);
    CHECK(y.scores[imin] == 0);
    for (int v : y.scores) {
      CHECK(v >= 0);
      CHECK(v <= 9);
    }
    CHECK(y.digits().size() == static_cast<std::size_t>(n));
    // Positive affine maps leave the scores unchanged.
    const double a = std::exp(normal(rng));
    const double b = normal(rng) * 5;
    std::vector<double> t(n);
    for (int i = 0; i < n; ++i) t[i] = a * r[i] + b;
    CHECK(discretize_scores(t) == y);
  }
}

TEST_CASE("score output wire format") {
  const auto y = discretize_scores(std::vector<double>{0.0, 1.0, 0.5});
  const auto text = format_score_output(y);
  CHECK(text == R"({"scores":"095"})");
  CHECK(parse_score_output(text, 3) == y);
  CHECK_FALSE(parse_score_output(text, 4));
  CHECK_FALSE(parse_score_output(R"({"scores":"0a5"})", 3));
  CHECK_FALSE(parse_score_output(R"({"scores":[0,9,5]})", 3));
  CHECK_FALSE(parse_score_output(R"({"score":"095"})", 3));
  CHECK_FALSE(parse_score_output(R"({"scores":"095")", 3));
  CHECK_FALSE(parse_score_output(R"({"scores":"095"})", 3, 4));
  CHECK(parse_score_output(R"( {"scores":"095"} )", 3));
}

TEST_CASE("score_actions symmetry") {
  // UAV in the middle of an empty three-vertex path.
  auto sc = path_scenario(3, {0, 0}, 1, {});
  Environment env(sc);
  const auto r = score_actions(env, env.state());
  CHECK(r[0] == r[2]);
  CHECK(r[1] > r[0]);
}

TEST_CASE("score_actions hand evaluation") {
  // RSU at 0, two vehicles on (3,4), UAV at 4, 100 m spacing.
  auto sc = path_scenario(5, {0, 0, 0, 2}, 4, {0});
  Environment env(sc);
  const auto r = score_actions(env, env.state());
  const auto energy = [](double l) { return 120.0 * (60.0 - l / 10.0) + 200.0 * l / 10.0; };
  const double e0 = 12000.0;
  CHECK(r[0] == Approx(0.5 - energy(400) / e0));
  CHECK(r[1] == Approx(1.0 - energy(300) / e0));
  CHECK(r[2] == Approx(1.0 - energy(200) / e0));
  CHECK(r[3] == Approx(0.5 - energy(100) / e0));
  CHECK(r[4] == Approx(0.5 - energy(0) / e0));
  CHECK(discretize_scores(r).digits() == "08934");

  // Pure: state untouched, same vector again.
  const EnvState before = env.state();
  CHECK(score_actions(env, env.state()) == r);
  CHECK(env.state() == before);
}

TEST_CASE("infeasible actions get the sentinel") {
  EnergyParams slow;
  slow.speed_mps = 2.0;  // 120 m reach
  auto sc = path_scenario(5, {1, 0, 0, 0}, 0, {}, slow);
  Environment env(sc);
  const auto r = score_actions(env, env.state());
  CHECK(r[2] == -1.0);
  CHECK(r[3] == -1.0);
  CHECK(r[4] == -1.0);
  CHECK(r[0] > -1.0);
  CHECK(r[1] > -1.0);
  const auto y = discretize_scores(r);
  CHECK(y.scores[4] == 0);
}

TEST_CASE("oracle argmax is the greedy action") {
  const auto sc = grid_scenario(4);
  Environment env(sc);
  const auto inputs = random_inputs(sc, 60, 2);
  OracleScorer oracle(sc);
  const auto states = as_states(inputs);
  const auto results = oracle.score_batch(states);
  const auto serial = oracle.score_batch_serial(states);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    CHECK(results[i].scores == serial[i].scores);
    CHECK(results[i].raw_output == serial[i].raw_output);
    CHECK(results[i].status == ScoreStatus::kOk);
    const auto s = env.state_from_raw(parse_state_input(inputs[i], sc->graph()));
    const auto r = score_actions(env, s);
    const double best = *std::max_element(r.begin(), r.end());
    const auto& y = results[i].scores.scores;
    const auto top = std::max_element(y.begin(), y.end()) - y.begin();
    CHECK(r[top] == best);
  }
}

TEST_CASE("sft records, dataset and state db files") {
  const auto dir = testsupport::temp_dir("semantic_sft");
  const auto sc = grid_scenario(5);
  const auto inputs = random_inputs(sc, 25, 1);

  save_state_db(inputs, dir / "states.jsonl");
  CHECK(load_state_db(dir / "states.jsonl") == inputs);

  CHECK(build_sft_dataset(inputs, sc, dir / "sft.jsonl") == inputs.size());
  const auto records = load_sft_dataset(dir / "sft.jsonl");
  REQUIRE(records.size() == inputs.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].input == inputs[i]);
    CHECK(records[i].instruction == system_prompt());
    CHECK(parse_score_output(records[i].output, sc->graph().vertex_count()));
    CHECK(parse_sft_record(format_sft_record(records[i])) == records[i]);
  }
  std::ifstream a(dir / "sft.jsonl");
  std::string first((std::istreambuf_iterator<char>(a)), {});
  build_sft_dataset(inputs, sc, dir / "sft.jsonl");
  std::ifstream b(dir / "sft.jsonl");
  std::string second((std::istreambuf_iterator<char>(b)), {});
  CHECK(first == second);
  CHECK(first.substr(0, 16) == R"({"instruction":")");

  std::ofstream(dir / "bad.jsonl") << format_sft_record(records[0]) << "\n"
                                   << R"({"instruction":"x","input":"y"})" << "\n";
  try {
    load_sft_dataset(dir / "bad.jsonl");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bad.jsonl:2") != std::string::npos);
  }
  CHECK_THROWS_AS(load_sft_dataset(dir / "none.jsonl"), ConfigError);
}

TEST_CASE("table scorer and dispatcher") {
  const auto sc = grid_scenario(6);
  const int n = sc->graph().vertex_count();
  const auto inputs = random_inputs(sc, 30, 3);
  auto records = make_sft_records(inputs, sc);
  records.push_back({system_prompt(), inputs[0], R"({"scores":"1"})"});
  records.push_back({system_prompt(), "broken", "nonsense"});
  TableScorer table(records, n);
  OracleScorer oracle(sc);

  auto states = as_states(inputs);
  states.push_back({system_prompt(), R"({"vehicle_per_edge":[],"node_weight":[]})"});
  states.push_back({system_prompt(), "broken"});
  ScorerDispatcher dispatch(table, 7);
  const auto got = dispatch.score(states);
  const auto truth = oracle.score_batch(std::span(states).first(inputs.size()));
  REQUIRE(got.size() == states.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    CHECK(got[i].status == ScoreStatus::kOk);
    CHECK(got[i].scores == truth[i].scores);
  }
  CHECK(got[30].status == ScoreStatus::kMiss);
  CHECK(got[30].scores == neutral_scores(n));
  CHECK(got[31].status == ScoreStatus::kParseError);
  CHECK(got[31].raw_output == "nonsense");
  CHECK(dispatch.ok_count() == 30);
  CHECK(dispatch.miss_count() == 1);
  CHECK(dispatch.parse_error_count() == 1);
  CHECK(dispatch.batches() == 5);
  CHECK_THROWS_AS(ScorerDispatcher(table, 0), ConfigError);
  CHECK(std::string(to_string(ScoreStatus::kParseError)) == "parse_error");
}

TEST_CASE("external process scorer") {
  const auto dir = testsupport::temp_dir("semantic_ext");
  const auto sc = grid_scenario(7);
  const int n = sc->graph().vertex_count();
  const auto inputs = random_inputs(sc, 16, 4);
  build_sft_dataset(inputs, sc, dir / "sft.jsonl");
  TableScorer table(load_sft_dataset(dir / "sft.jsonl"), n);
  const auto states = as_states(inputs);
  const auto expected = table.score_batch(states);

  SUBCASE("loopback reproduces the table") {
    ExternalEndpoint ep;
    ep.command = stub_command(dir / "sft.jsonl");
    ExternalScorer ext(ep, n);
    ScorerDispatcher dispatch(ext, 5);
    for (int round = 0; round < 2; ++round) {
      const auto got = dispatch.score(states);
      for (std::size_t i = 0; i < states.size(); ++i) {
        CHECK(got[i].status == ScoreStatus::kOk);
        CHECK(got[i].scores == expected[i].scores);
        CHECK(got[i].raw_output == expected[i].raw_output);
      }
    }
  }
  SUBCASE("malformed responses become parse errors") {
    ExternalEndpoint ep;
    ep.command = stub_command(dir / "sft.jsonl", "--fault-every 4");
    ExternalScorer ext(ep, n);
    const auto got = ext.score_batch(states);
    int errors = 0;
    for (std::size_t i = 0; i < states.size(); ++i) {
      if ((i + 1) % 4 == 0) {
        CHECK(got[i].status == ScoreStatus::kParseError);
        CHECK(got[i].scores == neutral_scores(n));
        ++errors;
      } else {
        CHECK(got[i].status == ScoreStatus::kOk);
        CHECK(got[i].scores == expected[i].scores);
      }
    }
    CHECK(errors == 4);
  }
  SUBCASE("process death is a transport error") {
    ExternalEndpoint ep;
    ep.command = stub_command(dir / "sft.jsonl", "--die-after 3");
    ExternalScorer ext(ep, n);
    CHECK_THROWS_AS(ext.score_batch(states), TransportError);
  }
  SUBCASE("silence times out") {
    ExternalEndpoint ep;
    ep.command = "sleep 5";
    ep.timeout = std::chrono::milliseconds(200);
    ExternalScorer ext(ep, n);
    const auto t0 = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(ext.score_batch(states), TransportError);
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(3));
  }
  SUBCASE("missing command") {
    ExternalEndpoint ep;
    ep.command = "/nonexistent/scorer";
    ExternalScorer ext(ep, n);
    CHECK_THROWS_AS(ext.score_batch(states), TransportError);
  }
}

TEST_CASE("external tcp scorer") {
  const auto sc = grid_scenario(8);
  const int n = sc->graph().vertex_count();
  const auto inputs = random_inputs(sc, 10, 5);
  const auto records = make_sft_records(inputs, sc);
  std::unordered_map<std::string, std::string> answers;
  for (const auto& r : records) answers.emplace(r.input, r.output);

  const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(listener >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  REQUIRE(::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  REQUIRE(::listen(listener, 1) == 0);
  socklen_t len = sizeof addr;
  ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len);
  const int port = ntohs(addr.sin_port);

  std::thread server([&] {
    const int conn = ::accept(listener, nullptr, nullptr);
    if (conn < 0) return;
    std::string buffer;
    char chunk[4096];
    for (;;) {
      const ssize_t got = ::read(conn, chunk, sizeof chunk);
      if (got <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(got));
      std::size_t nl;
      while ((nl = buffer.find('\n')) != std::string::npos) {
        const auto req = nlohmann::json::parse(buffer.substr(0, nl));
        buffer.erase(0, nl + 1);
        nlohmann::ordered_json resp;
        resp["id"] = req["id"];
        resp["output"] = answers.at(req["input"].get<std::string>());
        const std::string line = resp.dump() + "\n";
        if (::write(conn, line.data(), line.size()) < 0) break;
      }
    }
    ::close(conn);
  });

  {
    ExternalEndpoint ep;
    ep.kind = ExternalEndpoint::Kind::kTcp;
    ep.port = port;
    ExternalScorer ext(ep, n);
    const auto got = ext.score_batch(as_states(inputs));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      CHECK(got[i].status == ScoreStatus::kOk);
      CHECK(got[i].raw_output == records[i].output);
    }
  }
  server.join();
  ::close(listener);

  ExternalEndpoint closed;
  closed.kind = ExternalEndpoint::Kind::kTcp;
  closed.port = port;
  CHECK_THROWS_AS(ExternalScorer(closed, n), TransportError);
}

TEST_CASE("collect_states") {
  const auto sc = grid_scenario(9);
  TrainConfig c;
  c.hidden = 16;
  c.rollout_length = 16;
  c.num_envs = 2;
  c.minibatch_size = 16;
  c.seed = 3;
  const auto res = collect_states(sc, c, 40, 100);
  CHECK(res.reached_target);
  CHECK(res.states.size() == 40);
  CHECK(res.visited >= 40);
  CHECK(res.dedup_ratio() <= 1.0);
  std::set<std::string> unique(res.states.begin(), res.states.end());
  CHECK(unique.size() == res.states.size());
  for (const auto& s : res.states) CHECK_NOTHROW(parse_state_input(s, sc->graph()));
  CHECK(collect_states(sc, c, 40, 100).states == res.states);

  const auto capped = collect_states(sc, c, 100000, 2);
  CHECK_FALSE(capped.reached_target);
  CHECK(capped.episodes <= 2);
  CHECK(capped.states.size() > 0);
}
