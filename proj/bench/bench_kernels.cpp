// Serial reference vs OpenMP for the three batched kernels.
#include <benchmark/benchmark.h>

#include <random>

#include "uavrelay/env.hpp"
#include "uavrelay/semantic.hpp"

using namespace uavrelay;

namespace {

std::shared_ptr<const Scenario> scenario(int side) {
  RoadMap map{make_grid_graph(side, side, 200.0, {0}), side * side - 1};
  TrafficProfile p;
  p.seed = 17;
  p.slots = 64;
  p.base_rate = 0.3;
  auto traffic = generate_traffic(p, map.graph);
  EpisodeConfig ep;
  ep.horizon = 60;
  return make_scenario(std::move(map), std::move(traffic), EnergyParams{}, ep);
}

std::vector<SlotOccupancy> occupancies(const Scenario& sc, int count) {
  std::mt19937_64 rng(3);
  const int n = sc.graph().vertex_count();
  std::vector<SlotOccupancy> out;
  for (int i = 0; i < count; ++i) {
    const auto slot = sc.traffic.slot(1 + i % sc.traffic.slots());
    out.push_back(make_occupancy(sc.graph(), {slot.begin(), slot.end()},
                                 std::uniform_int_distribution<int>(0, n - 1)(rng)));
  }
  return out;
}

std::vector<SerializedState> states(const std::shared_ptr<const Scenario>& sc, int count) {
  Environment env(sc);
  std::mt19937_64 rng(5);
  std::vector<SerializedState> out;
  while (static_cast<int>(out.size()) < count) {
    out.push_back(serialize_state(env.state().raw, sc->graph()));
    const auto mask = env.feasible_actions(env.state());
    VertexId a;
    do {
      a = std::uniform_int_distribution<int>(0, static_cast<int>(mask.size()) - 1)(rng);
    } while (!mask[a]);
    if (env.step(a).done) env.reset();
  }
  return out;
}

template <bool kParallel>
void BM_Fragment(benchmark::State& st) {
  const auto sc = scenario(static_cast<int>(st.range(0)));
  const auto occs = occupancies(*sc, 512);
  for (auto _ : st) {
    auto r = kParallel ? fragment_batch(sc->graph(), occs)
                       : fragment_batch_serial(sc->graph(), occs);
    benchmark::DoNotOptimize(r);
  }
  st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(occs.size()));
}

template <bool kParallel>
void BM_Step(benchmark::State& st) {
  const auto sc = scenario(8);
  VectorEnv envs(sc, static_cast<int>(st.range(0)));
  std::vector<VertexId> hover(envs.size());
  for (auto _ : st) {
    for (int i = 0; i < envs.size(); ++i) hover[i] = envs[i].state().uav_vertex;
    auto r = kParallel ? envs.step_batch(hover) : envs.step_batch_serial(hover);
    benchmark::DoNotOptimize(r);
  }
  st.SetItemsProcessed(st.iterations() * envs.size());
}

template <bool kParallel>
void BM_Oracle(benchmark::State& st) {
  const auto sc = scenario(static_cast<int>(st.range(0)));
  const auto batch = states(sc, 64);
  OracleScorer oracle(sc);
  for (auto _ : st) {
    auto r = kParallel ? oracle.score_batch(batch) : oracle.score_batch_serial(batch);
    benchmark::DoNotOptimize(r);
  }
  st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(batch.size()));
}

}  // namespace

BENCHMARK(BM_Fragment<false>)->Arg(5)->Arg(10)->Arg(20);
BENCHMARK(BM_Fragment<true>)->Arg(5)->Arg(10)->Arg(20);
BENCHMARK(BM_Step<false>)->Arg(16)->Arg(128);
BENCHMARK(BM_Step<true>)->Arg(16)->Arg(128);
BENCHMARK(BM_Oracle<false>)->Arg(5)->Arg(8);
BENCHMARK(BM_Oracle<true>)->Arg(5)->Arg(8);

BENCHMARK_MAIN();
