#include "uavrelay/env.hpp"

#include <algorithm>
#include <atomic>
#include <ostream>
#include <string>

#include "uavrelay/errors.hpp"

namespace uavrelay {

std::shared_ptr<const Scenario> make_scenario(RoadMap map,
                                              TrafficSeries traffic,
                                              EnergyParams energy,
                                              EpisodeConfig episode) {
  static std::atomic<std::uint64_t> next_id{1};
  validate(energy);
  const auto& g = map.graph;
  if (g.edge_count() < 1) throw ConfigError("map needs at least one edge");
  if (traffic.edge_count() != g.edge_count()) {
    throw ConfigError("traffic has " + std::to_string(traffic.edge_count()) +
                      " edges, map has " + std::to_string(g.edge_count()));
  }
  if (episode.horizon < 1) throw ConfigError("episode horizon must be >= 1");
  if (episode.start_slot < 1) throw ConfigError("start_slot must be >= 1");
  const int last = episode.start_slot + episode.horizon - 1;
  if (traffic.slots() < last) {
    throw ConfigError("traffic has " + std::to_string(traffic.slots()) +
                      " slots but the episode needs slot " +
                      std::to_string(last));
  }
  if (map.uav_start < 0 || map.uav_start >= g.vertex_count()) {
    throw ConfigError("uav_start out of range");
  }
  auto s = std::make_shared<Scenario>();
  s->max_vehicle_cap = traffic.percentile99();
  s->max_energy_j = max_slot_energy(energy);
  if (energy.battery_j < s->max_energy_j) {
    throw ConfigError("battery cannot fund a single worst-case slot");
  }
  s->map = std::move(map);
  s->traffic = std::move(traffic);
  s->energy = energy;
  s->episode = episode;
  s->id = next_id++;
  return s;
}

Environment::Environment(std::shared_ptr<const Scenario> scenario)
    : scenario_(std::move(scenario)) {
  reset();
}

EnvState Environment::make_state(int slot, VertexId uav, double battery_j,
                                 std::vector<int> edge_counts) const {
  const auto& g = scenario_->graph();
  EnvState s;
  s.slot = slot;
  s.uav_vertex = uav;
  s.battery_j = battery_j;
  s.occupancy = make_occupancy(g, std::move(edge_counts), uav);
  const int m = g.edge_count();
  const int n = g.vertex_count();
  s.raw.reserve(m + n);
  s.raw.insert(s.raw.end(), s.occupancy.edge_vehicles.begin(),
               s.occupancy.edge_vehicles.end());
  s.raw.insert(s.raw.end(), s.occupancy.vertex_weight.begin(),
               s.occupancy.vertex_weight.end());
  s.normalized.resize(m + n);
  const double cap = scenario_->max_vehicle_cap;
  for (int e = 0; e < m; ++e) {
    s.normalized[e] = std::min(1.0, s.raw[e] / cap);
  }
  for (int v = 0; v < n; ++v) s.normalized[m + v] = s.raw[m + v] / 2.0;
  return s;
}

namespace {

std::vector<int> traffic_at(const Scenario& sc, int episode_slot) {
  const auto row = sc.traffic.slot(sc.episode.start_slot + episode_slot - 1);
  return {row.begin(), row.end()};
}

}  // namespace

const EnvState& Environment::reset() {
  const auto& sc = *scenario_;
  state_ = make_state(1, sc.map.uav_start, sc.energy.battery_j,
                      traffic_at(sc, 1));
  return state_;
}

std::vector<char> Environment::feasible_actions(const EnvState& state) const {
  const auto& g = scenario_->graph();
  const double reach = max_flight_m(scenario_->energy);
  std::vector<char> mask(g.vertex_count(), 0);
  for (int v = 0; v < g.vertex_count(); ++v) {
    mask[v] = v == state.uav_vertex ||
              g.vertex_distance(state.uav_vertex, v) <= reach;
  }
  return mask;
}

Transition Environment::transition(const EnvState& state,
                                   VertexId action) const {
  const auto& sc = *scenario_;
  const auto& g = sc.graph();
  if (state.done) throw ContractViolation("step on a finished episode");
  if (action < 0 || action >= g.vertex_count()) {
    throw ContractViolation("action " + std::to_string(action) +
                            " is not a vertex id");
  }

  Transition tr;
  tr.state = state;
  tr.action = action;
  const double flight = g.vertex_distance(state.uav_vertex, action);
  const bool feasible =
      action == state.uav_vertex || flight <= max_flight_m(sc.energy);
  VertexId landed = action;
  if (!feasible) {
    if (sc.episode.masking) {
      throw ContractViolation("infeasible action " + std::to_string(action) +
                              " from vertex " +
                              std::to_string(state.uav_vertex));
    }
    tr.violation = true;
    landed = state.uav_vertex;
  }
  tr.flight_m = tr.violation ? 0.0 : flight;
  tr.energy_j = slot_energy(sc.energy, tr.flight_m);

  // Coverage applies to the current slot's vehicles after the move.
  const SlotOccupancy moved =
      make_occupancy(g, state.occupancy.edge_vehicles, landed);
  const FragmentationReport frag = fragment(g, moved);
  tr.fragments = frag.component_count;
  tr.mean_fragment = frag.mean_component_weight;
  tr.largest_fragment = frag.largest_component_weight;
  if (tr.violation) {
    tr.reward = sc.episode.violation_penalty;
  } else {
    const double connectivity =
        tr.fragments > 0 ? sc.episode.alpha / tr.fragments : 0.0;
    tr.reward =
        connectivity - sc.episode.beta_energy * tr.energy_j / sc.max_energy_j;
  }

  const double battery = state.battery_j - tr.energy_j;
  const bool last_slot = state.slot >= sc.episode.horizon;
  tr.done = tr.violation || last_slot || battery < sc.max_energy_j;
  if (last_slot) {
    tr.next_state = make_state(state.slot, landed, battery,
                               state.occupancy.edge_vehicles);
    tr.next_state.slot = state.slot + 1;
  } else {
    tr.next_state = make_state(state.slot + 1, landed, battery,
                               traffic_at(sc, state.slot + 1));
  }
  tr.next_state.done = tr.done;
  return tr;
}

Transition Environment::step(VertexId action) {
  Transition tr = transition(state_, action);
  state_ = tr.next_state;
  return tr;
}

SnapshotToken Environment::snapshot() const {
  return SnapshotToken(scenario_->id, std::make_shared<const EnvState>(state_));
}

const EnvState& Environment::restore(const SnapshotToken& token) {
  if (token.scenario_id() != scenario_->id) {
    throw ContractViolation("snapshot belongs to a different scenario");
  }
  state_ = token.state();
  return state_;
}

EnvState Environment::state_from_raw(std::span<const int> raw, int slot,
                                     std::optional<double> battery_j) const {
  const auto& g = scenario_->graph();
  const int m = g.edge_count();
  const int n = g.vertex_count();
  if (static_cast<int>(raw.size()) != m + n) {
    throw StructuralError("raw state has " + std::to_string(raw.size()) +
                          " entries, expected " + std::to_string(m + n));
  }
  VertexId uav = -1;
  for (int v = 0; v < n; ++v) {
    if (raw[m + v] == 2) {
      if (uav >= 0) throw StructuralError("raw state has two UAV vertices");
      uav = v;
    }
  }
  if (uav < 0) throw StructuralError("raw state has no UAV vertex");
  EnvState s = make_state(slot, uav,
                          battery_j.value_or(scenario_->energy.battery_j),
                          std::vector<int>(raw.begin(), raw.begin() + m));
  if (!std::equal(s.raw.begin(), s.raw.end(), raw.begin())) {
    throw StructuralError("raw vertex weights inconsistent with the RSU set");
  }
  return s;
}

VectorEnv::VectorEnv(std::shared_ptr<const Scenario> scenario, int count) {
  if (count < 1) throw ConfigError("need at least one environment");
  envs_.reserve(count);
  for (int i = 0; i < count; ++i) envs_.emplace_back(scenario);
}

void VectorEnv::reset_all() {
  for (auto& env : envs_) env.reset();
}

std::vector<Transition> VectorEnv::step_batch(
    std::span<const VertexId> actions) {
  if (actions.size() != envs_.size()) {
    throw ContractViolation("step_batch expects one action per environment");
  }
  std::vector<Transition> out(envs_.size());
  const long count = static_cast<long>(envs_.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < count; ++i) {
    out[i] = envs_[i].step(actions[i]);
    if (out[i].done) envs_[i].reset();
  }
  return out;
}

std::vector<Transition> VectorEnv::step_batch_serial(
    std::span<const VertexId> actions) {
  if (actions.size() != envs_.size()) {
    throw ContractViolation("step_batch expects one action per environment");
  }
  std::vector<Transition> out;
  out.reserve(envs_.size());
  for (std::size_t i = 0; i < envs_.size(); ++i) {
    out.push_back(envs_[i].step(actions[i]));
    if (out.back().done) envs_[i].reset();
  }
  return out;
}

void write_trace_header(std::ostream& out) {
  out << "episode,slot,uav_vertex,action,reward,K,C,energy_J,flight_m\n";
}

void write_trace_row(std::ostream& out, int episode, const Transition& t) {
  out << episode << ',' << t.state.slot << ',' << t.state.uav_vertex << ','
      << t.action << ',' << t.reward << ',' << t.fragments << ','
      << t.mean_fragment << ',' << t.energy_j << ',' << t.flight_m << '\n';
}

}  // namespace uavrelay
