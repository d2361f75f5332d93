#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "uavrelay/map_io.hpp"
#include "uavrelay/radio.hpp"
#include "uavrelay/road_graph.hpp"
#include "uavrelay/traffic.hpp"

namespace uavrelay {

struct EpisodeConfig {
  int horizon = 50;       // T
  int start_slot = 1;     // traffic slot played as episode slot 1
  double alpha = 1.0;
  double beta_energy = 1.0;
  bool masking = true;
  double violation_penalty = -1.0;

  bool operator==(const EpisodeConfig&) const = default;
};

// Immutable data shared by every environment instance of one run.
struct Scenario {
  RoadMap map;
  TrafficSeries traffic;
  EnergyParams energy;
  EpisodeConfig episode;
  int max_vehicle_cap = 1;   // normalization divisor for edge counts
  double max_energy_j = 0;   // E0
  std::uint64_t id = 0;      // unique per construction; guards snapshots

  const RoadTopologyGraph& graph() const { return map.graph; }
};

// Validates cross-field constraints (traffic covers the horizon, battery
// funds at least one worst-case slot) and assigns a fresh id.
std::shared_ptr<const Scenario> make_scenario(RoadMap map,
                                              TrafficSeries traffic,
                                              EnergyParams energy,
                                              EpisodeConfig episode);

struct EnvState {
  int slot = 1;  // episode slot, 1..T
  VertexId uav_vertex = 0;
  double battery_j = 0.0;
  bool done = false;
  SlotOccupancy occupancy;
  std::vector<int> raw;          // edge counts then vertex weights
  std::vector<double> normalized;

  bool operator==(const EnvState&) const = default;
};

struct Transition {
  EnvState state;
  VertexId action = 0;
  double reward = 0.0;
  EnvState next_state;
  bool done = false;
  bool violation = false;
  int fragments = 0;            // K(t) after the move
  double mean_fragment = 0.0;   // C(t)
  long largest_fragment = 0;
  double energy_j = 0.0;
  double flight_m = 0.0;
  // Filled by the learner, not by the environment.
  std::vector<double> z_llm;
  std::vector<double> z_ppo;
  double log_prob = 0.0;
  double value = 0.0;
};

class SnapshotToken {
 public:
  std::uint64_t scenario_id() const { return scenario_id_; }
  const EnvState& state() const { return *state_; }

 private:
  friend class Environment;
  SnapshotToken(std::uint64_t id, std::shared_ptr<const EnvState> s)
      : scenario_id_(id), state_(std::move(s)) {}
  std::uint64_t scenario_id_;
  std::shared_ptr<const EnvState> state_;
};

class Environment {
 public:
  explicit Environment(std::shared_ptr<const Scenario> scenario);

  const EnvState& reset();
  Transition step(VertexId action);
  const EnvState& state() const { return state_; }

  // Pure one-step model used by step() and by the action scorer.
  Transition transition(const EnvState& state, VertexId action) const;
  std::vector<char> feasible_actions(const EnvState& state) const;

  SnapshotToken snapshot() const;
  const EnvState& restore(const SnapshotToken& token);

  // Rebuilds a state from edge counts + vertex weights (the UAV is the
  // vertex of weight 2). Slot and battery default to a fresh episode.
  EnvState state_from_raw(std::span<const int> raw, int slot = 1,
                          std::optional<double> battery_j = {}) const;
  EnvState make_state(int slot, VertexId uav, double battery_j,
                      std::vector<int> edge_counts) const;

  const Scenario& scenario() const { return *scenario_; }
  const std::shared_ptr<const Scenario>& scenario_ptr() const {
    return scenario_;
  }
  int action_count() const { return scenario_->graph().vertex_count(); }
  int observation_size() const {
    return scenario_->graph().vertex_count() + scenario_->graph().edge_count();
  }

 private:
  std::shared_ptr<const Scenario> scenario_;
  EnvState state_;
};

// N independent environments stepped together. Finished environments are
// reset automatically; the returned transition keeps the terminal state.
class VectorEnv {
 public:
  VectorEnv(std::shared_ptr<const Scenario> scenario, int count);

  int size() const { return static_cast<int>(envs_.size()); }
  Environment& operator[](int i) { return envs_[i]; }
  const Environment& operator[](int i) const { return envs_[i]; }

  void reset_all();
  std::vector<Transition> step_batch(std::span<const VertexId> actions);
  std::vector<Transition> step_batch_serial(std::span<const VertexId> actions);

 private:
  std::vector<Environment> envs_;
};

// Episode trace CSV: episode,slot,uav_vertex,action,reward,K,C,energy_J,flight_m
void write_trace_header(std::ostream& out);
void write_trace_row(std::ostream& out, int episode, const Transition& t);

}  // namespace uavrelay
