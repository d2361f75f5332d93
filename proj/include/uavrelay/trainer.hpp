#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "uavrelay/env.hpp"
#include "uavrelay/policy.hpp"
#include "uavrelay/semantic.hpp"

namespace uavrelay {

enum class Variant { kSaPpo, kVanillaPpo, kPureSemantic };

const char* to_string(Variant variant);
Variant parse_variant(const std::string& name);

struct EpisodeSummary {
  long episode = 0;  // 1-based, in completion order
  double total_reward = 0.0;
  double flight_m = 0.0;
  double energy_j = 0.0;
  double mean_fragments = 0.0;       // mean K over slots
  double mean_component = 0.0;       // mean C over slots
  double mean_largest = 0.0;         // mean largest-component size over slots
  int steps = 0;
  bool violation = false;
};

struct UpdateRecord {
  std::uint64_t update = 0;  // 1-based
  LossTerms loss;
  double mean_reward = 0.0;  // over the rollout's transitions
  double beta_kl = 0.0;
};

struct TrainerHooks {
  std::function<void(const UpdateRecord&)> on_update;
  std::function<void(const EpisodeSummary&)> on_episode;
  // Sees every state an environment is about to act from. Returning true
  // stops the run before the next update.
  std::function<bool(const EnvState&)> on_state;
};

// Rollout + update loop for the three variants. The scorer is required
// for kSaPpo and kPureSemantic and ignored by kVanillaPpo.
class Trainer {
 public:
  Trainer(std::shared_ptr<const Scenario> scenario, TrainConfig config,
          Variant variant, Scorer* scorer = nullptr,
          int batch_cap = kDefaultBatchCap);

  // Trains (or, for kPureSemantic, just acts) until at least
  // `max_episodes` episodes have completed in total. Returns false when a
  // hook stopped the run early.
  bool run(long max_episodes, const TrainerHooks& hooks = {});

  const PolicyParameters& params() const { return params_; }
  const AdamState& adam() const { return adam_; }
  std::uint64_t completed_updates() const { return updates_; }
  long completed_episodes() const { return episodes_; }
  const ScorerDispatcher* dispatcher() const { return dispatcher_.get(); }
  const TrainConfig& config() const { return config_; }
  Variant variant() const { return variant_; }

  Checkpoint checkpoint() const;
  // Continues from a saved point; environments restart from fresh episodes
  // and the random streams are re-derived from the seed and update count.
  void resume(const Checkpoint& checkpoint);

 private:
  void reseed();
  double current_beta(long max_episodes) const;
  std::vector<std::vector<double>> prior_logits(const std::vector<EnvState>& states);

  std::shared_ptr<const Scenario> scenario_;
  TrainConfig config_;
  Variant variant_;
  Scorer* scorer_;
  std::unique_ptr<ScorerDispatcher> dispatcher_;
  PolicyParameters params_;
  AdamState adam_;
  VectorEnv envs_;
  std::mt19937_64 sample_rng_;
  std::mt19937_64 update_rng_;
  std::uint64_t updates_ = 0;
  long episodes_ = 0;
  std::vector<EpisodeSummary> running_;  // per environment
};

// Deterministic RNG stream derived from a seed and a stream label.
std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t stream);

// Plays one episode from env.reset() with a frozen policy. Greedy picks
// the most probable action; otherwise actions are sampled from rng.
struct PolicyRollout {
  std::vector<Transition> transitions;
  EpisodeSummary summary;
};
PolicyRollout rollout_policy(Environment& env, const PolicyParameters* params,
                             Variant variant, Scorer* scorer, double lambda,
                             bool greedy, std::mt19937_64& rng);

struct CollectResult {
  std::vector<std::string> states;  // serialized inputs, first-seen order
  long visited = 0;                 // states seen including duplicates
  long episodes = 0;
  bool reached_target = false;

  double dedup_ratio() const {
    return visited > 0 ? static_cast<double>(states.size()) / visited : 0.0;
  }
};

// Vanilla PPO exploration that harvests distinct serialized states until
// `target` states or `max_episodes` episodes, whichever comes first.
CollectResult collect_states(std::shared_ptr<const Scenario> scenario,
                             TrainConfig config, std::size_t target,
                             long max_episodes);

}  // namespace uavrelay
