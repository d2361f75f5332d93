#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "uavrelay/mlp.hpp"

namespace uavrelay {

enum class RatioOn { kFused, kActor };

struct TrainConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double c1 = 0.5;        // value loss weight
  double c2 = 0.01;       // entropy bonus weight
  double beta_kl = 0.05;  // KL(fused || prior) weight
  bool anneal_beta_kl = false;
  double lambda_fusion = 1.0;
  double learning_rate = 3e-4;
  double max_grad_norm = 0.5;  // <= 0 disables clipping
  int minibatch_size = 64;
  int epochs_per_update = 4;
  int rollout_length = 128;
  int num_envs = 4;
  int hidden = 128;
  RatioOn ratio_on = RatioOn::kFused;
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);
// Hash of every field except the seed.
std::uint64_t config_fingerprint(const TrainConfig& config);

// Actor: obs -> hidden -> hidden -> n logits. Critic: obs -> ... -> 1.
struct PolicyParameters {
  Mlp actor;
  Mlp critic;
  std::uint64_t version = 0;

  bool operator==(const PolicyParameters&) const = default;
};

PolicyParameters init_policy(int observation_size, int action_count,
                             int hidden, std::uint64_t seed);

// Prior logits from integer scores: (Y - mean) / (population std + 1e-7).
std::vector<double> normalize_llm_logits(std::span<const int> scores);

// Softmax over unmasked entries; masked entries get exactly 0.
// ContractViolation when every action is masked.
std::vector<double> masked_softmax(std::span<const double> logits,
                                   std::span<const char> mask);
// softmax(z_ppo + lambda * z_llm) with the mask applied.
std::vector<double> fuse(std::span<const double> z_ppo,
                         std::span<const double> z_llm, double lambda,
                         std::span<const char> mask);
// KL(p || q) over entries where p > 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

struct FusedPolicyOutput {
  std::vector<double> z_ppo;
  std::vector<double> z_llm;
  std::vector<double> fused_probs;
  double value = 0.0;
  std::vector<char> mask;
};

FusedPolicyOutput evaluate_policy(const PolicyParameters& params,
                                  std::span<const double> observation,
                                  std::span<const double> z_llm, double lambda,
                                  std::span<const char> mask);

// Generalized advantage estimation for one environment's sequence.
// dones[t] marks that step t ended an episode (no bootstrap across it).
struct AdvantageResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};
AdvantageResult gae_advantages(std::span<const double> rewards,
                               std::span<const double> values,
                               std::span<const char> dones,
                               double bootstrap_value, double gamma,
                               double gae_lambda);
void normalize_advantages(std::span<double> advantages);

// Flattened on-policy batch; sample i occupies column i of `observations`.
struct RolloutBatch {
  Eigen::MatrixXd observations;  // obs_dim x N
  std::vector<int> actions;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;  // normalized
  std::vector<double> returns;
  Eigen::MatrixXd z_llm;  // n x N (zeros when no prior)
  std::vector<std::vector<char>> masks;

  std::size_t size() const { return actions.size(); }
};

struct LossTerms {
  double total = 0.0;
  double clip = 0.0;     // mean clipped surrogate (to be maximized)
  double value = 0.0;    // mean squared value error
  double entropy = 0.0;  // mean entropy of the fused policy
  double kl = 0.0;       // mean KL(fused || prior)
};

// Mean over `indices` of -L_clip + c1 L_vf - c2 S + beta_kl KL.
// When grad is non-empty it receives d(total)/d(params) laid out as
// [actor params..., critic params...] (overwritten, not accumulated).
LossTerms sa_ppo_loss(const PolicyParameters& params, const RolloutBatch& batch,
                      std::span<const std::size_t> indices,
                      const TrainConfig& config, double beta_kl,
                      std::span<double> grad);
// Standard PPO without prior fusion or KL, on softmax(z_ppo) under the mask.
LossTerms ppo_loss(const PolicyParameters& params, const RolloutBatch& batch,
                   std::span<const std::size_t> indices,
                   const TrainConfig& config, std::span<double> grad);

struct UpdateStats {
  LossTerms loss;  // averaged over minibatches
  int minibatches = 0;
};

// Epochs of shuffled minibatch gradient steps. A non-finite loss restores
// the parameters to their pre-update values and throws RuntimeFailure.
UpdateStats sa_ppo_update(PolicyParameters& params, AdamState& adam,
                          const RolloutBatch& batch, const TrainConfig& config,
                          double beta_kl, std::mt19937_64& rng);
UpdateStats ppo_update(PolicyParameters& params, AdamState& adam,
                       const RolloutBatch& batch, const TrainConfig& config,
                       std::mt19937_64& rng);

// Binary checkpoint: magic, format version, map and config fingerprints,
// layer shapes, then little-endian IEEE-754 doubles (actor, critic, and
// optionally the Adam moments).
struct Checkpoint {
  PolicyParameters params;
  std::optional<AdamState> adam;
  std::uint64_t map_hash = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t completed_updates = 0;
  std::uint64_t completed_episodes = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void checkpoint_save(const Checkpoint& checkpoint,
                     const std::filesystem::path& path);
// Expected hashes, when given, must match. Dimension mismatches and
// truncation are ConfigError.
Checkpoint checkpoint_load(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_map_hash = {},
                           std::optional<std::uint64_t> expected_config_hash = {});

// ConfigError unless the checkpoint's nets fit the given map dimensions.
void ensure_compatible(const Checkpoint& checkpoint, int observation_size,
                       int action_count);

}  // namespace uavrelay
