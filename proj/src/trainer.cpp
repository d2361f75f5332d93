#include "uavrelay/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "uavrelay/errors.hpp"

namespace uavrelay {

const char* to_string(Variant variant) {
  switch (variant) {
    case Variant::kSaPpo:
      return "sa_ppo";
    case Variant::kVanillaPpo:
      return "vanilla_ppo";
    case Variant::kPureSemantic:
      return "pure_semantic";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "sa_ppo") return Variant::kSaPpo;
  if (name == "vanilla_ppo") return Variant::kVanillaPpo;
  if (name == "pure_semantic") return Variant::kPureSemantic;
  throw ConfigError("unknown variant '" + name +
                    "' (expected sa_ppo, vanilla_ppo or pure_semantic)");
}

std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSampleStream = 2;
constexpr std::uint64_t kUpdateStream = 3;

std::vector<char> action_mask(const Environment& env, const EnvState& s) {
  if (env.scenario().episode.masking) return env.feasible_actions(s);
  return std::vector<char>(env.action_count(), 1);
}

int sample_action(std::span<const double> probs, std::span<const char> mask,
                  std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cum = 0.0;
  int last = -1;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (!mask[j]) continue;
    cum += probs[j];
    last = static_cast<int>(j);
    if (u < cum) return last;
  }
  return last;
}

int greedy_action(std::span<const double> probs, std::span<const char> mask) {
  int best = -1;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (mask[j] && (best < 0 || probs[j] > probs[best])) {
      best = static_cast<int>(j);
    }
  }
  return best;
}

void accumulate(EpisodeSummary& s, const Transition& t) {
  s.total_reward += t.reward;
  s.flight_m += t.flight_m;
  s.energy_j += t.energy_j;
  s.mean_fragments += t.fragments;
  s.mean_component += t.mean_fragment;
  s.mean_largest += static_cast<double>(t.largest_fragment);
  s.violation = s.violation || t.violation;
  ++s.steps;
}

EpisodeSummary finish(EpisodeSummary s) {
  if (s.steps > 0) {
    s.mean_fragments /= s.steps;
    s.mean_component /= s.steps;
    s.mean_largest /= s.steps;
  }
  return s;
}

std::vector<double> prior_for(Scorer& scorer, const Environment& env,
                              const EnvState& s) {
  const SerializedState ss = serialize_state(s.raw, env.scenario().graph());
  const auto res = scorer.score_batch(std::span(&ss, 1));
  return normalize_llm_logits(res.at(0).scores.scores);
}

}  // namespace

Trainer::Trainer(std::shared_ptr<const Scenario> scenario, TrainConfig config,
                 Variant variant, Scorer* scorer, int batch_cap)
    : scenario_(std::move(scenario)),
      config_(config),
      variant_(variant),
      scorer_(scorer),
      envs_(scenario_, config.num_envs) {
  validate(config_);
  if (variant_ != Variant::kVanillaPpo) {
    if (!scorer_) {
      throw ConfigError(std::string(to_string(variant_)) + " needs a scorer");
    }
    dispatcher_ = std::make_unique<ScorerDispatcher>(*scorer_, batch_cap);
  }
  const int obs = envs_[0].observation_size();
  const int n = envs_[0].action_count();
  params_ = init_policy(obs, n, config_.hidden,
                        derive_rng(config_.seed, kInitStream)());
  running_.assign(envs_.size(), EpisodeSummary{});
  reseed();
}

void Trainer::reseed() {
  sample_rng_ = derive_rng(config_.seed, kSampleStream + (updates_ << 8));
  update_rng_ = derive_rng(config_.seed, kUpdateStream + (updates_ << 8));
}

double Trainer::current_beta(long max_episodes) const {
  if (!config_.anneal_beta_kl || max_episodes <= 0) return config_.beta_kl;
  const double frac = static_cast<double>(episodes_) / max_episodes;
  return config_.beta_kl * std::max(0.0, 1.0 - frac);
}

std::vector<std::vector<double>> Trainer::prior_logits(
    const std::vector<EnvState>& states) {
  std::vector<SerializedState> batch;
  batch.reserve(states.size());
  for (const auto& s : states) {
    batch.push_back(serialize_state(s.raw, scenario_->graph()));
  }
  const auto results = dispatcher_->score(batch);
  std::vector<std::vector<double>> out;
  out.reserve(results.size());
  for (const auto& r : results) {
    out.push_back(normalize_llm_logits(r.scores.scores));
  }
  return out;
}

bool Trainer::run(long max_episodes, const TrainerHooks& hooks) {
  const int num = envs_.size();
  const int len = config_.rollout_length;
  const int obs_dim = envs_[0].observation_size();
  const int n = envs_[0].action_count();
  const bool learns = variant_ != Variant::kPureSemantic;

  while (episodes_ < max_episodes) {
    const int total = num * len;
    RolloutBatch batch;
    batch.observations.resize(obs_dim, total);
    batch.z_llm = Eigen::MatrixXd::Zero(n, total);
    batch.actions.assign(total, 0);
    batch.old_log_probs.assign(total, 0.0);
    batch.masks.assign(total, {});
    std::vector<double> rewards(total, 0.0);
    std::vector<double> values(total, 0.0);
    std::vector<char> dones(total, 0);
    double reward_sum = 0.0;

    for (int t = 0; t < len; ++t) {
      std::vector<EnvState> states;
      states.reserve(num);
      for (int i = 0; i < num; ++i) states.push_back(envs_[i].state());
      if (hooks.on_state) {
        bool stop = false;
        for (const auto& s : states) stop = hooks.on_state(s) || stop;
        if (stop) return false;
      }

      std::vector<std::vector<double>> z_llm;
      if (variant_ != Variant::kVanillaPpo) z_llm = prior_logits(states);

      Eigen::MatrixXd obs(obs_dim, num);
      for (int i = 0; i < num; ++i) {
        obs.col(i) = Eigen::Map<const Eigen::VectorXd>(
            states[i].normalized.data(), obs_dim);
      }
      Eigen::MatrixXd z;
      Eigen::MatrixXd v;
      if (learns) {
        z = params_.actor.forward(obs);
        v = params_.critic.forward(obs);
      }

      std::vector<VertexId> actions(num);
      for (int i = 0; i < num; ++i) {
        const int k = i * len + t;
        auto mask = action_mask(envs_[i], states[i]);
        std::vector<double> probs;
        if (variant_ == Variant::kPureSemantic) {
          probs = masked_softmax(z_llm[i], mask);
        } else {
          std::vector<double> zc(z.col(i).data(), z.col(i).data() + n);
          probs = variant_ == Variant::kSaPpo
                      ? fuse(zc, z_llm[i], config_.lambda_fusion, mask)
                      : masked_softmax(zc, mask);
          values[k] = v(0, i);
        }
        actions[i] = sample_action(probs, mask, sample_rng_);
        batch.observations.col(k) = obs.col(i);
        if (!z_llm.empty()) {
          batch.z_llm.col(k) =
              Eigen::Map<const Eigen::VectorXd>(z_llm[i].data(), n);
        }
        batch.actions[k] = actions[i];
        batch.old_log_probs[k] = std::log(probs[actions[i]]);
        batch.masks[k] = std::move(mask);
      }

      const auto transitions = envs_.step_batch(actions);
      for (int i = 0; i < num; ++i) {
        const int k = i * len + t;
        const Transition& tr = transitions[i];
        rewards[k] = tr.reward;
        dones[k] = tr.done;
        reward_sum += tr.reward;
        accumulate(running_[i], tr);
        if (tr.done) {
          EpisodeSummary s = finish(running_[i]);
          s.episode = ++episodes_;
          running_[i] = EpisodeSummary{};
          if (hooks.on_episode) hooks.on_episode(s);
        }
      }
    }

    if (!learns) continue;

    Eigen::MatrixXd last_obs(obs_dim, num);
    for (int i = 0; i < num; ++i) {
      last_obs.col(i) = Eigen::Map<const Eigen::VectorXd>(
          envs_[i].state().normalized.data(), obs_dim);
    }
    const Eigen::MatrixXd bootstrap = params_.critic.forward(last_obs);
    batch.advantages.assign(total, 0.0);
    batch.returns.assign(total, 0.0);
    for (int i = 0; i < num; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * len;
      const auto adv = gae_advantages(
          std::span(rewards).subspan(off, len), std::span(values).subspan(off, len),
          std::span(dones).subspan(off, len), bootstrap(0, i), config_.gamma,
          config_.gae_lambda);
      std::copy(adv.advantages.begin(), adv.advantages.end(),
                batch.advantages.begin() + off);
      std::copy(adv.returns.begin(), adv.returns.end(),
                batch.returns.begin() + off);
    }
    normalize_advantages(batch.advantages);

    UpdateRecord rec;
    rec.beta_kl = variant_ == Variant::kSaPpo ? current_beta(max_episodes) : 0.0;
    const UpdateStats stats =
        variant_ == Variant::kSaPpo
            ? sa_ppo_update(params_, adam_, batch, config_, rec.beta_kl, update_rng_)
            : ppo_update(params_, adam_, batch, config_, update_rng_);
    rec.update = ++updates_;
    rec.loss = stats.loss;
    rec.mean_reward = reward_sum / total;
    if (hooks.on_update) hooks.on_update(rec);
  }
  return true;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.params = params_;
  ck.adam = adam_;
  ck.map_hash = scenario_->graph().fingerprint();
  ck.config_hash = config_fingerprint(config_);
  ck.completed_updates = updates_;
  ck.completed_episodes = static_cast<std::uint64_t>(episodes_);
  return ck;
}

void Trainer::resume(const Checkpoint& ck) {
  ensure_compatible(ck, envs_[0].observation_size(), envs_[0].action_count());
  params_ = ck.params;
  adam_ = ck.adam.value_or(AdamState{});
  updates_ = ck.completed_updates;
  episodes_ = static_cast<long>(ck.completed_episodes);
  envs_.reset_all();
  running_.assign(envs_.size(), EpisodeSummary{});
  reseed();
}

PolicyRollout rollout_policy(Environment& env, const PolicyParameters* params,
                             Variant variant, Scorer* scorer, double lambda,
                             bool greedy, std::mt19937_64& rng) {
  if (variant != Variant::kPureSemantic && !params) {
    throw ContractViolation("policy rollout needs parameters");
  }
  if (variant != Variant::kVanillaPpo && !scorer) {
    throw ContractViolation("policy rollout needs a scorer");
  }
  const int n = env.action_count();
  PolicyRollout out;
  env.reset();
  while (true) {
    const EnvState s = env.state();
    const auto mask = action_mask(env, s);
    std::vector<double> z_llm(n, 0.0);
    if (variant != Variant::kVanillaPpo) z_llm = prior_for(*scorer, env, s);
    std::vector<double> probs;
    std::vector<double> z_ppo;
    double value = 0.0;
    if (variant == Variant::kPureSemantic) {
      probs = masked_softmax(z_llm, mask);
    } else {
      const auto fused = evaluate_policy(
          *params, s.normalized, z_llm,
          variant == Variant::kSaPpo ? lambda : 0.0, mask);
      probs = fused.fused_probs;
      z_ppo = fused.z_ppo;
      value = fused.value;
    }
    const int a = greedy ? greedy_action(probs, mask)
                         : sample_action(probs, mask, rng);
    Transition tr = env.step(a);
    tr.z_llm = std::move(z_llm);
    tr.z_ppo = std::move(z_ppo);
    tr.log_prob = std::log(probs[a]);
    tr.value = value;
    accumulate(out.summary, tr);
    const bool done = tr.done;
    out.transitions.push_back(std::move(tr));
    if (done) break;
  }
  out.summary = finish(out.summary);
  out.summary.episode = 1;
  return out;
}

CollectResult collect_states(std::shared_ptr<const Scenario> scenario,
                             TrainConfig config, std::size_t target,
                             long max_episodes) {
  if (target < 1) throw ConfigError("collect target must be >= 1");
  config.lambda_fusion = 0.0;
  config.beta_kl = 0.0;
  const RoadTopologyGraph& graph = scenario->graph();
  Trainer trainer(scenario, config, Variant::kVanillaPpo);
  CollectResult out;
  std::unordered_set<std::string> seen;
  TrainerHooks hooks;
  hooks.on_state = [&](const EnvState& s) {
    if (out.states.size() >= target) return true;
    ++out.visited;
    std::string key = serialize_state(s.raw, graph).input;
    if (seen.insert(key).second) out.states.push_back(std::move(key));
    return out.states.size() >= target;
  };
  trainer.run(max_episodes, hooks);
  out.episodes = trainer.completed_episodes();
  out.reached_target = out.states.size() >= target;
  return out;
}

}  // namespace uavrelay
