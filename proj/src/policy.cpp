#include "uavrelay/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "uavrelay/errors.hpp"

namespace uavrelay {

void validate(const TrainConfig& c) {
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
  if (!(c.gae_lambda >= 0.0 && c.gae_lambda <= 1.0)) {
    throw ConfigError("gae_lambda must be in [0, 1]");
  }
  if (!(c.clip_epsilon > 0.0)) throw ConfigError("clip_epsilon must be > 0");
  if (!(c.lambda_fusion >= 0.0)) throw ConfigError("lambda_fusion must be >= 0");
  if (!(c.beta_kl >= 0.0)) throw ConfigError("beta_kl must be >= 0");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (c.minibatch_size < 1 || c.epochs_per_update < 1 || c.rollout_length < 1 ||
      c.num_envs < 1 || c.hidden < 1) {
    throw ConfigError("batch sizes, epochs, envs and hidden width must be >= 1");
  }
}

std::uint64_t config_fingerprint(const TrainConfig& c) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
      h ^= (word >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  auto mixd = [&mix](double d) { mix(std::bit_cast<std::uint64_t>(d)); };
  mixd(c.gamma);
  mixd(c.gae_lambda);
  mixd(c.clip_epsilon);
  mixd(c.c1);
  mixd(c.c2);
  mixd(c.beta_kl);
  mix(c.anneal_beta_kl);
  mixd(c.lambda_fusion);
  mixd(c.learning_rate);
  mixd(c.max_grad_norm);
  mix(static_cast<std::uint64_t>(c.minibatch_size));
  mix(static_cast<std::uint64_t>(c.epochs_per_update));
  mix(static_cast<std::uint64_t>(c.rollout_length));
  mix(static_cast<std::uint64_t>(c.num_envs));
  mix(static_cast<std::uint64_t>(c.hidden));
  mix(static_cast<std::uint64_t>(c.ratio_on));
  return h;
}

PolicyParameters init_policy(int observation_size, int action_count,
                             int hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PolicyParameters p;
  p.actor = Mlp({observation_size, hidden, hidden, action_count}, rng, 0.01);
  p.critic = Mlp({observation_size, hidden, hidden, 1}, rng, 1.0);
  return p;
}

std::vector<double> normalize_llm_logits(std::span<const int> scores) {
  const double n = static_cast<double>(scores.size());
  std::vector<double> z(scores.size(), 0.0);
  if (scores.empty()) return z;
  double mean = 0.0;
  for (int s : scores) mean += s;
  mean /= n;
  double var = 0.0;
  for (int s : scores) var += (s - mean) * (s - mean);
  const double sd = std::sqrt(var / n);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    z[i] = (scores[i] - mean) / (sd + 1e-7);
  }
  return z;
}

namespace {

constexpr double kMaskedLogit = -1e9;

// Log-sum-exp over unmasked entries.
double masked_lse(std::span<const double> logits, std::span<const char> mask) {
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (mask[j]) top = std::max(top, logits[j]);
  }
  if (!std::isfinite(top) && top < 0) {
    throw ContractViolation("every action is masked");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (mask[j]) sum += std::exp(logits[j] - top);
  }
  return top + std::log(sum);
}

}  // namespace

std::vector<double> masked_softmax(std::span<const double> logits,
                                   std::span<const char> mask) {
  if (logits.size() != mask.size()) {
    throw ContractViolation("logits and mask differ in length");
  }
  // Masked logits are pinned to -1e9, which exp() flushes to exactly 0.
  const double lse = masked_lse(logits, mask);
  std::vector<double> p(logits.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    p[j] = std::exp((mask[j] ? logits[j] : kMaskedLogit) - lse);
  }
  return p;
}

std::vector<double> fuse(std::span<const double> z_ppo,
                         std::span<const double> z_llm, double lambda,
                         std::span<const char> mask) {
  if (z_ppo.size() != z_llm.size()) {
    throw ContractViolation("fuse: logit vectors differ in length");
  }
  std::vector<double> f(z_ppo.size());
  for (std::size_t j = 0; j < f.size(); ++j) f[j] = z_ppo[j] + lambda * z_llm[j];
  return masked_softmax(f, mask);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  double kl = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) kl += p[j] * (std::log(p[j]) - std::log(q[j]));
  }
  return kl;
}

FusedPolicyOutput evaluate_policy(const PolicyParameters& params,
                                  std::span<const double> observation,
                                  std::span<const double> z_llm, double lambda,
                                  std::span<const char> mask) {
  const Eigen::MatrixXd obs = Eigen::Map<const Eigen::VectorXd>(
      observation.data(), static_cast<Eigen::Index>(observation.size()));
  const Eigen::MatrixXd logits = params.actor.forward(obs);
  FusedPolicyOutput out;
  out.z_ppo.assign(logits.data(), logits.data() + logits.size());
  out.z_llm.assign(z_llm.begin(), z_llm.end());
  out.mask.assign(mask.begin(), mask.end());
  out.fused_probs = fuse(out.z_ppo, out.z_llm, lambda, mask);
  out.value = params.critic.forward(obs)(0, 0);
  return out;
}

AdvantageResult gae_advantages(std::span<const double> rewards,
                               std::span<const double> values,
                               std::span<const char> dones,
                               double bootstrap_value, double gamma,
                               double gae_lambda) {
  const std::size_t n = rewards.size();
  AdvantageResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_value = i + 1 < n ? values[i + 1] : bootstrap_value;
    const double live = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * live - values[i];
    running = delta + gamma * gae_lambda * live * running;
    out.advantages[i] = running;
    out.returns[i] = running + values[i];
  }
  return out;
}

void normalize_advantages(std::span<double> advantages) {
  if (advantages.size() < 2) return;
  const double n = static_cast<double>(advantages.size());
  const double mean =
      std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : advantages) a = (a - mean) / (sd + 1e-8);
}

namespace {

template <bool kWithPrior>
LossTerms loss_impl(const PolicyParameters& params, const RolloutBatch& batch,
                    std::span<const std::size_t> indices,
                    const TrainConfig& config, double beta_kl,
                    std::span<double> grad) {
  const int b = static_cast<int>(indices.size());
  const int obs_dim = params.actor.input_size();
  const int n = params.actor.output_size();
  Eigen::MatrixXd obs(obs_dim, b);
  for (int i = 0; i < b; ++i) obs.col(i) = batch.observations.col(indices[i]);

  Mlp::Tape actor_tape;
  Mlp::Tape critic_tape;
  const bool want_grad = !grad.empty();
  const Eigen::MatrixXd z = params.actor.forward(obs, want_grad ? &actor_tape : nullptr);
  const Eigen::MatrixXd v = params.critic.forward(obs, want_grad ? &critic_tape : nullptr);

  Eigen::MatrixXd g_logits = Eigen::MatrixXd::Zero(n, b);
  Eigen::MatrixXd g_value = Eigen::MatrixXd::Zero(1, b);
  const double inv_b = 1.0 / b;
  LossTerms terms;
  std::vector<double> logits(n);
  std::vector<double> log_pi(n);
  std::vector<double> pi(n);
  std::vector<double> log_actor(n);
  std::vector<double> actor_pi(n);
  std::vector<double> log_q(n);

  for (int i = 0; i < b; ++i) {
    const std::size_t k = indices[i];
    const auto& mask = batch.masks[k];
    for (int j = 0; j < n; ++j) {
      if constexpr (kWithPrior) {
        logits[j] = z(j, i) + config.lambda_fusion * batch.z_llm(j, k);
      } else {
        logits[j] = z(j, i);
      }
    }
    const double lse = masked_lse(logits, mask);
    double entropy = 0.0;
    for (int j = 0; j < n; ++j) {
      if (mask[j]) {
        log_pi[j] = logits[j] - lse;
        pi[j] = std::exp(log_pi[j]);
        entropy -= pi[j] * log_pi[j];
      } else {
        log_pi[j] = 0.0;
        pi[j] = 0.0;
      }
    }

    // Distribution whose ratio enters the clipped surrogate.
    const std::vector<double>* ratio_pi = &pi;
    const std::vector<double>* ratio_log_pi = &log_pi;
    if (kWithPrior && config.ratio_on == RatioOn::kActor) {
      std::vector<double> zcol(n);
      for (int j = 0; j < n; ++j) zcol[j] = z(j, i);
      const double alse = masked_lse(zcol, mask);
      for (int j = 0; j < n; ++j) {
        log_actor[j] = mask[j] ? zcol[j] - alse : 0.0;
        actor_pi[j] = mask[j] ? std::exp(log_actor[j]) : 0.0;
      }
      ratio_pi = &actor_pi;
      ratio_log_pi = &log_actor;
    }

    const int a = batch.actions[k];
    const double adv = batch.advantages[k];
    const double ratio = std::exp((*ratio_log_pi)[a] - batch.old_log_probs[k]);
    const double surr1 = ratio * adv;
    const double clipped = std::clamp(ratio, 1.0 - config.clip_epsilon,
                                      1.0 + config.clip_epsilon);
    const double surr2 = clipped * adv;
    const double clip_obj = std::min(surr1, surr2);
    // d(-clip_obj)/d(log pi_a); zero when the clipped branch is active.
    const double d_logp = surr1 <= surr2 ? -adv * ratio : 0.0;

    const double value_err = v(0, i) - batch.returns[k];
    double sample_loss = -clip_obj + config.c1 * value_err * value_err -
                         config.c2 * entropy;

    double kl = 0.0;
    if constexpr (kWithPrior) {
      std::vector<double> prior(n);
      for (int j = 0; j < n; ++j) prior[j] = batch.z_llm(j, k);
      const double qlse = masked_lse(prior, mask);
      for (int j = 0; j < n; ++j) {
        log_q[j] = mask[j] ? prior[j] - qlse : 0.0;
        if (mask[j]) kl += pi[j] * (log_pi[j] - log_q[j]);
      }
      sample_loss += beta_kl * kl;
    }

    terms.total += sample_loss * inv_b;
    terms.clip += clip_obj * inv_b;
    terms.value += value_err * value_err * inv_b;
    terms.entropy += entropy * inv_b;
    terms.kl += kl * inv_b;

    if (!want_grad) continue;
    for (int j = 0; j < n; ++j) {
      if (!mask[j]) continue;
      const double onehot = j == a ? 1.0 : 0.0;
      double g = d_logp * (onehot - (*ratio_pi)[j]);
      g -= config.c2 * (-pi[j] * (log_pi[j] + entropy));
      if constexpr (kWithPrior) {
        g += beta_kl * (pi[j] * (log_pi[j] - log_q[j] - kl));
      }
      g_logits(j, i) = g * inv_b;
    }
    g_value(0, i) = config.c1 * 2.0 * value_err * inv_b;
  }

  if (want_grad) {
    const std::size_t na = params.actor.parameter_count();
    std::fill(grad.begin(), grad.end(), 0.0);
    params.actor.backward(actor_tape, g_logits, grad.subspan(0, na));
    params.critic.backward(critic_tape, g_value, grad.subspan(na));
  }
  return terms;
}

template <bool kWithPrior>
UpdateStats update_impl(PolicyParameters& params, AdamState& adam,
                        const RolloutBatch& batch, const TrainConfig& config,
                        double beta_kl, std::mt19937_64& rng) {
  const PolicyParameters backup = params;
  const AdamState adam_backup = adam;
  const std::size_t na = params.actor.parameter_count();
  const std::size_t nc = params.critic.parameter_count();
  std::vector<double> grad(na + nc);
  std::vector<double> flat(na + nc);
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  UpdateStats stats;
  for (int epoch = 0; epoch < config.epochs_per_update; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += config.minibatch_size) {
      const std::size_t len =
          std::min<std::size_t>(config.minibatch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      const LossTerms t =
          loss_impl<kWithPrior>(params, batch, idx, config, beta_kl, grad);
      if (!std::isfinite(t.total)) {
        params = backup;
        adam = adam_backup;
        std::ostringstream msg;
        msg << "non-finite loss in update " << params.version << " (epoch "
            << epoch << ", minibatch at " << start << "): total=" << t.total
            << " clip=" << t.clip << " value=" << t.value
            << " entropy=" << t.entropy << " kl=" << t.kl;
        throw RuntimeFailure(msg.str());
      }
      if (config.max_grad_norm > 0) {
        double norm = 0.0;
        for (double g : grad) norm += g * g;
        norm = std::sqrt(norm);
        if (norm > config.max_grad_norm) {
          const double scale = config.max_grad_norm / (norm + 1e-12);
          for (double& g : grad) g *= scale;
        }
      }
      auto actor_p = params.actor.parameters();
      auto critic_p = params.critic.parameters();
      std::copy(actor_p.begin(), actor_p.end(), flat.begin());
      std::copy(critic_p.begin(), critic_p.end(), flat.begin() + na);
      adam_step(flat, grad, adam, config.learning_rate);
      std::copy(flat.begin(), flat.begin() + na, actor_p.begin());
      std::copy(flat.begin() + na, flat.end(), critic_p.begin());

      stats.loss.total += t.total;
      stats.loss.clip += t.clip;
      stats.loss.value += t.value;
      stats.loss.entropy += t.entropy;
      stats.loss.kl += t.kl;
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    const double inv = 1.0 / stats.minibatches;
    stats.loss.total *= inv;
    stats.loss.clip *= inv;
    stats.loss.value *= inv;
    stats.loss.entropy *= inv;
    stats.loss.kl *= inv;
  }
  ++params.version;
  return stats;
}

}  // namespace

LossTerms sa_ppo_loss(const PolicyParameters& params, const RolloutBatch& batch,
                      std::span<const std::size_t> indices,
                      const TrainConfig& config, double beta_kl,
                      std::span<double> grad) {
  return loss_impl<true>(params, batch, indices, config, beta_kl, grad);
}

LossTerms ppo_loss(const PolicyParameters& params, const RolloutBatch& batch,
                   std::span<const std::size_t> indices,
                   const TrainConfig& config, std::span<double> grad) {
  return loss_impl<false>(params, batch, indices, config, 0.0, grad);
}

UpdateStats sa_ppo_update(PolicyParameters& params, AdamState& adam,
                          const RolloutBatch& batch, const TrainConfig& config,
                          double beta_kl, std::mt19937_64& rng) {
  return update_impl<true>(params, adam, batch, config, beta_kl, rng);
}

UpdateStats ppo_update(PolicyParameters& params, AdamState& adam,
                       const RolloutBatch& batch, const TrainConfig& config,
                       std::mt19937_64& rng) {
  return update_impl<false>(params, adam, batch, config, 0.0, rng);
}

namespace {

constexpr char kMagic[8] = {'U', 'A', 'V', 'R', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double d) { u64(std::bit_cast<std::uint64_t>(d)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw ConfigError("checkpoint " + source_ + " is truncated");
    }
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

void write_shape(Writer& w, const Mlp& net) {
  w.u32(static_cast<std::uint32_t>(net.sizes().size()));
  for (int s : net.sizes()) w.u32(static_cast<std::uint32_t>(s));
}

std::vector<int> read_shape(Reader& r) {
  const std::uint32_t count = r.u32();
  if (count < 2 || count > 64) throw ConfigError("checkpoint has a bad layer count");
  std::vector<int> sizes(count);
  for (auto& s : sizes) {
    s = static_cast<int>(r.u32());
    if (s < 1) throw ConfigError("checkpoint has a zero-width layer");
  }
  return sizes;
}

}  // namespace

void checkpoint_save(const Checkpoint& ck, const std::filesystem::path& path) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(ck.map_hash);
  w.u64(ck.config_hash);
  w.u64(ck.params.version);
  w.u64(ck.completed_updates);
  w.u64(ck.completed_episodes);
  write_shape(w, ck.params.actor);
  write_shape(w, ck.params.critic);
  w.u8(ck.adam ? 1 : 0);
  for (double d : ck.params.actor.parameters()) w.f64(d);
  for (double d : ck.params.critic.parameters()) w.f64(d);
  if (ck.adam) {
    const std::size_t total =
        ck.params.actor.parameter_count() + ck.params.critic.parameter_count();
    if (ck.adam->m.size() != total || ck.adam->v.size() != total) {
      throw ContractViolation("adam state does not match parameter count");
    }
    w.u64(ck.adam->steps);
    for (double d : ck.adam->m) w.f64(d);
    for (double d : ck.adam->v) w.f64(d);
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write checkpoint " + tmp);
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw RuntimeFailure("short write to checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint checkpoint_load(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_map_hash,
                           std::optional<std::uint64_t> expected_config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());
  for (char c : kMagic) {
    if (static_cast<char>(r.u8()) != c) {
      throw ConfigError(path.string() + " is not a checkpoint file");
    }
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint format version " + std::to_string(version) +
                      " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.map_hash = r.u64();
  ck.config_hash = r.u64();
  if (expected_map_hash && *expected_map_hash != ck.map_hash) {
    throw ConfigError("checkpoint was trained on a different map");
  }
  if (expected_config_hash && *expected_config_hash != ck.config_hash) {
    throw ConfigError("checkpoint was trained with a different config");
  }
  ck.params.version = r.u64();
  ck.completed_updates = r.u64();
  ck.completed_episodes = r.u64();
  const auto actor_shape = read_shape(r);
  const auto critic_shape = read_shape(r);
  const bool has_adam = r.u8() != 0;

  std::mt19937_64 dummy(0);
  ck.params.actor = Mlp(actor_shape, dummy, 1.0);
  ck.params.critic = Mlp(critic_shape, dummy, 1.0);
  const std::size_t total =
      ck.params.actor.parameter_count() + ck.params.critic.parameter_count();
  r.need(total * 8);
  for (double& d : ck.params.actor.parameters()) d = r.f64();
  for (double& d : ck.params.critic.parameters()) d = r.f64();
  if (has_adam) {
    AdamState adam;
    adam.steps = r.u64();
    r.need(total * 16);
    adam.m.resize(total);
    adam.v.resize(total);
    for (double& d : adam.m) d = r.f64();
    for (double& d : adam.v) d = r.f64();
    ck.adam = std::move(adam);
  }
  if (!r.at_end()) throw ConfigError("checkpoint has trailing bytes");
  return ck;
}

void ensure_compatible(const Checkpoint& ck, int observation_size,
                       int action_count) {
  if (ck.params.actor.input_size() != observation_size ||
      ck.params.critic.input_size() != observation_size ||
      ck.params.actor.output_size() != action_count ||
      ck.params.critic.output_size() != 1) {
    throw ConfigError(
        "checkpoint dimensions (obs " +
        std::to_string(ck.params.actor.input_size()) + ", actions " +
        std::to_string(ck.params.actor.output_size()) +
        ") do not match the map (obs " + std::to_string(observation_size) +
        ", actions " + std::to_string(action_count) + ")");
  }
}

}  // namespace uavrelay
