#include "uavrelay/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "uavrelay/errors.hpp"

namespace uavrelay {
namespace {

class Doc {
 public:
  explicit Doc(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& msg) const {
    const int line = node.IsDefined() ? node.Mark().line + 1 : 0;
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + msg);
  }

  void only(const YAML::Node& map, std::initializer_list<const char*> keys,
            const char* where) const {
    if (!map.IsMap()) fail(map, std::string("'") + where + "' must be a mapping");
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& kv : map) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) {
        fail(kv.first, "unknown key '" + key + "' in " + where);
      }
    }
  }

  template <typename T>
  void get(const YAML::Node& map, const char* key, T& out) const {
    const YAML::Node node = map[key];
    if (!node) return;
    try {
      out = node.as<T>();
    } catch (const YAML::Exception&) {
      fail(node, std::string("'") + key + "' has the wrong type");
    }
  }

 private:
  std::string source_;
};

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

TrafficProfile read_profile(const Doc& doc, const YAML::Node& n) {
  doc.only(n, {"seed", "slots", "base_rate", "hotspots", "time_curve"},
           "traffic.profile");
  TrafficProfile p;
  doc.get(n, "seed", p.seed);
  doc.get(n, "slots", p.slots);
  doc.get(n, "base_rate", p.base_rate);
  if (const auto hs = n["hotspots"]) {
    if (!hs.IsSequence()) doc.fail(hs, "'hotspots' must be a sequence");
    for (const auto& h : hs) {
      doc.only(h, {"edge", "multiplier"}, "hotspot");
      HotspotEdge e;
      doc.get(h, "edge", e.edge);
      doc.get(h, "multiplier", e.multiplier);
      p.hotspots.push_back(e);
    }
  }
  if (const auto tc = n["time_curve"]) {
    if (!tc.IsSequence()) doc.fail(tc, "'time_curve' must be a sequence");
    for (const auto& s : tc) {
      doc.only(s, {"first_slot", "last_slot", "multiplier"}, "time segment");
      TimeSegment seg;
      doc.get(s, "first_slot", seg.first_slot);
      doc.get(s, "last_slot", seg.last_slot);
      doc.get(s, "multiplier", seg.multiplier);
      p.time_curve.push_back(seg);
    }
  }
  return p;
}

}  // namespace

RunConfig parse_run_config(const std::string& text,
                           const std::filesystem::path& source) {
  const Doc doc(source.string());
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source.string() + ":" + std::to_string(e.mark.line + 1) +
                      ": " + e.msg);
  }
  if (!root.IsMap()) throw ConfigError(source.string() + ":1: config must be a mapping");
  doc.only(root,
           {"map", "traffic", "channel", "energy", "episode", "train", "scorer",
            "run", "collect", "eval", "compare", "output_dir", "seed"},
           "config");
  const auto base = source.parent_path();

  RunConfig c;
  c.source = source;
  std::string s;
  if (!root["map"]) doc.fail(root, "missing 'map'");
  doc.get(root, "map", s);
  c.map_path = resolve(base, s);

  const auto traffic = root["traffic"];
  if (!traffic) doc.fail(root, "missing 'traffic'");
  doc.only(traffic, {"replay", "profile"}, "traffic");
  if (traffic["replay"] && traffic["profile"]) {
    doc.fail(traffic, "traffic needs exactly one of 'replay' or 'profile'");
  }
  if (traffic["replay"]) {
    doc.get(traffic, "replay", s);
    c.traffic_replay = resolve(base, s);
  } else if (traffic["profile"]) {
    c.traffic_profile = read_profile(doc, traffic["profile"]);
  } else {
    doc.fail(traffic, "traffic needs exactly one of 'replay' or 'profile'");
  }

  if (const auto n = root["channel"]) {
    doc.only(n, {"a", "b", "eta_los_db", "eta_nlos_db", "carrier_hz",
                 "tx_power_dbm", "antenna_gain_dbi", "threshold_dbm",
                 "altitude_m", "search_limit_m"},
             "channel");
    doc.get(n, "a", c.channel.a);
    doc.get(n, "b", c.channel.b);
    doc.get(n, "eta_los_db", c.channel.eta_los);
    doc.get(n, "eta_nlos_db", c.channel.eta_nlos);
    doc.get(n, "carrier_hz", c.channel.carrier_hz);
    doc.get(n, "tx_power_dbm", c.channel.tx_power_dbm);
    doc.get(n, "antenna_gain_dbi", c.channel.antenna_gain_dbi);
    doc.get(n, "threshold_dbm", c.channel.threshold_dbm);
    doc.get(n, "altitude_m", c.channel.altitude_m);
    doc.get(n, "search_limit_m", c.channel.search_limit_m);
  }
  if (const auto n = root["energy"]) {
    doc.only(n, {"hover_w", "comm_w", "fly_w", "speed_mps", "slot_s", "battery_j"},
             "energy");
    doc.get(n, "hover_w", c.energy.hover_w);
    doc.get(n, "comm_w", c.energy.comm_w);
    doc.get(n, "fly_w", c.energy.fly_w);
    doc.get(n, "speed_mps", c.energy.speed_mps);
    doc.get(n, "slot_s", c.energy.slot_s);
    doc.get(n, "battery_j", c.energy.battery_j);
  }
  if (const auto n = root["episode"]) {
    doc.only(n, {"horizon", "start_slot", "alpha", "beta_energy", "masking",
                 "violation_penalty"},
             "episode");
    doc.get(n, "horizon", c.episode.horizon);
    doc.get(n, "start_slot", c.episode.start_slot);
    if (c.episode.horizon < 1) doc.fail(n["horizon"], "horizon must be >= 1");
    if (c.episode.start_slot < 1) {
      doc.fail(n["start_slot"], "start_slot must be >= 1");
    }
    doc.get(n, "alpha", c.episode.alpha);
    doc.get(n, "beta_energy", c.episode.beta_energy);
    doc.get(n, "masking", c.episode.masking);
    doc.get(n, "violation_penalty", c.episode.violation_penalty);
  }
  if (const auto n = root["train"]) {
    doc.only(n, {"gamma", "gae_lambda", "clip_epsilon", "c1", "c2", "beta_kl",
                 "anneal_beta_kl", "lambda_fusion", "learning_rate",
                 "max_grad_norm", "minibatch_size", "epochs_per_update",
                 "rollout_length", "num_envs", "hidden", "ratio_on"},
             "train");
    auto& t = c.train;
    doc.get(n, "gamma", t.gamma);
    doc.get(n, "gae_lambda", t.gae_lambda);
    doc.get(n, "clip_epsilon", t.clip_epsilon);
    doc.get(n, "c1", t.c1);
    doc.get(n, "c2", t.c2);
    doc.get(n, "beta_kl", t.beta_kl);
    doc.get(n, "anneal_beta_kl", t.anneal_beta_kl);
    doc.get(n, "lambda_fusion", t.lambda_fusion);
    doc.get(n, "learning_rate", t.learning_rate);
    doc.get(n, "max_grad_norm", t.max_grad_norm);
    doc.get(n, "minibatch_size", t.minibatch_size);
    doc.get(n, "epochs_per_update", t.epochs_per_update);
    doc.get(n, "rollout_length", t.rollout_length);
    doc.get(n, "num_envs", t.num_envs);
    doc.get(n, "hidden", t.hidden);
    if (n["ratio_on"]) {
      std::string r;
      doc.get(n, "ratio_on", r);
      if (r == "fused") {
        t.ratio_on = RatioOn::kFused;
      } else if (r == "actor") {
        t.ratio_on = RatioOn::kActor;
      } else {
        doc.fail(n["ratio_on"], "ratio_on must be 'fused' or 'actor'");
      }
    }
    try {
      validate(t);
    } catch (const ConfigError& e) {
      doc.fail(n, e.what());
    }
  }
  if (const auto n = root["scorer"]) {
    doc.only(n, {"backend", "table", "command", "host", "port", "timeout_ms",
                 "transport", "batch_cap", "score_star"},
             "scorer");
    auto& sc = c.scorer;
    if (n["backend"]) {
      std::string b;
      doc.get(n, "backend", b);
      if (b == "oracle") {
        sc.backend = ScorerConfig::Backend::kOracle;
      } else if (b == "table") {
        sc.backend = ScorerConfig::Backend::kTable;
      } else if (b == "external") {
        sc.backend = ScorerConfig::Backend::kExternal;
      } else {
        doc.fail(n["backend"], "backend must be oracle, table or external");
      }
    }
    if (n["table"]) {
      doc.get(n, "table", s);
      sc.table = resolve(base, s);
    }
    if (n["transport"]) {
      std::string tr;
      doc.get(n, "transport", tr);
      if (tr == "process") {
        sc.endpoint.kind = ExternalEndpoint::Kind::kProcess;
      } else if (tr == "tcp") {
        sc.endpoint.kind = ExternalEndpoint::Kind::kTcp;
      } else {
        doc.fail(n["transport"], "transport must be 'process' or 'tcp'");
      }
    }
    doc.get(n, "command", sc.endpoint.command);
    doc.get(n, "host", sc.endpoint.host);
    doc.get(n, "port", sc.endpoint.port);
    long timeout = sc.endpoint.timeout.count();
    doc.get(n, "timeout_ms", timeout);
    if (timeout <= 0) doc.fail(n["timeout_ms"], "timeout_ms must be positive");
    sc.endpoint.timeout = std::chrono::milliseconds(timeout);
    doc.get(n, "batch_cap", sc.batch_cap);
    if (sc.batch_cap < 1) doc.fail(n, "batch_cap must be >= 1");
    doc.get(n, "score_star", sc.score_star);
    if (sc.score_star < 1 || sc.score_star > 9) {
      doc.fail(n, "score_star must be in [1, 9]");
    }
    if (sc.backend == ScorerConfig::Backend::kTable && sc.table.empty()) {
      doc.fail(n, "table backend needs 'table'");
    }
    if (sc.backend == ScorerConfig::Backend::kExternal &&
        sc.endpoint.kind == ExternalEndpoint::Kind::kProcess &&
        sc.endpoint.command.empty()) {
      doc.fail(n, "external process backend needs 'command'");
    }
  }
  if (root["output_dir"]) {
    doc.get(root, "output_dir", s);
    c.output_dir = resolve(base, s);
  } else {
    c.output_dir = base / "out";
  }
  if (root["seed"]) doc.get(root, "seed", c.train.seed);

  if (const auto n = root["run"]) {
    doc.only(n, {"variant", "episodes", "checkpoint_every"}, "run");
    if (n["variant"]) {
      doc.get(n, "variant", s);
      try {
        c.variant = parse_variant(s);
      } catch (const ConfigError& e) {
        doc.fail(n["variant"], e.what());
      }
    }
    doc.get(n, "episodes", c.episodes);
    doc.get(n, "checkpoint_every", c.checkpoint_every);
    if (c.episodes < 1) doc.fail(n, "episodes must be >= 1");
    if (c.checkpoint_every < 0) doc.fail(n, "checkpoint_every must be >= 0");
  }
  if (const auto n = root["collect"]) {
    doc.only(n, {"target", "max_episodes"}, "collect");
    doc.get(n, "target", c.collect_target);
    doc.get(n, "max_episodes", c.collect_max_episodes);
    if (c.collect_target < 1) doc.fail(n, "collect target must be >= 1");
  }
  if (const auto n = root["eval"]) {
    doc.only(n, {"greedy", "slices"}, "eval");
    doc.get(n, "greedy", c.eval_greedy);
    if (const auto sl = n["slices"]) {
      if (!sl.IsSequence()) doc.fail(sl, "'slices' must be a sequence");
      for (const auto& e : sl) {
        doc.only(e, {"name", "start_slot", "horizon"}, "eval slice");
        EvalSlice slice;
        doc.get(e, "name", slice.name);
        doc.get(e, "start_slot", slice.start_slot);
        doc.get(e, "horizon", slice.horizon);
        if (slice.name.empty()) doc.fail(e, "eval slice needs a name");
        c.eval_slices.push_back(slice);
      }
    }
  }
  if (const auto n = root["compare"]) {
    doc.only(n, {"seeds", "episodes", "window", "threshold_fraction", "variants"},
             "compare");
    auto& o = c.compare;
    if (n["seeds"]) {
      o.seeds.clear();
      doc.get(n, "seeds", o.seeds);
    }
    doc.get(n, "episodes", o.episodes);
    doc.get(n, "window", o.window);
    doc.get(n, "threshold_fraction", o.threshold_fraction);
    if (n["variants"]) {
      std::vector<std::string> names;
      doc.get(n, "variants", names);
      o.variants.clear();
      for (const auto& v : names) {
        try {
          o.variants.push_back(parse_variant(v));
        } catch (const ConfigError& e) {
          doc.fail(n["variants"], e.what());
        }
      }
    }
    if (o.seeds.empty() || o.variants.empty() || o.episodes < 1 || o.window < 1) {
      doc.fail(n, "compare needs seeds, variants, episodes >= 1 and window >= 1");
    }
  }
  c.compare.batch_cap = c.scorer.batch_cap;

  try {
    validate(c.channel);
    validate(c.energy);
  } catch (const ConfigError& e) {
    throw ConfigError(source.string() + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path);
}

LoadedRun load_run(const RunConfig& config, std::optional<EpisodeConfig> episode) {
  if (!std::filesystem::exists(config.map_path)) {
    throw ConfigError(config.source.string() + ": map file " +
                      config.map_path.string() + " does not exist");
  }
  LoadedRun run;
  run.map = load_map(config.map_path);
  TrafficSeries traffic;
  if (config.traffic_replay) {
    if (!std::filesystem::exists(*config.traffic_replay)) {
      throw ConfigError(config.source.string() + ": traffic file " +
                        config.traffic_replay->string() + " does not exist");
    }
    traffic = load_trajectories(*config.traffic_replay, run.map.graph);
  } else {
    validate_profile(*config.traffic_profile, run.map.graph);
    traffic = generate_traffic(*config.traffic_profile, run.map.graph);
  }
  run.scenario = make_scenario(run.map, std::move(traffic), config.energy,
                               episode.value_or(config.episode));
  return run;
}

std::unique_ptr<Scorer> make_scorer(const RunConfig& config,
                                    std::shared_ptr<const Scenario> scenario) {
  const int n = scenario->graph().vertex_count();
  switch (config.scorer.backend) {
    case ScorerConfig::Backend::kOracle:
      return std::make_unique<OracleScorer>(scenario, config.scorer.score_star);
    case ScorerConfig::Backend::kTable:
      return std::make_unique<TableScorer>(load_sft_dataset(config.scorer.table),
                                           n, config.scorer.score_star);
    case ScorerConfig::Backend::kExternal:
      return std::make_unique<ExternalScorer>(config.scorer.endpoint, n,
                                              config.scorer.score_star);
  }
  throw ConfigError("unknown scorer backend");
}

}  // namespace uavrelay
