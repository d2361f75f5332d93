#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uavrelay/env.hpp"
#include "uavrelay/evalkit.hpp"
#include "uavrelay/policy.hpp"
#include "uavrelay/radio.hpp"
#include "uavrelay/semantic.hpp"
#include "uavrelay/traffic.hpp"
#include "uavrelay/trainer.hpp"

namespace uavrelay {

struct ScorerConfig {
  enum class Backend { kOracle, kTable, kExternal } backend = Backend::kOracle;
  std::filesystem::path table;  // SFT JSONL for the table backend
  ExternalEndpoint endpoint;
  int batch_cap = kDefaultBatchCap;
  int score_star = kDefaultScoreStar;
};

struct EvalSlice {
  std::string name;
  int start_slot = 1;
  int horizon = 0;  // 0 keeps the episode horizon
};

struct RunConfig {
  std::filesystem::path source;  // the YAML file itself
  std::filesystem::path map_path;
  std::optional<std::filesystem::path> traffic_replay;
  std::optional<TrafficProfile> traffic_profile;
  ChannelParams channel;
  EnergyParams energy;
  EpisodeConfig episode;
  TrainConfig train;
  ScorerConfig scorer;
  std::filesystem::path output_dir = "out";

  Variant variant = Variant::kSaPpo;
  long episodes = 1000;
  int checkpoint_every = 10;  // updates; 0 disables periodic checkpoints

  std::size_t collect_target = 5000;
  long collect_max_episodes = 2000;

  std::vector<EvalSlice> eval_slices;
  bool eval_greedy = true;

  ComparisonOptions compare;
};

// Relative paths resolve against the config file's directory. Unknown keys
// and bad values are ConfigError with "<file>:<line>: message".
RunConfig parse_run_config(const std::string& text,
                           const std::filesystem::path& source);
RunConfig load_run_config(const std::filesystem::path& path);

struct LoadedRun {
  RoadMap map;
  std::shared_ptr<const Scenario> scenario;
};

// Loads map and traffic and builds the scenario; `episode` overrides the
// configured episode settings when given.
LoadedRun load_run(const RunConfig& config,
                   std::optional<EpisodeConfig> episode = {});

std::unique_ptr<Scorer> make_scorer(const RunConfig& config,
                                    std::shared_ptr<const Scenario> scenario);

}  // namespace uavrelay
