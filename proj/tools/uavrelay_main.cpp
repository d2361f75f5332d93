#include <CLI11.hpp>

#include <iostream>

#include "uavrelay/errors.hpp"
#include "uavrelay/pipeline.hpp"

using namespace uavrelay;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--output-dir", o.output_dir, "Override the output directory");
}

RunConfig load(const std::string& path, const Overrides& o) {
  RunConfig c = load_run_config(path);
  if (o.seed) c.train.seed = *o.seed;
  if (o.output_dir) c.output_dir = *o.output_dir;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV relay placement for vehicular networks with semantic priors"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  std::string states_path;
  std::string checkpoint_path;
  std::string dataset_path;
  std::optional<std::string> resume_path;
  int k = 10;
  std::string map_path;

  auto* collect = app.add_subcommand("collect", "Harvest distinct states with vanilla PPO exploration");
  collect->add_option("config", config_path, "Run config (YAML)")->required();
  add_overrides(collect, ov);

  auto* build_sft = app.add_subcommand("build-sft", "Score a state database into an SFT dataset");
  build_sft->add_option("config", config_path, "Run config (YAML)")->required();
  build_sft->add_option("--states", states_path, "State database (JSONL)")->required();
  add_overrides(build_sft, ov);

  auto* train = app.add_subcommand("train", "Train the configured variant");
  train->add_option("config", config_path, "Run config (YAML)")->required();
  train->add_option("--resume", resume_path, "Checkpoint to continue from");
  add_overrides(train, ov);

  auto* eval = app.add_subcommand("eval", "Run a frozen policy over the evaluation slices");
  eval->add_option("config", config_path, "Run config (YAML)")->required();
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  add_overrides(eval, ov);

  auto* score_eval = app.add_subcommand("score-eval", "Compare a scorer against an SFT dataset");
  score_eval->add_option("config", config_path, "Run config (YAML)")->required();
  score_eval->add_option("--dataset", dataset_path, "SFT dataset (JSONL)")->required();
  score_eval->add_option("--k", k, "Top-k for the hit rate")->check(CLI::PositiveNumber);
  add_overrides(score_eval, ov);

  auto* compare = app.add_subcommand("compare", "Run the variant comparison over several seeds");
  compare->add_option("config", config_path, "Run config (YAML)")->required();
  add_overrides(compare, ov);

  auto* coverage = app.add_subcommand("check-coverage", "Check the UAV coverage radius against the map");
  coverage->add_option("config", config_path, "Run config (YAML)")->required();
  add_overrides(coverage, ov);

  auto* map = app.add_subcommand("map", "Map utilities");
  map->require_subcommand(1);
  auto* map_validate = map->add_subcommand("validate", "Validate a map file");
  map_validate->add_option("map", map_path, "Map file (YAML)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    std::ostream& log = std::cout;
    if (*map_validate) {
      cmd_map_validate(map_path, log);
    } else if (*coverage) {
      if (!cmd_check_coverage(load(config_path, ov), log)) return 2;
    } else if (*collect) {
      cmd_collect(load(config_path, ov), log);
    } else if (*build_sft) {
      cmd_build_sft(load(config_path, ov), states_path, log);
    } else if (*train) {
      std::optional<std::filesystem::path> resume;
      if (resume_path) resume = *resume_path;
      cmd_train(load(config_path, ov), resume, log);
    } else if (*eval) {
      cmd_eval(load(config_path, ov), checkpoint_path, log);
    } else if (*score_eval) {
      cmd_score_eval(load(config_path, ov), dataset_path, k, log);
    } else if (*compare) {
      cmd_compare(load(config_path, ov), log);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const StructuralError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const TransportError& e) {
    std::cerr << "scorer transport error: " << e.what() << '\n';
    return 4;
  } catch (const RuntimeFailure& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
