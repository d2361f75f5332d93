#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "../support/test_support.hpp"
#include "uavrelay/config.hpp"
#include "uavrelay/errors.hpp"
#include "uavrelay/pipeline.hpp"

using namespace uavrelay;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(UAVRELAY_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string small_config(const std::string& extra_scorer = "backend: oracle") {
  return std::string("map: ") + UAVRELAY_DATA_DIR + "/grid5x5.yaml\n" +
         "traffic:\n"
         "  profile:\n"
         "    seed: 3\n"
         "    slots: 40\n"
         "    base_rate: 0.3\n"
         "    hotspots:\n"
         "      - {edge: 14, multiplier: 2.0}\n"
         "episode:\n"
         "  horizon: 10\n"
         "train:\n"
         "  hidden: 16\n"
         "  rollout_length: 10\n"
         "  num_envs: 2\n"
         "  minibatch_size: 10\n"
         "  epochs_per_update: 2\n"
         "scorer:\n"
         "  " + extra_scorer + "\n"
         "seed: 4\n"
         "run:\n"
         "  variant: sa_ppo\n"
         "  episodes: 12\n"
         "  checkpoint_every: 2\n"
         "collect:\n"
         "  target: 40\n"
         "  max_episodes: 50\n"
         "eval:\n"
         "  slices:\n"
         "    - {name: early, start_slot: 1}\n"
         "    - {name: late, start_slot: 25, horizon: 5}\n"
         "compare:\n"
         "  seeds: [1, 2]\n"
         "  episodes: 12\n"
         "  window: 4\n";
}

fs::path write_config(const fs::path& dir, const std::string& name,
                      const std::string& text) {
  std::ofstream(dir / name) << text;
  return dir / name;
}

std::string config_error(const std::string& text) {
  try {
    parse_run_config(text, "/tmp/cfg/t.yaml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("run config parsing") {
  const auto c = parse_run_config(small_config(), "/tmp/cfg/run.yaml");
  CHECK(c.map_path == fs::path(UAVRELAY_DATA_DIR) / "grid5x5.yaml");
  REQUIRE(c.traffic_profile.has_value());
  CHECK(c.traffic_profile->slots == 40);
  CHECK(c.traffic_profile->hotspots.size() == 1);
  CHECK(c.episode.horizon == 10);
  CHECK(c.train.hidden == 16);
  CHECK(c.train.seed == 4);
  CHECK(c.episodes == 12);
  CHECK(c.eval_slices.size() == 2);
  CHECK(c.eval_slices[1].horizon == 5);
  CHECK(c.compare.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(c.output_dir == fs::path("/tmp/cfg/out"));
  // Defaults survive when sections are absent.
  CHECK(c.episode.alpha == 1.0);
  CHECK(c.train.gamma == 0.99);
  CHECK(c.scorer.batch_cap == 128);

  const auto rel = parse_run_config("map: maps/m.yaml\ntraffic: {replay: t.csv}\n",
                                    "/tmp/cfg/run.yaml");
  CHECK(rel.map_path == fs::path("/tmp/cfg/maps/m.yaml"));
  CHECK(rel.traffic_replay == fs::path("/tmp/cfg/t.csv"));
}

TEST_CASE("run config errors carry file and line") {
  const std::string base = "map: m.yaml\ntraffic: {replay: t.csv}\n";
  CHECK(config_error(base + "episode:\n  horizn: 5\n").find("t.yaml:4") !=
        std::string::npos);
  CHECK(config_error(base + "bogus: 1\n").find("t.yaml:3") != std::string::npos);
  CHECK(config_error(base + "episode:\n  horizon: -1\n").find("t.yaml:4") !=
        std::string::npos);
  CHECK(config_error(base + "run:\n  variant: dqn\n").find("t.yaml:4") !=
        std::string::npos);
  CHECK(config_error(base + "train:\n  hidden: lots\n").find("t.yaml:4") !=
        std::string::npos);
  CHECK_FALSE(config_error("traffic: {replay: t.csv}\n").empty());
  CHECK_FALSE(config_error("map: m.yaml\n").empty());
  CHECK_FALSE(config_error("map: m.yaml\ntraffic: {replay: t.csv, profile: {slots: 3}}\n")
                  .empty());
  CHECK_FALSE(config_error(base + "scorer: {backend: magic}\n").empty());
  CHECK_FALSE(config_error("map: [unclosed\n").empty());
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.yaml"), ConfigError);
}

TEST_CASE("atomic output") {
  const auto dir = testsupport::temp_dir("atomic");
  {
    AtomicOutput out(dir / "a.txt");
    out.stream() << "partial";
    CHECK(fs::exists(dir / "a.txt.tmp"));
  }
  CHECK_FALSE(fs::exists(dir / "a.txt"));
  CHECK_FALSE(fs::exists(dir / "a.txt.tmp"));
  {
    AtomicOutput out(dir / "a.txt");
    out.stream() << "done";
    out.commit();
  }
  CHECK(read_file(dir / "a.txt") == "done");
  write_file_atomic(dir / "b.txt", "x\n");
  CHECK(read_file(dir / "b.txt") == "x\n");
}

TEST_CASE("cli pipeline and exit codes") {
  const auto dir = testsupport::temp_dir("cli");
  const auto cfg = write_config(dir, "run.yaml", small_config());
  const std::string c = "'" + cfg.string() + "'";
  const auto out = [&](const std::string& name) { return dir / "out" / name; };

  CHECK(run_cli("map validate " UAVRELAY_DATA_DIR "/grid5x5.yaml") == 0);
  CHECK(run_cli("map validate " UAVRELAY_DATA_DIR "/reference_map.yaml") == 0);
  CHECK(run_cli("check-coverage " + c) == 0);

  REQUIRE(run_cli("collect " + c) == 0);
  CHECK(read_lines(out(kStatesFile)).size() == 40);

  REQUIRE(run_cli("build-sft " + c + " --states '" + out(kStatesFile).string() + "'") == 0);
  CHECK(read_lines(out(kSftFile)).size() == 40);

  REQUIRE(run_cli("train " + c) == 0);
  const auto train_rows = read_lines(out(kTrainCsv));
  CHECK(train_rows.front() == "update,loss,clip_loss,value_loss,entropy,kl,mean_reward");
  CHECK(train_rows.size() > 1);
  CHECK(read_lines(out(kEpisodesCsv)).size() == 13);
  CHECK(fs::exists(out(kCheckpointFile)));

  REQUIRE(run_cli("eval " + c + " --checkpoint '" + out(kCheckpointFile).string() + "'") == 0);
  const auto eval_rows = read_lines(out(kEvalCsv));
  CHECK(eval_rows.front() == "slice,slot,uav_vertex,action,reward,K,C,energy_J,flight_m");
  CHECK(eval_rows.size() == 1 + 10 + 5);
  CHECK(read_lines(out(kTrajectoryCsv)).front() == "slice,slot,uav_vertex,x,y");

  REQUIRE(run_cli("score-eval " + c + " --dataset '" + out(kSftFile).string() + "'") == 0);
  const auto rep = nlohmann::json::parse(read_file(out(kScoreEvalJson)));
  CHECK(rep["kendall_tau"].get<double>() == 1.0);

  SUBCASE("external scorer with faults and death") {
    const std::string stub = std::string(UAVRELAY_STUB) + " --table " + out(kSftFile).string();
    const auto faulty = write_config(
        dir, "faulty.yaml",
        small_config("{backend: external, command: \"" + stub + " --fault-every 4\"}"));
    const auto fdir = dir / "faulty_out";
    REQUIRE(run_cli("score-eval '" + faulty.string() + "' --output-dir '" + fdir.string() +
                    "' --dataset '" + out(kSftFile).string() + "'") == 0);
    const auto f = nlohmann::json::parse(read_file(fdir / kScoreEvalJson));
    CHECK(f["json_psr_schema"].get<double>() == 0.75);
    CHECK(f["json_psr_syntactic"].get<double>() == 0.75);

    const auto dying = write_config(
        dir, "dying.yaml",
        small_config("{backend: external, command: \"" + stub + " --die-after 5\"}"));
    CHECK(run_cli("score-eval '" + dying.string() + "' --dataset '" +
                  out(kSftFile).string() + "'") == 4);
    CHECK(run_cli("train '" + dying.string() + "' --output-dir '" +
                  (dir / "dying_out").string() + "'") == 4);
  }
  SUBCASE("config and usage errors exit 2") {
    CHECK(run_cli("train /nonexistent.yaml") == 2);
    const auto bad = write_config(dir, "bad.yaml", small_config() + "extra_key: 1\n");
    CHECK(run_cli("train '" + bad.string() + "'") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("") == 2);
    CHECK(run_cli("eval " + c + " --checkpoint /nonexistent.bin") == 2);
    const std::string disconnected =
        "nodes:\n  - {id: 0, x: 0, y: 0}\n  - {id: 1, x: 1, y: 0}\n"
        "  - {id: 2, x: 5, y: 0}\n  - {id: 3, x: 6, y: 0}\n"
        "edges:\n  - {id: 0, u: 0, v: 1}\n  - {id: 1, u: 2, v: 3}\n"
        "rsu: [0]\nuav_start: 1\n";
    std::ofstream(dir / "split.yaml") << disconnected;
    CHECK(run_cli("map validate '" + (dir / "split.yaml").string() + "'") == 2);
  }
}

TEST_CASE("train is deterministic and resumable") {
  const auto dir = testsupport::temp_dir("cli_train");
  const auto cfg = write_config(dir, "run.yaml", small_config());
  const std::string c = "'" + cfg.string() + "'";
  REQUIRE(run_cli("train " + c + " --output-dir '" + (dir / "a").string() + "'") == 0);
  REQUIRE(run_cli("train " + c + " --output-dir '" + (dir / "b").string() + "'") == 0);
  CHECK(read_file(dir / "a" / kTrainCsv) == read_file(dir / "b" / kTrainCsv));
  CHECK(read_file(dir / "a" / kEpisodesCsv) == read_file(dir / "b" / kEpisodesCsv));
  CHECK(read_file(dir / "a" / kCheckpointFile) == read_file(dir / "b" / kCheckpointFile));

  REQUIRE(run_cli("train " + c + " --seed 9 --output-dir '" + (dir / "c").string() + "'") == 0);
  CHECK(read_file(dir / "a" / kTrainCsv) != read_file(dir / "c" / kTrainCsv));

  // Continue the first run to 24 episodes from its checkpoint.
  auto longer = small_config();
  longer.replace(longer.find("  episodes: 12\n  checkpoint_every"), 14, "  episodes: 24\n");
  const auto cfg2 = write_config(dir, "longer.yaml", longer);
  const auto before = read_lines(dir / "a" / kTrainCsv);
  REQUIRE(run_cli("train '" + cfg2.string() + "' --output-dir '" + (dir / "a").string() +
                  "' --resume '" + (dir / "a" / kCheckpointFile).string() + "'") == 0);
  const auto after = read_lines(dir / "a" / kTrainCsv);
  CHECK(after.size() > before.size());
  CHECK(std::equal(before.begin(), before.end(), after.begin()));
  CHECK(read_lines(dir / "a" / kEpisodesCsv).size() == 25);
  const auto ck = checkpoint_load(dir / "a" / kCheckpointFile);
  CHECK(ck.completed_episodes >= 24);

  // A checkpoint from different training settings is refused.
  auto other = small_config();
  other.replace(other.find("hidden: 16"), 10, "hidden: 12");
  const auto cfg3 = write_config(dir, "other.yaml", other);
  CHECK(run_cli("train '" + cfg3.string() + "' --output-dir '" + (dir / "d").string() +
                "' --resume '" + (dir / "b" / kCheckpointFile).string() + "'") == 2);
}

TEST_CASE("compare command") {
  const auto dir = testsupport::temp_dir("cli_compare");
  const auto cfg = write_config(dir, "run.yaml", small_config());
  REQUIRE(run_cli("compare '" + cfg.string() + "'") == 0);
  const auto rows = read_lines(dir / "out" / kCompareCsv);
  CHECK(rows.front() == "variant,seed,episode,metric,value");
  CHECK(rows.size() > 100);
  const auto j = nlohmann::json::parse(read_file(dir / "out" / kCompareJson));
  CHECK(j.contains("median_flight_ratio"));
}
