#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "uavrelay/config.hpp"
#include "uavrelay/evalkit.hpp"

namespace uavrelay {

// Writes to "<path>.tmp" and renames over <path> on commit(). An
// uncommitted file is removed on destruction.
class AtomicOutput {
 public:
  explicit AtomicOutput(std::filesystem::path path);
  ~AtomicOutput();
  AtomicOutput(const AtomicOutput&) = delete;
  AtomicOutput& operator=(const AtomicOutput&) = delete;

  std::ostream& stream();
  void commit();

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::unique_ptr<std::ofstream> out_;
  bool committed_ = false;
};

void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content);

// Every command writes under config.output_dir and reports to `log`.
// Errors propagate as the exception types in errors.hpp.
void cmd_map_validate(const std::filesystem::path& map_path, std::ostream& log);
// True when the coverage radius is at least half the longest edge.
bool cmd_check_coverage(const RunConfig& config, std::ostream& log);
CollectResult cmd_collect(const RunConfig& config, std::ostream& log);
std::size_t cmd_build_sft(const RunConfig& config,
                          const std::filesystem::path& state_db,
                          std::ostream& log);
void cmd_train(const RunConfig& config,
               const std::optional<std::filesystem::path>& resume,
               std::ostream& log);
void cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint,
              std::ostream& log);
ScorerEvalReport cmd_score_eval(const RunConfig& config,
                                const std::filesystem::path& dataset, int k,
                                std::ostream& log);
ComparisonReport cmd_compare(const RunConfig& config, std::ostream& log);

// Output file names inside output_dir.
inline constexpr const char* kStatesFile = "states.jsonl";
inline constexpr const char* kSftFile = "sft.jsonl";
inline constexpr const char* kTrainCsv = "train.csv";
inline constexpr const char* kEpisodesCsv = "episodes.csv";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kEvalCsv = "eval.csv";
inline constexpr const char* kTrajectoryCsv = "trajectory.csv";
inline constexpr const char* kScoreEvalJson = "score_eval.json";
inline constexpr const char* kCompareCsv = "compare.csv";
inline constexpr const char* kCompareJson = "compare.json";

}  // namespace uavrelay
