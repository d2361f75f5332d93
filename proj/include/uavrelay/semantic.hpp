#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uavrelay/env.hpp"

namespace uavrelay {

inline constexpr int kDefaultScoreStar = 9;
inline constexpr int kDefaultBatchCap = 128;

// Task prompt shipped with every serialized state.
extern const char* const kSystemPromptVersion;
const std::string& system_prompt();

struct SerializedState {
  std::string instruction;
  // {"vehicle_per_edge":[...],"node_weight":[...]} with no whitespace.
  std::string input;

  bool operator==(const SerializedState&) const = default;
};

SerializedState serialize_state(std::span<const int> raw_state,
                                const RoadTopologyGraph& graph);
// Inverse of serialize_state's input text; StructuralError on bad input.
std::vector<int> parse_state_input(const std::string& input,
                                   const RoadTopologyGraph& graph);

struct ActionScoreVector {
  std::vector<int> scores;
  int score_star = kDefaultScoreStar;

  std::string digits() const;
  bool operator==(const ActionScoreVector&) const = default;
};

// round((r - min) / (max - min) * score_star), halves away from zero;
// products within 1e-9 of a half step count as the half step. A flat r
// maps every action to round(score_star / 2).
ActionScoreVector discretize_scores(std::span<const double> rewards,
                                    int score_star = kDefaultScoreStar);
ActionScoreVector neutral_scores(int n, int score_star = kDefaultScoreStar);

// Immediate reward of every action from `state` by restore + step.
// Infeasible actions (with masking on) get -beta_energy.
std::vector<double> score_actions(Environment& env, const EnvState& state);

// {"scores":"<digits>"}
std::string format_score_output(const ActionScoreVector& scores);
// nullopt unless text is a JSON object whose "scores" is a digit string of
// length n.
std::optional<ActionScoreVector> parse_score_output(
    const std::string& text, int n, int score_star = kDefaultScoreStar);

struct SftRecord {
  std::string instruction;
  std::string input;
  std::string output;

  bool operator==(const SftRecord&) const = default;
};

std::string format_sft_record(const SftRecord& record);
SftRecord parse_sft_record(const std::string& line);
std::vector<SftRecord> load_sft_dataset(const std::filesystem::path& path);

// State database: one serialized input per line (JSONL).
std::vector<std::string> load_state_db(const std::filesystem::path& path);
void save_state_db(const std::vector<std::string>& inputs,
                   const std::filesystem::path& path);

// Scores every state with the env oracle and writes JSONL atomically.
// Returns the number of records written.
std::size_t build_sft_dataset(const std::vector<std::string>& state_db,
                              std::shared_ptr<const Scenario> scenario,
                              const std::filesystem::path& out_path);
std::vector<SftRecord> make_sft_records(
    const std::vector<std::string>& state_db,
    std::shared_ptr<const Scenario> scenario);

// ---- scorer backends -------------------------------------------------------

enum class ScoreStatus { kOk, kMiss, kParseError };
const char* to_string(ScoreStatus status);

struct ScoreResult {
  ActionScoreVector scores;
  ScoreStatus status = ScoreStatus::kOk;
  std::string raw_output;  // the text the backend produced for this state
};

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<ScoreResult> score_batch(
      std::span<const SerializedState> states) = 0;
  virtual std::string name() const = 0;
};

// Ground truth: score_actions + discretize_scores per state.
class OracleScorer : public Scorer {
 public:
  explicit OracleScorer(std::shared_ptr<const Scenario> scenario,
                        int score_star = kDefaultScoreStar);
  std::vector<ScoreResult> score_batch(
      std::span<const SerializedState> states) override;
  std::vector<ScoreResult> score_batch_serial(
      std::span<const SerializedState> states);
  std::string name() const override { return "oracle"; }

 private:
  ScoreResult score_one(const SerializedState& state) const;
  std::shared_ptr<const Scenario> scenario_;
  int score_star_;
};

// Lookup by exact input bytes; misses fall back to neutral scores.
class TableScorer : public Scorer {
 public:
  TableScorer(const std::vector<SftRecord>& records, int action_count,
              int score_star = kDefaultScoreStar);
  std::vector<ScoreResult> score_batch(
      std::span<const SerializedState> states) override;
  std::string name() const override { return "table"; }

 private:
  std::vector<std::pair<std::string, std::string>> table_;  // sorted by input
  int action_count_;
  int score_star_;
};

// Newline-delimited JSON over a child process's stdio or a TCP socket.
// Request:  {"id":k,"instruction":...,"input":...}
// Response: {"id":k,"output":...}, one per request, in request order.
struct ExternalEndpoint {
  enum class Kind { kProcess, kTcp } kind = Kind::kProcess;
  std::string command;  // /bin/sh -c command
  std::string host = "127.0.0.1";
  int port = 0;
  std::chrono::milliseconds timeout{30000};  // per batch
};

class ExternalScorer : public Scorer {
 public:
  ExternalScorer(ExternalEndpoint endpoint, int action_count,
                 int score_star = kDefaultScoreStar);
  ~ExternalScorer() override;
  ExternalScorer(const ExternalScorer&) = delete;
  ExternalScorer& operator=(const ExternalScorer&) = delete;

  std::vector<ScoreResult> score_batch(
      std::span<const SerializedState> states) override;
  std::string name() const override { return "external"; }

 private:
  class Channel;
  std::unique_ptr<Channel> channel_;
  int action_count_;
  int score_star_;
  long next_id_ = 0;
};

// Splits requests into backend batches of at most `batch_cap` and keeps
// status counters.
class ScorerDispatcher {
 public:
  explicit ScorerDispatcher(Scorer& backend, int batch_cap = kDefaultBatchCap);

  std::vector<ScoreResult> score(std::span<const SerializedState> states);
  Scorer& backend() { return backend_; }

  long ok_count() const { return ok_; }
  long miss_count() const { return miss_; }
  long parse_error_count() const { return parse_errors_; }
  long batches() const { return batches_; }

 private:
  Scorer& backend_;
  int batch_cap_;
  long ok_ = 0;
  long miss_ = 0;
  long parse_errors_ = 0;
  long batches_ = 0;
};

}  // namespace uavrelay
