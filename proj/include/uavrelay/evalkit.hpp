#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uavrelay/semantic.hpp"
#include "uavrelay/trainer.hpp"

namespace uavrelay {

// (C - D) / (C + D) over all index pairs, tied pairs excluded.
// nullopt when every pair is tied in x or y.
std::optional<double> kendall_tau(std::span<const double> x,
                                  std::span<const double> y);

// Indices of the k largest values, ties broken by ascending index.
std::vector<int> top_k_indices(std::span<const double> values, int k);
// Mean over samples of |top_k(pred) ∩ top_k(truth)| / k.
double top_k_hit_rate(const std::vector<std::vector<double>>& pred,
                      const std::vector<std::vector<double>>& truth, int k = 10);

struct PsrReport {
  long total = 0;
  long syntactic = 0;  // parses as JSON
  long schema = 0;     // object with a length-n digit string "scores"

  double syntactic_rate() const { return total ? double(syntactic) / total : 0.0; }
  double schema_rate() const { return total ? double(schema) / total : 0.0; }
};
PsrReport json_psr(const std::vector<std::string>& outputs, int n,
                   int score_star = kDefaultScoreStar);

struct ScorerEvalReport {
  double kendall_tau = 0.0;  // mean over samples with a defined tau
  long tau_undefined = 0;    // samples whose tau is not a value
  double hr_k = 0.0;
  int k = 10;
  PsrReport psr;
  long sample_count = 0;
};

// Scores every dataset input and compares against the dataset outputs.
ScorerEvalReport evaluate_scorer(const std::vector<SftRecord>& dataset,
                                 Scorer& scorer, int action_count, int k = 10,
                                 int batch_cap = kDefaultBatchCap);

// Mean of the last `window` values (all of them when shorter).
double trailing_mean(std::span<const double> values, std::size_t window);
// 1-based index of the first episode whose trailing `window` mean reaches
// threshold; only full windows count.
std::optional<long> episodes_to_threshold(std::span<const double> returns,
                                          double threshold,
                                          std::size_t window = 100);
// fraction of a plateau, measured downward so negative plateaus work:
// plateau - (1 - fraction) * |plateau|.
double threshold_from_plateau(double plateau, double fraction = 0.9);

struct VariantRun {
  Variant variant = Variant::kSaPpo;
  std::uint64_t seed = 0;
  std::vector<EpisodeSummary> episodes;
  bool failed = false;
  std::string failure;

  std::vector<double> returns() const;
};

struct ComparisonOptions {
  std::vector<Variant> variants{Variant::kSaPpo, Variant::kVanillaPpo,
                                Variant::kPureSemantic};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  long episodes = 1000;
  std::size_t window = 100;
  double threshold_fraction = 0.9;
  int batch_cap = kDefaultBatchCap;
};

struct SeedComparison {
  std::uint64_t seed = 0;
  double vanilla_plateau = 0.0;
  double threshold = 0.0;
  std::optional<long> sa_episodes;
  std::optional<long> vanilla_episodes;
  // sa_episodes / vanilla_episodes; infinity when SA-PPO never reaches it.
  std::optional<double> episode_ratio;
  double sa_flight = 0.0;    // mean over the final window
  double pure_flight = 0.0;  // mean over the final window
  std::optional<double> flight_ratio;
};

struct VariantSummary {
  Variant variant = Variant::kSaPpo;
  int runs = 0;
  int failures = 0;
  // Means over seeds of the final-window episode averages.
  double mean_return = 0.0;
  double mean_flight_m = 0.0;
  double mean_component = 0.0;
  double mean_largest = 0.0;
  double mean_fragments = 0.0;
};

struct ComparisonReport {
  std::vector<VariantRun> runs;
  std::vector<SeedComparison> seeds;
  std::vector<VariantSummary> variants;
  std::optional<double> median_episode_ratio;
  std::optional<double> median_flight_ratio;
};

// Trains every variant on every seed. Vanilla uses the base config with
// lambda_fusion = beta_kl = 0; a diverging run is recorded, not rethrown.
ComparisonReport run_comparison(std::shared_ptr<const Scenario> scenario,
                                const TrainConfig& base, Scorer& scorer,
                                const ComparisonOptions& options);

std::optional<double> median(std::vector<double> values);

// variant,seed,episode,metric,value
void write_comparison_csv(std::ostream& out, const ComparisonReport& report);
std::string comparison_json(const ComparisonReport& report,
                            const ComparisonOptions& options);

}  // namespace uavrelay
