#include "uavrelay/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>

#include "uavrelay/errors.hpp"

namespace uavrelay {

std::optional<double> kendall_tau(std::span<const double> x,
                                  std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ContractViolation("kendall_tau needs equal lengths >= 2");
  }
  long concordant = 0;
  long discordant = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double s = (x[i] - x[j]) * (y[i] - y[j]);
      if (s > 0) {
        ++concordant;
      } else if (s < 0) {
        ++discordant;
      }
    }
  }
  if (concordant + discordant == 0) return std::nullopt;
  return static_cast<double>(concordant - discordant) /
         static_cast<double>(concordant + discordant);
}

std::vector<int> top_k_indices(std::span<const double> values, int k) {
  if (k < 1 || k > static_cast<int>(values.size())) {
    throw ContractViolation("top-k needs 1 <= k <= n");
  }
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return values[a] > values[b]; });
  idx.resize(k);
  return idx;
}

double top_k_hit_rate(const std::vector<std::vector<double>>& pred,
                      const std::vector<std::vector<double>>& truth, int k) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw ContractViolation("hit rate needs matching non-empty sample lists");
  }
  double sum = 0.0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    auto a = top_k_indices(pred[s], k);
    auto b = top_k_indices(truth[s], k);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<int> common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                          std::back_inserter(common));
    sum += static_cast<double>(common.size()) / k;
  }
  return sum / static_cast<double>(pred.size());
}

PsrReport json_psr(const std::vector<std::string>& outputs, int n,
                   int score_star) {
  PsrReport r;
  for (const auto& text : outputs) {
    ++r.total;
    if (!nlohmann::json::accept(text)) continue;
    ++r.syntactic;
    if (parse_score_output(text, n, score_star)) ++r.schema;
  }
  return r;
}

namespace {

std::vector<double> as_doubles(const std::vector<int>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

ScorerEvalReport evaluate_scorer(const std::vector<SftRecord>& dataset,
                                 Scorer& scorer, int action_count, int k,
                                 int batch_cap) {
  if (dataset.empty()) throw ConfigError("scorer evaluation needs samples");
  std::vector<SerializedState> states;
  std::vector<std::vector<double>> truth;
  states.reserve(dataset.size());
  truth.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto parsed = parse_score_output(dataset[i].output, action_count);
    if (!parsed) {
      throw ConfigError("dataset record " + std::to_string(i + 1) +
                        " has an invalid output");
    }
    truth.push_back(as_doubles(parsed->scores));
    states.push_back({dataset[i].instruction, dataset[i].input});
  }
  ScorerDispatcher dispatcher(scorer, batch_cap);
  const auto results = dispatcher.score(states);

  ScorerEvalReport rep;
  rep.k = k;
  rep.sample_count = static_cast<long>(dataset.size());
  std::vector<std::vector<double>> pred;
  std::vector<std::string> raw;
  pred.reserve(results.size());
  double tau_sum = 0.0;
  long tau_count = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    pred.push_back(as_doubles(results[i].scores.scores));
    raw.push_back(results[i].raw_output);
    if (const auto tau = kendall_tau(pred.back(), truth[i])) {
      tau_sum += *tau;
      ++tau_count;
    } else {
      ++rep.tau_undefined;
    }
  }
  rep.kendall_tau = tau_count ? tau_sum / tau_count
                              : std::numeric_limits<double>::quiet_NaN();
  rep.hr_k = top_k_hit_rate(pred, truth, k);
  rep.psr = json_psr(raw, action_count);
  return rep;
}

double trailing_mean(std::span<const double> values, std::size_t window) {
  if (values.empty()) return 0.0;
  const std::size_t w = std::min(window, values.size());
  const auto tail = values.subspan(values.size() - w);
  return std::accumulate(tail.begin(), tail.end(), 0.0) / static_cast<double>(w);
}

std::optional<long> episodes_to_threshold(std::span<const double> returns,
                                          double threshold,
                                          std::size_t window) {
  if (window < 1) throw ContractViolation("window must be >= 1");
  double sum = 0.0;
  for (std::size_t i = 0; i < returns.size(); ++i) {
    sum += returns[i];
    if (i >= window) sum -= returns[i - window];
    if (i + 1 >= window && sum / static_cast<double>(window) >= threshold) {
      return static_cast<long>(i + 1);
    }
  }
  return std::nullopt;
}

double threshold_from_plateau(double plateau, double fraction) {
  return plateau - (1.0 - fraction) * std::abs(plateau);
}

std::vector<double> VariantRun::returns() const {
  std::vector<double> r;
  r.reserve(episodes.size());
  for (const auto& e : episodes) r.push_back(e.total_reward);
  return r;
}

std::optional<double> median(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  if (values.size() % 2) return values[m];
  return 0.5 * (values[m - 1] + values[m]);
}

namespace {

double final_window_mean(const VariantRun& run, std::size_t window,
                         double EpisodeSummary::*field) {
  std::vector<double> v;
  v.reserve(run.episodes.size());
  for (const auto& e : run.episodes) v.push_back(e.*field);
  return trailing_mean(v, window);
}

const VariantRun* find_run(const std::vector<VariantRun>& runs, Variant v,
                           std::uint64_t seed) {
  for (const auto& r : runs) {
    if (r.variant == v && r.seed == seed && !r.failed) return &r;
  }
  return nullptr;
}

}  // namespace

ComparisonReport run_comparison(std::shared_ptr<const Scenario> scenario,
                                const TrainConfig& base, Scorer& scorer,
                                const ComparisonOptions& options) {
  if (options.seeds.empty() || options.variants.empty()) {
    throw ConfigError("comparison needs at least one seed and one variant");
  }
  ComparisonReport rep;
  for (const auto seed : options.seeds) {
    for (const auto variant : options.variants) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      if (variant == Variant::kVanillaPpo) {
        cfg.lambda_fusion = 0.0;
        cfg.beta_kl = 0.0;
      }
      VariantRun run;
      run.variant = variant;
      run.seed = seed;
      try {
        Trainer trainer(scenario, cfg, variant, &scorer, options.batch_cap);
        TrainerHooks hooks;
        hooks.on_episode = [&](const EpisodeSummary& s) {
          if (static_cast<long>(run.episodes.size()) < options.episodes) {
            run.episodes.push_back(s);
          }
        };
        trainer.run(options.episodes, hooks);
      } catch (const RuntimeFailure& e) {
        run.failed = true;
        run.failure = e.what();
      }
      rep.runs.push_back(std::move(run));
    }
  }

  for (const auto variant : options.variants) {
    VariantSummary s;
    s.variant = variant;
    for (const auto& run : rep.runs) {
      if (run.variant != variant) continue;
      ++s.runs;
      if (run.failed) {
        ++s.failures;
        continue;
      }
      const auto w = options.window;
      s.mean_return += final_window_mean(run, w, &EpisodeSummary::total_reward);
      s.mean_flight_m += final_window_mean(run, w, &EpisodeSummary::flight_m);
      s.mean_component += final_window_mean(run, w, &EpisodeSummary::mean_component);
      s.mean_largest += final_window_mean(run, w, &EpisodeSummary::mean_largest);
      s.mean_fragments += final_window_mean(run, w, &EpisodeSummary::mean_fragments);
    }
    const int ok = s.runs - s.failures;
    if (ok > 0) {
      s.mean_return /= ok;
      s.mean_flight_m /= ok;
      s.mean_component /= ok;
      s.mean_largest /= ok;
      s.mean_fragments /= ok;
    }
    rep.variants.push_back(s);
  }

  std::vector<double> episode_ratios;
  std::vector<double> flight_ratios;
  for (const auto seed : options.seeds) {
    SeedComparison sc;
    sc.seed = seed;
    const VariantRun* sa = find_run(rep.runs, Variant::kSaPpo, seed);
    const VariantRun* van = find_run(rep.runs, Variant::kVanillaPpo, seed);
    const VariantRun* pure = find_run(rep.runs, Variant::kPureSemantic, seed);
    if (van) {
      const auto vr = van->returns();
      sc.vanilla_plateau = trailing_mean(vr, options.window);
      sc.threshold =
          threshold_from_plateau(sc.vanilla_plateau, options.threshold_fraction);
      sc.vanilla_episodes = episodes_to_threshold(vr, sc.threshold, options.window);
      if (sa) {
        const auto sr = sa->returns();
        sc.sa_episodes = episodes_to_threshold(sr, sc.threshold, options.window);
        if (sc.vanilla_episodes) {
          sc.episode_ratio =
              sc.sa_episodes ? static_cast<double>(*sc.sa_episodes) /
                                   static_cast<double>(*sc.vanilla_episodes)
                             : std::numeric_limits<double>::infinity();
          episode_ratios.push_back(*sc.episode_ratio);
        }
      }
    }
    if (sa) sc.sa_flight = final_window_mean(*sa, options.window, &EpisodeSummary::flight_m);
    if (pure) {
      sc.pure_flight =
          final_window_mean(*pure, options.window, &EpisodeSummary::flight_m);
    }
    if (sa && pure) {
      sc.flight_ratio = sc.sa_flight > 0
                            ? sc.pure_flight / sc.sa_flight
                            : (sc.pure_flight > 0
                                   ? std::numeric_limits<double>::infinity()
                                   : 1.0);
      flight_ratios.push_back(*sc.flight_ratio);
    }
    rep.seeds.push_back(sc);
  }
  rep.median_episode_ratio = median(episode_ratios);
  rep.median_flight_ratio = median(flight_ratios);
  return rep;
}

void write_comparison_csv(std::ostream& out, const ComparisonReport& report) {
  out << "variant,seed,episode,metric,value\n";
  const auto old_precision = out.precision(17);
  for (const auto& run : report.runs) {
    for (const auto& e : run.episodes) {
      const std::pair<const char*, double> metrics[] = {
          {"return", e.total_reward},
          {"flight_m", e.flight_m},
          {"energy_J", e.energy_j},
          {"mean_K", e.mean_fragments},
          {"mean_C", e.mean_component},
          {"mean_largest", e.mean_largest},
      };
      for (const auto& [name, value] : metrics) {
        out << to_string(run.variant) << ',' << run.seed << ',' << e.episode
            << ',' << name << ',' << value << '\n';
      }
    }
  }
  out.precision(old_precision);
}

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (std::isinf(*v)) return "inf";
  return *v;
}

}  // namespace

std::string comparison_json(const ComparisonReport& report,
                            const ComparisonOptions& options) {
  nlohmann::ordered_json j;
  j["episodes"] = options.episodes;
  j["window"] = options.window;
  j["threshold_fraction"] = options.threshold_fraction;
  j["median_episode_ratio"] = opt(report.median_episode_ratio);
  j["median_flight_ratio"] = opt(report.median_flight_ratio);
  auto& vars = j["variants"] = nlohmann::ordered_json::array();
  for (const auto& s : report.variants) {
    vars.push_back({{"variant", to_string(s.variant)},
                    {"runs", s.runs},
                    {"failures", s.failures},
                    {"final_mean_return", s.mean_return},
                    {"final_mean_flight_m", s.mean_flight_m},
                    {"final_mean_C", s.mean_component},
                    {"final_mean_largest_component", s.mean_largest},
                    {"final_mean_K", s.mean_fragments}});
  }
  auto& seeds = j["seeds"] = nlohmann::ordered_json::array();
  for (const auto& s : report.seeds) {
    auto ep = [](const std::optional<long>& v) -> nlohmann::ordered_json {
      if (!v) return nullptr;
      return *v;
    };
    seeds.push_back({{"seed", s.seed},
                     {"vanilla_plateau", s.vanilla_plateau},
                     {"threshold", s.threshold},
                     {"sa_ppo_episodes", ep(s.sa_episodes)},
                     {"vanilla_ppo_episodes", ep(s.vanilla_episodes)},
                     {"episode_ratio", opt(s.episode_ratio)},
                     {"sa_ppo_flight_m", s.sa_flight},
                     {"pure_semantic_flight_m", s.pure_flight},
                     {"flight_ratio", opt(s.flight_ratio)}});
  }
  auto& failures = j["failures"] = nlohmann::ordered_json::array();
  for (const auto& r : report.runs) {
    if (r.failed) {
      failures.push_back({{"variant", to_string(r.variant)},
                          {"seed", r.seed},
                          {"error", r.failure}});
    }
  }
  return j.dump(2);
}

}  // namespace uavrelay
