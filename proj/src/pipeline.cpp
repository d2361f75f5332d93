#include "uavrelay/pipeline.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "uavrelay/errors.hpp"
#include "uavrelay/union_find.hpp"

namespace uavrelay {

AtomicOutput::AtomicOutput(std::filesystem::path path)
    : path_(std::move(path)), tmp_(path_.string() + ".tmp") {
  if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
  out_ = std::make_unique<std::ofstream>(tmp_, std::ios::trunc);
  if (!*out_) throw RuntimeFailure("cannot write " + tmp_.string());
}

AtomicOutput::~AtomicOutput() {
  if (!committed_) {
    out_.reset();
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
  }
}

std::ostream& AtomicOutput::stream() { return *out_; }

void AtomicOutput::commit() {
  out_->flush();
  if (!*out_) throw RuntimeFailure("write failed for " + tmp_.string());
  out_->close();
  std::filesystem::rename(tmp_, path_);
  committed_ = true;
}

void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content) {
  AtomicOutput out(path);
  out.stream() << content;
  out.commit();
}

namespace {

std::filesystem::path out_path(const RunConfig& c, const char* name) {
  return c.output_dir / name;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) {
    s += l;
    s.push_back('\n');
  }
  return s;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

// Keeps the header and rows whose leading integer is at most `limit`.
std::vector<std::string> rows_up_to(const std::filesystem::path& path,
                                    const std::string& header,
                                    unsigned long long limit) {
  std::vector<std::string> rows{header};
  const auto lines = read_lines(path);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto comma = lines[i].find(',');
    if (comma == std::string::npos) continue;
    if (std::stoull(lines[i].substr(0, comma)) <= limit) rows.push_back(lines[i]);
  }
  return rows;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

const char* kTrainHeader = "update,loss,clip_loss,value_loss,entropy,kl,mean_reward";
const char* kEpisodeHeader =
    "episode,return,flight_m,energy_J,mean_K,mean_C,mean_largest,steps";

}  // namespace

void cmd_map_validate(const std::filesystem::path& map_path, std::ostream& log) {
  const RoadMap map = load_map(map_path);
  const auto& g = map.graph;
  UnionFind uf(g.vertex_count());
  int parts = g.vertex_count();
  for (EdgeId e = 0; e < g.edge_count(); ++e) {
    if (uf.unite(g.edge(e).u, g.edge(e).v)) --parts;
  }
  log << map_path.string() << ": " << g.vertex_count() << " nodes, "
      << g.edge_count() << " edges, " << g.rsu_vertices().size()
      << " RSUs, uav_start " << map.uav_start << ", longest edge "
      << g.longest_edge() << " m, " << parts << " connected part"
      << (parts == 1 ? "" : "s") << '\n';
  if (parts != 1) throw ConfigError(map_path.string() + ": road graph is not connected");
}

bool cmd_check_coverage(const RunConfig& config, std::ostream& log) {
  const RoadMap map = load_map(config.map_path);
  const double half = map.graph.longest_edge() / 2.0;
  const CoverageRadius cov = coverage_radius(config.channel);
  log << "coverage radius: ";
  if (cov.unbounded) {
    log << "> " << config.channel.search_limit_m << " m (unbounded)";
  } else {
    log << cov.radius_m << " m";
  }
  log << "; half longest edge: " << half << " m\n";
  const bool ok = cov.unbounded || cov.radius_m >= half;
  log << (ok ? "ok: a hovering UAV covers every road midpoint next to it\n"
             : "fail: coverage radius is shorter than half the longest edge\n");
  return ok;
}

CollectResult cmd_collect(const RunConfig& config, std::ostream& log) {
  const LoadedRun run = load_run(config);
  const CollectResult res = collect_states(run.scenario, config.train,
                                           config.collect_target,
                                           config.collect_max_episodes);
  std::filesystem::create_directories(config.output_dir);
  save_state_db(res.states, out_path(config, kStatesFile));
  log << "collected " << res.states.size() << " distinct states from "
      << res.visited << " visits over " << res.episodes << " episodes (dedup ratio "
      << res.dedup_ratio() << ")\n";
  if (!res.reached_target) {
    log << "warning: stopped at the episode limit below the target of "
        << config.collect_target << " states\n";
  }
  return res;
}

std::size_t cmd_build_sft(const RunConfig& config,
                          const std::filesystem::path& state_db,
                          std::ostream& log) {
  const LoadedRun run = load_run(config);
  const auto states = load_state_db(state_db);
  if (states.empty()) throw ConfigError(state_db.string() + ": state database is empty");
  for (std::size_t i = 0; i < states.size(); ++i) {
    try {
      parse_state_input(states[i], run.scenario->graph());
    } catch (const StructuralError& e) {
      throw ConfigError(state_db.string() + ":" + std::to_string(i + 1) + ": " +
                        e.what());
    }
  }
  const auto records = make_sft_records(states, run.scenario);
  std::vector<std::string> lines;
  std::array<long, 10> histogram{};
  for (const auto& r : records) {
    lines.push_back(format_sft_record(r));
    const auto parsed = parse_score_output(r.output, run.scenario->graph().vertex_count());
    for (int s : parsed->scores) ++histogram[s];
  }
  std::filesystem::create_directories(config.output_dir);
  write_file_atomic(out_path(config, kSftFile), join_lines(lines));
  log << "wrote " << records.size() << " records to "
      << out_path(config, kSftFile).string() << "\nscore histogram:";
  for (int d = 0; d <= config.scorer.score_star; ++d) log << ' ' << d << ':' << histogram[d];
  log << '\n';
  return records.size();
}

void cmd_train(const RunConfig& config,
               const std::optional<std::filesystem::path>& resume,
               std::ostream& log) {
  const LoadedRun run = load_run(config);
  std::unique_ptr<Scorer> scorer;
  if (config.variant != Variant::kVanillaPpo) scorer = make_scorer(config, run.scenario);
  TrainConfig train = config.train;
  if (config.variant == Variant::kVanillaPpo) {
    train.lambda_fusion = 0.0;
    train.beta_kl = 0.0;
  }
  Trainer trainer(run.scenario, train, config.variant, scorer.get(),
                  config.scorer.batch_cap);
  std::filesystem::create_directories(config.output_dir);
  const auto train_csv = out_path(config, kTrainCsv);
  const auto episodes_csv = out_path(config, kEpisodesCsv);
  const auto ckpt_path = out_path(config, kCheckpointFile);

  std::vector<std::string> update_rows{kTrainHeader};
  std::vector<std::string> episode_rows{kEpisodeHeader};
  if (resume) {
    const Checkpoint ck = checkpoint_load(*resume, run.scenario->graph().fingerprint(),
                                          config_fingerprint(train));
    trainer.resume(ck);
    update_rows = rows_up_to(train_csv, kTrainHeader, ck.completed_updates);
    episode_rows = rows_up_to(episodes_csv, kEpisodeHeader, ck.completed_episodes);
    log << "resumed at update " << ck.completed_updates << ", episode "
        << ck.completed_episodes << '\n';
  }

  auto save_all = [&] {
    checkpoint_save(trainer.checkpoint(), ckpt_path);
    write_file_atomic(train_csv, join_lines(update_rows));
    write_file_atomic(episodes_csv, join_lines(episode_rows));
  };

  TrainerHooks hooks;
  hooks.on_update = [&](const UpdateRecord& r) {
    update_rows.push_back(std::to_string(r.update) + ',' + fmt(r.loss.total) + ',' +
                          fmt(r.loss.clip) + ',' + fmt(r.loss.value) + ',' +
                          fmt(r.loss.entropy) + ',' + fmt(r.loss.kl) + ',' +
                          fmt(r.mean_reward));
    if (config.checkpoint_every > 0 && r.update % config.checkpoint_every == 0) {
      save_all();
    }
  };
  double window_sum = 0.0;
  long window_n = 0;
  hooks.on_episode = [&](const EpisodeSummary& s) {
    if (s.episode > config.episodes) return;
    episode_rows.push_back(std::to_string(s.episode) + ',' + fmt(s.total_reward) +
                           ',' + fmt(s.flight_m) + ',' + fmt(s.energy_j) + ',' +
                           fmt(s.mean_fragments) + ',' + fmt(s.mean_component) +
                           ',' + fmt(s.mean_largest) + ',' + std::to_string(s.steps));
    window_sum += s.total_reward;
    ++window_n;
    if (s.episode % 100 == 0) {
      log << "episode " << s.episode << ": mean return over last " << window_n
          << " = " << window_sum / window_n << '\n';
      window_sum = 0.0;
      window_n = 0;
    }
  };
  trainer.run(config.episodes, hooks);
  save_all();
  log << "trained " << trainer.completed_updates() << " updates, "
      << trainer.completed_episodes() << " episodes ("
      << to_string(config.variant) << ")\n";
  if (const auto* d = trainer.dispatcher()) {
    log << "scorer: " << d->ok_count() << " ok, " << d->miss_count()
        << " miss, " << d->parse_error_count() << " parse errors in "
        << d->batches() << " batches\n";
  }
}

void cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint,
              std::ostream& log) {
  const LoadedRun base = load_run(config);
  const Checkpoint ck =
      checkpoint_load(checkpoint, base.scenario->graph().fingerprint());
  ensure_compatible(ck, base.scenario->graph().vertex_count() +
                            base.scenario->graph().edge_count(),
                    base.scenario->graph().vertex_count());
  std::vector<EvalSlice> slices = config.eval_slices;
  if (slices.empty()) slices.push_back({"default", config.episode.start_slot, 0});

  std::filesystem::create_directories(config.output_dir);
  AtomicOutput eval_out(out_path(config, kEvalCsv));
  AtomicOutput traj_out(out_path(config, kTrajectoryCsv));
  eval_out.stream() << "slice,slot,uav_vertex,action,reward,K,C,energy_J,flight_m\n";
  traj_out.stream() << "slice,slot,uav_vertex,x,y\n";
  auto rng = derive_rng(config.train.seed, 99);
  for (const auto& slice : slices) {
    EpisodeConfig ep = config.episode;
    ep.start_slot = slice.start_slot;
    if (slice.horizon > 0) ep.horizon = slice.horizon;
    const LoadedRun run = load_run(config, ep);
    std::unique_ptr<Scorer> scorer;
    if (config.variant != Variant::kVanillaPpo) scorer = make_scorer(config, run.scenario);
    Environment env(run.scenario);
    const PolicyRollout r =
        rollout_policy(env, &ck.params, config.variant, scorer.get(),
                       config.train.lambda_fusion, config.eval_greedy, rng);
    const auto& g = run.scenario->graph();
    for (const auto& t : r.transitions) {
      eval_out.stream() << slice.name << ',' << t.state.slot << ','
                        << t.state.uav_vertex << ',' << t.action << ','
                        << fmt(t.reward) << ',' << t.fragments << ','
                        << fmt(t.mean_fragment) << ',' << fmt(t.energy_j) << ','
                        << fmt(t.flight_m) << '\n';
      const VertexId at = t.next_state.uav_vertex;
      traj_out.stream() << slice.name << ',' << t.state.slot << ',' << at << ','
                        << fmt(g.position(at).x) << ',' << fmt(g.position(at).y)
                        << '\n';
    }
    log << slice.name << ": return " << r.summary.total_reward << ", flight "
        << r.summary.flight_m << " m, mean K " << r.summary.mean_fragments
        << ", mean C " << r.summary.mean_component << ", " << r.summary.steps
        << " slots\n";
  }
  eval_out.commit();
  traj_out.commit();
}

ScorerEvalReport cmd_score_eval(const RunConfig& config,
                                const std::filesystem::path& dataset, int k,
                                std::ostream& log) {
  const LoadedRun run = load_run(config);
  const auto records = load_sft_dataset(dataset);
  auto scorer = make_scorer(config, run.scenario);
  const int n = run.scenario->graph().vertex_count();
  const ScorerEvalReport rep =
      evaluate_scorer(records, *scorer, n, k, config.scorer.batch_cap);
  nlohmann::ordered_json j;
  j["scorer"] = scorer->name();
  j["samples"] = rep.sample_count;
  if (std::isnan(rep.kendall_tau)) {
    j["kendall_tau"] = "nan";
  } else {
    j["kendall_tau"] = rep.kendall_tau;
  }
  j["kendall_tau_undefined"] = rep.tau_undefined;
  j["k"] = rep.k;
  j["hr_k"] = rep.hr_k;
  j["json_psr_syntactic"] = rep.psr.syntactic_rate();
  j["json_psr_schema"] = rep.psr.schema_rate();
  std::filesystem::create_directories(config.output_dir);
  write_file_atomic(out_path(config, kScoreEvalJson), j.dump(2) + "\n");
  log << "samples " << rep.sample_count << ", kendall tau " << rep.kendall_tau
      << " (" << rep.tau_undefined << " undefined), HR@" << rep.k << ' '
      << rep.hr_k << ", JSON PSR " << rep.psr.syntactic_rate() << " (schema "
      << rep.psr.schema_rate() << ")\n";
  return rep;
}

ComparisonReport cmd_compare(const RunConfig& config, std::ostream& log) {
  const LoadedRun run = load_run(config);
  auto scorer = make_scorer(config, run.scenario);
  ComparisonOptions opt = config.compare;
  opt.batch_cap = config.scorer.batch_cap;
  const ComparisonReport rep = run_comparison(run.scenario, config.train, *scorer, opt);
  std::filesystem::create_directories(config.output_dir);
  {
    AtomicOutput csv(out_path(config, kCompareCsv));
    write_comparison_csv(csv.stream(), rep);
    csv.commit();
  }
  write_file_atomic(out_path(config, kCompareJson), comparison_json(rep, opt) + "\n");
  for (const auto& v : rep.variants) {
    log << to_string(v.variant) << ": final return " << v.mean_return
        << ", flight " << v.mean_flight_m << " m, mean C " << v.mean_component
        << ", largest " << v.mean_largest << ", failures " << v.failures << '\n';
  }
  auto show = [&](const char* what, const std::optional<double>& v) {
    log << what << ": ";
    if (v) {
      log << *v;
    } else {
      log << "n/a";
    }
    log << '\n';
  };
  show("median episodes-to-threshold ratio (sa_ppo / vanilla_ppo)",
       rep.median_episode_ratio);
  show("median flight ratio (pure_semantic / sa_ppo)", rep.median_flight_ratio);
  return rep;
}

}  // namespace uavrelay
