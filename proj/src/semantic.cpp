#include "uavrelay/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "uavrelay/errors.hpp"

namespace uavrelay {

const char* const kSystemPromptVersion = "uav-relay-scoring/1";

const std::string& system_prompt() {
  static const std::string prompt =
      "You are a UAV relay placement expert for a vehicular network. The "
      "input describes one time slot of a road network: vehicle_per_edge "
      "lists the number of vehicles on each road segment in edge-id order; "
      "node_weight lists each intersection in vertex-id order, where 2 marks "
      "the intersection the UAV hovers over, 1 marks an intersection with a "
      "roadside unit and 0 an uncovered intersection. Rate every "
      "intersection as the UAV's next hover position by how well it merges "
      "disconnected vehicle clusters while keeping flight short. Reply with "
      "strict JSON {\"scores\":\"<digits>\"} containing exactly one digit "
      "0-9 per intersection in vertex-id order, 9 being best.";
  return prompt;
}

namespace {

void append_array(std::string& out, std::span<const int> values) {
  out.push_back('[');
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out.push_back(',');
    out += std::to_string(values[i]);
  }
  out.push_back(']');
}

}  // namespace

SerializedState serialize_state(std::span<const int> raw_state,
                                const RoadTopologyGraph& graph) {
  const std::size_t m = graph.edge_count();
  const std::size_t n = graph.vertex_count();
  if (raw_state.size() != m + n) {
    throw StructuralError("raw state length does not match the map");
  }
  SerializedState s;
  s.instruction = system_prompt();
  s.input.reserve(32 + 3 * (m + n));
  s.input = "{\"vehicle_per_edge\":";
  append_array(s.input, raw_state.subspan(0, m));
  s.input += ",\"node_weight\":";
  append_array(s.input, raw_state.subspan(m, n));
  s.input.push_back('}');
  return s;
}

std::vector<int> parse_state_input(const std::string& input,
                                   const RoadTopologyGraph& graph) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(input);
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("state input is not JSON: ") + e.what());
  }
  const auto edges = j.find("vehicle_per_edge");
  const auto nodes = j.find("node_weight");
  if (!j.is_object() || edges == j.end() || nodes == j.end() ||
      !edges->is_array() || !nodes->is_array()) {
    throw StructuralError("state input lacks vehicle_per_edge/node_weight");
  }
  if (static_cast<int>(edges->size()) != graph.edge_count() ||
      static_cast<int>(nodes->size()) != graph.vertex_count()) {
    throw StructuralError("state input dimensions do not match the map");
  }
  std::vector<int> raw;
  raw.reserve(edges->size() + nodes->size());
  for (const auto* arr : {&*edges, &*nodes}) {
    for (const auto& v : *arr) {
      if (!v.is_number_integer()) {
        throw StructuralError("state input holds a non-integer");
      }
      raw.push_back(v.get<int>());
    }
  }
  return raw;
}

std::string ActionScoreVector::digits() const {
  std::string out;
  out.reserve(scores.size());
  for (int s : scores) {
    if (s < 0 || s > 9) {
      throw ContractViolation("score " + std::to_string(s) +
                              " is not a single digit");
    }
    out.push_back(static_cast<char>('0' + s));
  }
  return out;
}

ActionScoreVector discretize_scores(std::span<const double> rewards,
                                    int score_star) {
  ActionScoreVector out;
  out.score_star = score_star;
  out.scores.resize(rewards.size());
  if (rewards.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(rewards.begin(), rewards.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(out.scores.begin(), out.scores.end(),
              static_cast<int>(std::round(score_star / 2.0)));
    return out;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    double y = (rewards[i] - lo) / (hi - lo) * score_star;
    const double half = std::floor(y) + 0.5;
    if (std::abs(y - half) < 1e-9) y = half;
    out.scores[i] = std::clamp(static_cast<int>(std::round(y)), 0, score_star);
  }
  return out;
}

ActionScoreVector neutral_scores(int n, int score_star) {
  ActionScoreVector out;
  out.score_star = score_star;
  out.scores.assign(n, static_cast<int>(std::round(score_star / 2.0)));
  return out;
}

std::vector<double> score_actions(Environment& env, const EnvState& state) {
  const int n = env.action_count();
  const double sentinel = -env.scenario().episode.beta_energy;
  EnvState start = state;
  start.done = false;
  const std::vector<char> mask = env.feasible_actions(start);
  std::vector<double> rewards(n, sentinel);
  for (int a = 0; a < n; ++a) {
    if (!mask[a] && env.scenario().episode.masking) continue;
    rewards[a] = env.transition(start, a).reward;
  }
  return rewards;
}

std::string format_score_output(const ActionScoreVector& scores) {
  return "{\"scores\":\"" + scores.digits() + "\"}";
}

std::optional<ActionScoreVector> parse_score_output(const std::string& text,
                                                    int n, int score_star) {
  const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  const auto it = j.find("scores");
  if (it == j.end() || !it->is_string()) return std::nullopt;
  const std::string digits = it->get<std::string>();
  if (static_cast<int>(digits.size()) != n) return std::nullopt;
  ActionScoreVector out;
  out.score_star = score_star;
  out.scores.reserve(n);
  for (char c : digits) {
    if (c < '0' || c > '9' || c - '0' > score_star) return std::nullopt;
    out.scores.push_back(c - '0');
  }
  return out;
}

std::string format_sft_record(const SftRecord& record) {
  nlohmann::ordered_json j;
  j["instruction"] = record.instruction;
  j["input"] = record.input;
  j["output"] = record.output;
  return j.dump();
}

SftRecord parse_sft_record(const std::string& line) {
  const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError("SFT record is not a JSON object");
  }
  SftRecord r;
  for (auto [key, dest] : {std::pair{"instruction", &r.instruction},
                           std::pair{"input", &r.input},
                           std::pair{"output", &r.output}}) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
      throw ConfigError(std::string("SFT record lacks string field '") + key +
                        "'");
    }
    *dest = it->get<std::string>();
  }
  return r;
}

std::vector<SftRecord> load_sft_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open SFT dataset " + path.string());
  std::vector<SftRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_sft_record(line));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  return out;
}

std::vector<std::string> load_state_db(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open state database " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

namespace {

void write_lines_atomic(const std::vector<std::string>& lines,
                        const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      out << lines[i] << '\n';
      if (!out) {
        throw RuntimeFailure("write failed at record " + std::to_string(i) +
                             " of " + tmp);
      }
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void save_state_db(const std::vector<std::string>& inputs,
                   const std::filesystem::path& path) {
  write_lines_atomic(inputs, path);
}

std::vector<SftRecord> make_sft_records(
    const std::vector<std::string>& state_db,
    std::shared_ptr<const Scenario> scenario) {
  std::vector<SerializedState> states;
  states.reserve(state_db.size());
  for (const auto& input : state_db) {
    states.push_back({system_prompt(), input});
  }
  OracleScorer oracle(scenario);
  const auto results = oracle.score_batch(states);
  std::vector<SftRecord> records;
  records.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    records.push_back({states[i].instruction, states[i].input,
                       results[i].raw_output});
  }
  return records;
}

std::size_t build_sft_dataset(const std::vector<std::string>& state_db,
                              std::shared_ptr<const Scenario> scenario,
                              const std::filesystem::path& out_path) {
  const auto records = make_sft_records(state_db, std::move(scenario));
  std::vector<std::string> lines;
  lines.reserve(records.size());
  for (const auto& r : records) lines.push_back(format_sft_record(r));
  write_lines_atomic(lines, out_path);
  return records.size();
}

const char* to_string(ScoreStatus status) {
  switch (status) {
    case ScoreStatus::kOk:
      return "ok";
    case ScoreStatus::kMiss:
      return "miss";
    case ScoreStatus::kParseError:
      return "parse_error";
  }
  return "?";
}

OracleScorer::OracleScorer(std::shared_ptr<const Scenario> scenario,
                           int score_star)
    : scenario_(std::move(scenario)), score_star_(score_star) {}

ScoreResult OracleScorer::score_one(const SerializedState& state) const {
  Environment env(scenario_);
  const auto raw = parse_state_input(state.input, scenario_->graph());
  const EnvState s = env.state_from_raw(raw);
  ScoreResult r;
  r.scores = discretize_scores(score_actions(env, s), score_star_);
  r.raw_output = format_score_output(r.scores);
  return r;
}

std::vector<ScoreResult> OracleScorer::score_batch(
    std::span<const SerializedState> states) {
  std::vector<ScoreResult> out(states.size());
  const long count = static_cast<long>(states.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (long i = 0; i < count; ++i) out[i] = score_one(states[i]);
  return out;
}

std::vector<ScoreResult> OracleScorer::score_batch_serial(
    std::span<const SerializedState> states) {
  std::vector<ScoreResult> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(score_one(s));
  return out;
}

TableScorer::TableScorer(const std::vector<SftRecord>& records,
                         int action_count, int score_star)
    : action_count_(action_count), score_star_(score_star) {
  table_.reserve(records.size());
  for (const auto& r : records) table_.emplace_back(r.input, r.output);
  std::stable_sort(table_.begin(), table_.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  // First record wins for duplicate inputs.
  table_.erase(std::unique(table_.begin(), table_.end(),
                           [](const auto& a, const auto& b) {
                             return a.first == b.first;
                           }),
               table_.end());
}

std::vector<ScoreResult> TableScorer::score_batch(
    std::span<const SerializedState> states) {
  std::vector<ScoreResult> out;
  out.reserve(states.size());
  for (const auto& s : states) {
    ScoreResult r;
    const auto it = std::lower_bound(
        table_.begin(), table_.end(), s.input,
        [](const auto& entry, const std::string& key) { return entry.first < key; });
    if (it == table_.end() || it->first != s.input) {
      r.status = ScoreStatus::kMiss;
      r.scores = neutral_scores(action_count_, score_star_);
      r.raw_output = format_score_output(r.scores);
    } else if (auto parsed =
                   parse_score_output(it->second, action_count_, score_star_)) {
      r.scores = std::move(*parsed);
      r.raw_output = it->second;
    } else {
      r.status = ScoreStatus::kParseError;
      r.scores = neutral_scores(action_count_, score_star_);
      r.raw_output = it->second;
    }
    out.push_back(std::move(r));
  }
  return out;
}

ScorerDispatcher::ScorerDispatcher(Scorer& backend, int batch_cap)
    : backend_(backend), batch_cap_(batch_cap) {
  if (batch_cap_ < 1) throw ConfigError("scorer batch cap must be >= 1");
}

std::vector<ScoreResult> ScorerDispatcher::score(
    std::span<const SerializedState> states) {
  std::vector<ScoreResult> out;
  out.reserve(states.size());
  for (std::size_t start = 0; start < states.size(); start += batch_cap_) {
    const std::size_t len =
        std::min<std::size_t>(batch_cap_, states.size() - start);
    auto part = backend_.score_batch(states.subspan(start, len));
    if (part.size() != len) {
      throw RuntimeFailure("scorer returned " + std::to_string(part.size()) +
                           " results for " + std::to_string(len) + " states");
    }
    ++batches_;
    for (auto& r : part) {
      switch (r.status) {
        case ScoreStatus::kOk:
          ++ok_;
          break;
        case ScoreStatus::kMiss:
          ++miss_;
          break;
        case ScoreStatus::kParseError:
          ++parse_errors_;
          break;
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace uavrelay
