#include "uavrelay/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "uavrelay/errors.hpp"

namespace uavrelay {

TrafficSeries::TrafficSeries(int edge_count,
                             std::vector<std::vector<int>> counts)
    : edge_count_(edge_count), counts_(std::move(counts)) {
  for (const auto& row : counts_) {
    if (static_cast<int>(row.size()) != edge_count_) {
      throw StructuralError("traffic row width does not match edge count");
    }
    for (int c : row) {
      if (c < 0) throw StructuralError("negative vehicle count");
    }
  }
}

std::span<const int> TrafficSeries::slot(int t) const {
  if (t < 1 || t > slots()) {
    throw StructuralError("traffic slot " + std::to_string(t) +
                          " outside [1, " + std::to_string(slots()) + "]");
  }
  return counts_[t - 1];
}

long TrafficSeries::total(int t) const {
  long sum = 0;
  for (int c : slot(t)) sum += c;
  return sum;
}

int TrafficSeries::percentile99() const {
  std::vector<int> all;
  for (const auto& row : counts_) all.insert(all.end(), row.begin(), row.end());
  if (all.empty()) return 1;
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.99 * static_cast<double>(all.size())));
  const std::size_t idx = std::max<std::size_t>(rank, 1) - 1;
  std::nth_element(all.begin(), all.begin() + idx, all.end());
  return std::max(all[idx], 1);
}

namespace {

[[noreturn]] void fail_line(const std::string& source, int line,
                            const std::string& message) {
  throw ConfigError(source + ":" + std::to_string(line) + ": " + message);
}

int parse_int(const std::string& text, const std::string& source, int line,
              const char* what) {
  std::size_t used = 0;
  int value = 0;
  try {
    value = std::stoi(text, &used);
  } catch (const std::exception&) {
    fail_line(source, line, std::string("bad ") + what + " '" + text + "'");
  }
  if (used != text.size()) {
    fail_line(source, line, std::string("bad ") + what + " '" + text + "'");
  }
  return value;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

}  // namespace

TrafficSeries parse_trajectories(std::istream& in,
                                 const RoadTopologyGraph& graph,
                                 const std::string& source) {
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) fail_line(source, 1, "missing header");
  ++line_no;
  if (trim(line) != "slot,vehicle_id,edge_id") {
    fail_line(source, 1, "header must be 'slot,vehicle_id,edge_id'");
  }

  // (slot, vehicle) -> edge; counts derive from the distinct pairs.
  std::map<std::pair<int, std::string>, std::pair<EdgeId, int>> seen;
  int max_slot = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(trim(col));
    if (cols.size() != 3) fail_line(source, line_no, "expected 3 columns");
    const int slot = parse_int(cols[0], source, line_no, "slot");
    const EdgeId edge = parse_int(cols[2], source, line_no, "edge_id");
    if (slot < 1) fail_line(source, line_no, "slot must be >= 1");
    if (cols[1].empty()) fail_line(source, line_no, "empty vehicle_id");
    if (edge < 0 || edge >= graph.edge_count()) {
      fail_line(source, line_no, "unknown edge id " + std::to_string(edge));
    }
    auto [it, inserted] =
        seen.try_emplace({slot, cols[1]}, std::pair{edge, line_no});
    if (!inserted && it->second.first != edge) {
      fail_line(source, line_no,
                "vehicle '" + cols[1] + "' already on edge " +
                    std::to_string(it->second.first) + " in slot " +
                    std::to_string(slot) + " (line " +
                    std::to_string(it->second.second) + ")");
    }
    max_slot = std::max(max_slot, slot);
  }
  if (max_slot < 1) {
    throw ConfigError(source + ": no trajectory records (need at least 1 slot)");
  }
  std::vector<std::vector<int>> counts(max_slot,
                                       std::vector<int>(graph.edge_count(), 0));
  for (const auto& [key, value] : seen) ++counts[key.first - 1][value.first];
  return TrafficSeries(graph.edge_count(), std::move(counts));
}

TrafficSeries load_trajectories(const std::filesystem::path& path,
                                const RoadTopologyGraph& graph) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trajectory file " + path.string());
  return parse_trajectories(in, graph, path.string());
}

void write_trajectories(std::ostream& out, const TrafficSeries& series) {
  out << "slot,vehicle_id,edge_id\n";
  for (int t = 1; t <= series.slots(); ++t) {
    const auto row = series.slot(t);
    for (int e = 0; e < series.edge_count(); ++e) {
      for (int k = 0; k < row[e]; ++k) {
        out << t << ",e" << e << 'v' << k << ',' << e << '\n';
      }
    }
  }
}

void validate_profile(const TrafficProfile& profile,
                      const RoadTopologyGraph& graph) {
  if (profile.slots < 1) throw ConfigError("traffic profile needs slots >= 1");
  if (!(profile.base_rate >= 0.0)) {
    throw ConfigError("traffic base_rate must be >= 0");
  }
  for (const auto& h : profile.hotspots) {
    if (h.edge < 0 || h.edge >= graph.edge_count()) {
      throw ConfigError("hotspot edge " + std::to_string(h.edge) +
                        " out of range");
    }
    if (!(h.multiplier >= 0.0)) {
      throw ConfigError("hotspot multiplier must be >= 0");
    }
  }
  if (profile.time_curve.empty()) return;
  auto segments = profile.time_curve;
  std::sort(segments.begin(), segments.end(),
            [](const auto& a, const auto& b) { return a.first_slot < b.first_slot; });
  int next = 1;
  for (const auto& s : segments) {
    if (s.first_slot != next || s.last_slot < s.first_slot) {
      throw ConfigError("time_curve segments must tile [1, slots] without "
                        "gaps or overlap (problem near slot " +
                        std::to_string(s.first_slot) + ")");
    }
    if (!(s.multiplier >= 0.0)) {
      throw ConfigError("time_curve multiplier must be >= 0");
    }
    next = s.last_slot + 1;
  }
  if (next != profile.slots + 1) {
    throw ConfigError("time_curve does not cover slots up to " +
                      std::to_string(profile.slots));
  }
}

double expected_rate(const TrafficProfile& profile, EdgeId edge, int slot) {
  double rate = profile.base_rate;
  for (const auto& h : profile.hotspots) {
    if (h.edge == edge) rate *= h.multiplier;
  }
  for (const auto& s : profile.time_curve) {
    if (slot >= s.first_slot && slot <= s.last_slot) rate *= s.multiplier;
  }
  return rate;
}

TrafficSeries generate_traffic(const TrafficProfile& profile,
                               const RoadTopologyGraph& graph) {
  validate_profile(profile, graph);
  std::mt19937_64 rng(profile.seed);
  const int m = graph.edge_count();
  std::vector<std::vector<int>> counts(profile.slots, std::vector<int>(m, 0));
  for (int t = 1; t <= profile.slots; ++t) {
    for (int e = 0; e < m; ++e) {
      const double mean = expected_rate(profile, e, t);
      if (mean <= 0.0) continue;
      std::poisson_distribution<int> draw(mean);
      counts[t - 1][e] = draw(rng);
    }
  }
  return TrafficSeries(m, std::move(counts));
}

}  // namespace uavrelay
