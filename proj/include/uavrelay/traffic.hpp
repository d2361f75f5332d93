#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "uavrelay/road_graph.hpp"

namespace uavrelay {

// Per-slot vehicle counts for every edge. Slots are 1-based.
class TrafficSeries {
 public:
  TrafficSeries() = default;
  TrafficSeries(int edge_count, std::vector<std::vector<int>> counts);

  int slots() const { return static_cast<int>(counts_.size()); }
  int edge_count() const { return edge_count_; }
  std::span<const int> slot(int t) const;
  long total(int t) const;

  // 99th percentile (nearest-rank) of all counts; at least 1.
  int percentile99() const;

  bool operator==(const TrafficSeries&) const = default;

 private:
  int edge_count_ = 0;
  std::vector<std::vector<int>> counts_;
};

struct TrajectoryRecord {
  int slot = 0;
  std::string vehicle_id;
  EdgeId edge_id = 0;
};

// CSV with mandatory header `slot,vehicle_id,edge_id`. Counts are the number
// of distinct vehicles per (slot, edge); missing slots up to the maximum are
// zero-filled. Errors are ConfigError naming the line.
TrafficSeries parse_trajectories(std::istream& in,
                                 const RoadTopologyGraph& graph,
                                 const std::string& source = "trajectories");
TrafficSeries load_trajectories(const std::filesystem::path& path,
                                const RoadTopologyGraph& graph);
// Emits one record per vehicle with synthetic ids `e<edge>v<k>`. Parsing the
// output reproduces `series` as long as its last slot is non-empty.
void write_trajectories(std::ostream& out, const TrafficSeries& series);

struct HotspotEdge {
  EdgeId edge = 0;
  double multiplier = 1.0;
};

struct TimeSegment {
  int first_slot = 1;
  int last_slot = 1;
  double multiplier = 1.0;
};

struct TrafficProfile {
  std::uint64_t seed = 0;
  int slots = 50;
  double base_rate = 0.0;
  std::vector<HotspotEdge> hotspots;
  // Empty means a flat multiplier of 1; otherwise must tile [1, slots].
  std::vector<TimeSegment> time_curve;

  bool operator==(const TrafficProfile&) const = default;
};

void validate_profile(const TrafficProfile& profile,
                      const RoadTopologyGraph& graph);
double expected_rate(const TrafficProfile& profile, EdgeId edge, int slot);

// Poisson counts with mean base_rate * hotspot * time multiplier, drawn in
// slot-major, edge-minor order from a generator seeded with profile.seed.
TrafficSeries generate_traffic(const TrafficProfile& profile,
                               const RoadTopologyGraph& graph);

}  // namespace uavrelay
