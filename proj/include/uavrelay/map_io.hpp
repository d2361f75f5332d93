#pragma once

#include <filesystem>
#include <string>

#include "uavrelay/road_graph.hpp"

namespace uavrelay {

struct RoadMap {
  RoadTopologyGraph graph;
  VertexId uav_start = 0;
};

// YAML map document:
//
//   nodes:     [{id: 0, x: 0.0, y: 0.0}, ...]   ids dense 0..n-1
//   edges:     [{id: 0, u: 0, v: 1}, ...]       ids dense 0..m-1
//   rsu:       [11, 12, 13]
//   uav_start: 9
//
// Errors are ConfigError with "<source>:<line>: message".
RoadMap parse_map(const std::string& text, const std::string& source = "map");
RoadMap load_map(const std::filesystem::path& path);
std::string format_map(const RoadMap& map);

}  // namespace uavrelay
