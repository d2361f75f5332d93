#include "uavrelay/map_io.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "uavrelay/errors.hpp"

namespace uavrelay {
namespace {

[[noreturn]] void fail(const std::string& source, const YAML::Node& node,
                       const std::string& message) {
  const int line = node.IsDefined() ? node.Mark().line + 1 : 0;
  throw ConfigError(source + ":" + std::to_string(line) + ": " + message);
}

template <typename T>
T field(const std::string& source, const YAML::Node& parent, const char* key) {
  const YAML::Node node = parent[key];
  if (!node) fail(source, parent, std::string("missing field '") + key + "'");
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    fail(source, node, std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

RoadMap parse_map(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " +
                      e.msg);
  }
  if (!root.IsMap()) throw ConfigError(source + ":1: map must be a mapping");
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (key != "nodes" && key != "edges" && key != "rsu" && key != "uav_start") {
      fail(source, kv.first, "unknown key '" + key + "'");
    }
  }

  const YAML::Node nodes = root["nodes"];
  if (!nodes || !nodes.IsSequence() || nodes.size() == 0) {
    fail(source, root, "'nodes' must be a non-empty sequence");
  }
  std::vector<Point> positions(nodes.size());
  std::vector<char> have_node(nodes.size(), 0);
  for (const auto& node : nodes) {
    const int id = field<int>(source, node, "id");
    if (id < 0 || id >= static_cast<int>(nodes.size())) {
      fail(source, node, "node id " + std::to_string(id) + " not in [0, " +
                             std::to_string(nodes.size()) + ")");
    }
    if (have_node[id]) {
      fail(source, node, "duplicate node id " + std::to_string(id));
    }
    have_node[id] = 1;
    positions[id] = {field<double>(source, node, "x"),
                     field<double>(source, node, "y")};
  }

  const YAML::Node edges_node = root["edges"];
  if (!edges_node || !edges_node.IsSequence()) {
    fail(source, root, "'edges' must be a sequence");
  }
  const int n = static_cast<int>(positions.size());
  std::vector<RoadEdge> edges(edges_node.size());
  std::vector<char> have_edge(edges_node.size(), 0);
  std::set<std::pair<int, int>> seen;
  for (const auto& node : edges_node) {
    const int id = field<int>(source, node, "id");
    if (id < 0 || id >= static_cast<int>(edges.size())) {
      fail(source, node, "edge id " + std::to_string(id) + " not in [0, " +
                             std::to_string(edges.size()) + ")");
    }
    if (have_edge[id]) {
      fail(source, node, "duplicate edge id " + std::to_string(id));
    }
    have_edge[id] = 1;
    const int u = field<int>(source, node, "u");
    const int v = field<int>(source, node, "v");
    if (u < 0 || u >= n || v < 0 || v >= n) {
      fail(source, node, "edge " + std::to_string(id) +
                             " references an unknown vertex");
    }
    if (u == v) fail(source, node, "edge " + std::to_string(id) + " is a self-loop");
    if (!seen.emplace(std::min(u, v), std::max(u, v)).second) {
      fail(source, node, "edge " + std::to_string(id) +
                             " duplicates an earlier edge");
    }
    edges[id] = {u, v};
  }

  std::vector<VertexId> rsu;
  if (const YAML::Node rsu_node = root["rsu"]) {
    if (!rsu_node.IsSequence()) fail(source, rsu_node, "'rsu' must be a list");
    for (const auto& item : rsu_node) {
      const int r = item.as<int>();
      if (r < 0 || r >= n) {
        fail(source, item, "rsu vertex " + std::to_string(r) + " out of range");
      }
      rsu.push_back(r);
    }
  }

  RoadMap map;
  map.uav_start = field<int>(source, root, "uav_start");
  if (map.uav_start < 0 || map.uav_start >= n) {
    fail(source, root["uav_start"], "uav_start out of range");
  }
  try {
    map.graph = RoadTopologyGraph(std::move(positions), std::move(edges),
                                  std::move(rsu));
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return map;
}

RoadMap load_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open map file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_map(buffer.str(), path.string());
}

std::string format_map(const RoadMap& map) {
  std::ostringstream out;
  out.precision(17);
  const auto& g = map.graph;
  out << "nodes:\n";
  for (int v = 0; v < g.vertex_count(); ++v) {
    out << "  - {id: " << v << ", x: " << g.position(v).x
        << ", y: " << g.position(v).y << "}\n";
  }
  out << "edges:\n";
  for (int e = 0; e < g.edge_count(); ++e) {
    out << "  - {id: " << e << ", u: " << g.edge(e).u << ", v: " << g.edge(e).v
        << "}\n";
  }
  out << "rsu: [";
  for (std::size_t i = 0; i < g.rsu_vertices().size(); ++i) {
    out << (i ? ", " : "") << g.rsu_vertices()[i];
  }
  out << "]\nuav_start: " << map.uav_start << "\n";
  return out.str();
}

}  // namespace uavrelay
