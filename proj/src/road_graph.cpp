#include "uavrelay/road_graph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>
#include <string>
#include <utility>

#include "uavrelay/errors.hpp"
#include "uavrelay/union_find.hpp"

namespace uavrelay {

double distance(const Point& a, const Point& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

RoadTopologyGraph::RoadTopologyGraph(std::vector<Point> positions,
                                     std::vector<RoadEdge> edges,
                                     std::vector<VertexId> rsu_vertices)
    : positions_(std::move(positions)),
      edges_(std::move(edges)),
      rsu_(std::move(rsu_vertices)) {
  const int n = vertex_count();
  if (n == 0) throw ConfigError("map has no vertices");

  std::set<std::pair<int, int>> seen;
  for (int e = 0; e < edge_count(); ++e) {
    const auto [u, v] = edges_[e];
    if (u < 0 || u >= n || v < 0 || v >= n) {
      throw ConfigError("edge " + std::to_string(e) +
                        " references an unknown vertex");
    }
    if (u == v) {
      throw ConfigError("edge " + std::to_string(e) + " is a self-loop");
    }
    if (!seen.emplace(std::min(u, v), std::max(u, v)).second) {
      throw ConfigError("edge " + std::to_string(e) + " duplicates (" +
                        std::to_string(u) + "," + std::to_string(v) + ")");
    }
  }

  is_rsu_.assign(n, 0);
  for (VertexId r : rsu_) {
    if (r < 0 || r >= n) {
      throw ConfigError("rsu vertex " + std::to_string(r) + " out of range");
    }
    is_rsu_[r] = 1;
  }
  std::sort(rsu_.begin(), rsu_.end());
  rsu_.erase(std::unique(rsu_.begin(), rsu_.end()), rsu_.end());

  // CSR incidence; edge ids ascending per vertex because we scan in order.
  incident_offset_.assign(n + 1, 0);
  for (const auto& [u, v] : edges_) {
    ++incident_offset_[u + 1];
    ++incident_offset_[v + 1];
  }
  for (int i = 0; i < n; ++i) incident_offset_[i + 1] += incident_offset_[i];
  incident_edges_.resize(incident_offset_[n]);
  std::vector<int> fill(incident_offset_.begin(), incident_offset_.end() - 1);
  for (int e = 0; e < edge_count(); ++e) {
    incident_edges_[fill[edges_[e].u]++] = e;
    incident_edges_[fill[edges_[e].v]++] = e;
  }

  UnionFind uf(n);
  int parts = n;
  for (const auto& [u, v] : edges_) {
    if (uf.unite(u, v)) --parts;
  }
  if (parts != 1) {
    throw ConfigError("road graph is disconnected (" + std::to_string(parts) +
                      " components)");
  }
}

std::span<const EdgeId> RoadTopologyGraph::incident(VertexId v) const {
  return {incident_edges_.data() + incident_offset_[v],
          incident_edges_.data() + incident_offset_[v + 1]};
}

double RoadTopologyGraph::edge_length(EdgeId e) const {
  return distance(positions_[edges_[e].u], positions_[edges_[e].v]);
}

double RoadTopologyGraph::longest_edge() const {
  double best = 0.0;
  for (int e = 0; e < edge_count(); ++e) best = std::max(best, edge_length(e));
  return best;
}

double RoadTopologyGraph::vertex_distance(VertexId a, VertexId b) const {
  return distance(positions_[a], positions_[b]);
}

std::uint64_t RoadTopologyGraph::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
      h ^= (word >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(positions_.size());
  for (const auto& p : positions_) {
    mix(std::bit_cast<std::uint64_t>(p.x));
    mix(std::bit_cast<std::uint64_t>(p.y));
  }
  mix(edges_.size());
  for (const auto& [u, v] : edges_) {
    mix(static_cast<std::uint64_t>(u));
    mix(static_cast<std::uint64_t>(v));
  }
  mix(rsu_.size());
  for (VertexId r : rsu_) mix(static_cast<std::uint64_t>(r));
  return h;
}

SlotOccupancy make_occupancy(const RoadTopologyGraph& graph,
                             std::vector<int> edge_vehicles,
                             VertexId uav_vertex) {
  if (static_cast<int>(edge_vehicles.size()) != graph.edge_count()) {
    throw StructuralError("edge count vector has " +
                          std::to_string(edge_vehicles.size()) +
                          " entries, map has " +
                          std::to_string(graph.edge_count()) + " edges");
  }
  if (uav_vertex < 0 || uav_vertex >= graph.vertex_count()) {
    throw StructuralError("uav vertex " + std::to_string(uav_vertex) +
                          " out of range");
  }
  SlotOccupancy occ;
  occ.edge_vehicles = std::move(edge_vehicles);
  occ.vertex_weight.assign(graph.vertex_count(), 0);
  for (VertexId r : graph.rsu_vertices()) occ.vertex_weight[r] = 1;
  occ.vertex_weight[uav_vertex] = 2;
  occ.uav_vertex = uav_vertex;
  return occ;
}

std::vector<VertexId> Connectivity::c_vertex_ids() const {
  std::vector<VertexId> out;
  for (int v = 0; v < static_cast<int>(c_vertex.size()); ++v) {
    if (c_vertex[v]) out.push_back(v);
  }
  return out;
}

std::vector<EdgeId> Connectivity::c_edge_ids() const {
  std::vector<EdgeId> out;
  for (int e = 0; e < static_cast<int>(c_edge.size()); ++e) {
    if (c_edge[e]) out.push_back(e);
  }
  return out;
}

namespace {

void check_dimensions(const RoadTopologyGraph& graph,
                      const SlotOccupancy& occ) {
  if (static_cast<int>(occ.edge_vehicles.size()) != graph.edge_count() ||
      static_cast<int>(occ.vertex_weight.size()) != graph.vertex_count()) {
    throw StructuralError("occupancy dimensions do not match the map");
  }
}

}  // namespace

Connectivity classify_connectivity(const RoadTopologyGraph& graph,
                                   const SlotOccupancy& occ) {
  check_dimensions(graph, occ);
  const int n = graph.vertex_count();
  const int m = graph.edge_count();
  Connectivity conn;
  conn.c_vertex.assign(n, 0);
  conn.c_edge.assign(m, 0);
  for (int v = 0; v < n; ++v) {
    if (occ.vertex_weight[v] > 0) {
      conn.c_vertex[v] = 1;
      continue;
    }
    for (EdgeId e : graph.incident(v)) {
      if (occ.edge_vehicles[e] > 0) {
        conn.c_vertex[v] = 1;
        break;
      }
    }
  }
  for (int e = 0; e < m; ++e) {
    const auto& [u, v] = graph.edge(e);
    conn.c_edge[e] = occ.edge_vehicles[e] > 0 || conn.c_vertex[u] ||
                     conn.c_vertex[v];
  }
  return conn;
}

DualConnectedGraph build_dcg(const RoadTopologyGraph& graph,
                             const SlotOccupancy& occ,
                             const Connectivity& conn) {
  check_dimensions(graph, occ);
  const int m = graph.edge_count();
  DualConnectedGraph dcg;
  std::vector<int> dual_index(m, -1);
  for (int e = 0; e < m; ++e) {
    if (!conn.c_edge[e]) continue;
    dual_index[e] = static_cast<int>(dcg.edge_ids.size());
    dcg.edge_ids.push_back(e);
    dcg.weights.push_back(occ.edge_vehicles[e]);
  }

  // Chaining consecutive c-edges around each vertex yields the same
  // partition as the clique over all incident pairs.
  UnionFind uf(dcg.edge_ids.size());
  for (int v = 0; v < graph.vertex_count(); ++v) {
    int prev = -1;
    for (EdgeId e : graph.incident(v)) {
      if (dual_index[e] < 0) continue;
      if (prev >= 0) uf.unite(prev, dual_index[e]);
      prev = dual_index[e];
    }
  }

  // edge_ids ascending, so first-seen order numbers components by their
  // smallest edge id.
  dcg.component.assign(dcg.edge_ids.size(), -1);
  std::vector<int> root_label(dcg.edge_ids.size(), -1);
  for (std::size_t i = 0; i < dcg.edge_ids.size(); ++i) {
    const std::size_t root = uf.find(i);
    if (root_label[root] < 0) root_label[root] = dcg.component_count++;
    dcg.component[i] = root_label[root];
  }
  return dcg;
}

FragmentationReport fragmentation_metrics(const DualConnectedGraph& dcg) {
  FragmentationReport report;
  report.component_count = dcg.component_count;
  report.component_weights.assign(dcg.component_count, 0);
  for (std::size_t i = 0; i < dcg.edge_ids.size(); ++i) {
    report.component_weights[dcg.component[i]] += dcg.weights[i];
  }
  long total = 0;
  for (long w : report.component_weights) {
    total += w;
    report.largest_component_weight =
        std::max(report.largest_component_weight, w);
  }
  report.mean_component_weight =
      dcg.component_count > 0
          ? static_cast<double>(total) / dcg.component_count
          : 0.0;
  report.c_edge_ids = dcg.edge_ids;
  return report;
}

FragmentationReport fragment(const RoadTopologyGraph& graph,
                             const SlotOccupancy& occ) {
  const Connectivity conn = classify_connectivity(graph, occ);
  FragmentationReport report =
      fragmentation_metrics(build_dcg(graph, occ, conn));
  report.c_vertex_ids = conn.c_vertex_ids();
  return report;
}

int fragment_count(const RoadTopologyGraph& graph, const SlotOccupancy& occ) {
  const Connectivity conn = classify_connectivity(graph, occ);
  return build_dcg(graph, occ, conn).component_count;
}

std::vector<FragmentationReport> fragment_batch(
    const RoadTopologyGraph& graph, std::span<const SlotOccupancy> occs) {
  std::vector<FragmentationReport> out(occs.size());
  const long count = static_cast<long>(occs.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (long i = 0; i < count; ++i) {
    out[i] = fragment(graph, occs[i]);
  }
  return out;
}

std::vector<FragmentationReport> fragment_batch_serial(
    const RoadTopologyGraph& graph, std::span<const SlotOccupancy> occs) {
  std::vector<FragmentationReport> out;
  out.reserve(occs.size());
  for (const auto& occ : occs) out.push_back(fragment(graph, occ));
  return out;
}

RoadTopologyGraph make_grid_graph(int rows, int cols, double spacing,
                                  std::vector<VertexId> rsu) {
  std::vector<Point> positions;
  std::vector<RoadEdge> edges;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      positions.push_back({c * spacing, r * spacing});
    }
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int v = r * cols + c;
      if (c + 1 < cols) edges.push_back({v, v + 1});
      if (r + 1 < rows) edges.push_back({v, v + cols});
    }
  }
  return RoadTopologyGraph(std::move(positions), std::move(edges),
                           std::move(rsu));
}

}  // namespace uavrelay
