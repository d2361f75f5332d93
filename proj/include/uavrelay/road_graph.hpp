#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace uavrelay {

using VertexId = int;
using EdgeId = int;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

double distance(const Point& a, const Point& b);

struct RoadEdge {
  VertexId u = 0;
  VertexId v = 0;
};

// Static road network: intersections (vertices) and road segments (edges).
// Construction validates: endpoints distinct and in range, no duplicate
// undirected edges, graph connected, RSU ids in range. Violations throw
// ConfigError.
class RoadTopologyGraph {
 public:
  RoadTopologyGraph() = default;
  RoadTopologyGraph(std::vector<Point> positions, std::vector<RoadEdge> edges,
                    std::vector<VertexId> rsu_vertices);

  int vertex_count() const { return static_cast<int>(positions_.size()); }
  int edge_count() const { return static_cast<int>(edges_.size()); }

  const Point& position(VertexId v) const { return positions_[v]; }
  const std::vector<Point>& positions() const { return positions_; }
  const RoadEdge& edge(EdgeId e) const { return edges_[e]; }
  const std::vector<RoadEdge>& edges() const { return edges_; }
  // Incident edge ids of v in ascending order.
  std::span<const EdgeId> incident(VertexId v) const;
  const std::vector<VertexId>& rsu_vertices() const { return rsu_; }
  bool is_rsu(VertexId v) const { return is_rsu_[v] != 0; }

  double edge_length(EdgeId e) const;
  double longest_edge() const;
  double vertex_distance(VertexId a, VertexId b) const;

  // FNV-1a over the canonical description (positions, edges, RSUs).
  std::uint64_t fingerprint() const;

 private:
  std::vector<Point> positions_;
  std::vector<RoadEdge> edges_;
  std::vector<VertexId> rsu_;
  std::vector<char> is_rsu_;
  std::vector<int> incident_offset_;
  std::vector<EdgeId> incident_edges_;
};

// Per-slot dynamic weights. vertex_weight is 2 at the UAV, 1 at RSUs not
// hosting the UAV, 0 elsewhere.
struct SlotOccupancy {
  std::vector<int> edge_vehicles;
  std::vector<int> vertex_weight;
  VertexId uav_vertex = -1;

  bool operator==(const SlotOccupancy&) const = default;
};

// Fills vertex weights from the RSU set and the UAV position.
SlotOccupancy make_occupancy(const RoadTopologyGraph& graph,
                             std::vector<int> edge_vehicles,
                             VertexId uav_vertex);

struct Connectivity {
  std::vector<char> c_vertex;  // indexed by vertex id
  std::vector<char> c_edge;    // indexed by edge id
  std::vector<VertexId> c_vertex_ids() const;
  std::vector<EdgeId> c_edge_ids() const;
};

// c-vertex: covered (weight > 0) or some incident edge carries vehicles.
// c-edge: carries vehicles or touches a c-vertex.
Connectivity classify_connectivity(const RoadTopologyGraph& graph,
                                   const SlotOccupancy& occ);

// Line-graph dual of the c-graph, stored as its component partition. Dual
// vertex i corresponds to primal c-edge `edge_ids[i]`; two dual vertices are
// adjacent iff their primal edges share an endpoint.
struct DualConnectedGraph {
  std::vector<EdgeId> edge_ids;  // ascending
  std::vector<int> weights;      // p_e of each dual vertex
  std::vector<int> component;    // component index per dual vertex
  int component_count = 0;       // components numbered by smallest edge id
};

DualConnectedGraph build_dcg(const RoadTopologyGraph& graph,
                             const SlotOccupancy& occ,
                             const Connectivity& conn);

struct FragmentationReport {
  int component_count = 0;             // K(t)
  std::vector<long> component_weights;  // n_1..n_K, ordered by component id
  double mean_component_weight = 0.0;  // C(t)
  long largest_component_weight = 0;
  std::vector<EdgeId> c_edge_ids;
  std::vector<VertexId> c_vertex_ids;
};

FragmentationReport fragmentation_metrics(const DualConnectedGraph& dcg);

// classify -> build_dcg -> metrics in one call.
FragmentationReport fragment(const RoadTopologyGraph& graph,
                             const SlotOccupancy& occ);

// K(t) only, without allocating the report. Hot path for the env.
int fragment_count(const RoadTopologyGraph& graph, const SlotOccupancy& occ);

// Batched evaluation over many occupancies of the same graph. The OpenMP
// version and the serial reference must agree exactly.
std::vector<FragmentationReport> fragment_batch(
    const RoadTopologyGraph& graph, std::span<const SlotOccupancy> occs);
std::vector<FragmentationReport> fragment_batch_serial(
    const RoadTopologyGraph& graph, std::span<const SlotOccupancy> occs);

// Synthetic maps.
RoadTopologyGraph make_grid_graph(int rows, int cols, double spacing,
                                  std::vector<VertexId> rsu);

}  // namespace uavrelay
