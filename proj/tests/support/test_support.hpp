#pragma once

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "uavrelay/road_graph.hpp"

namespace testsupport {

using namespace uavrelay;

// Random spanning tree plus `extra` chords, coordinates in [0, extent]^2.
inline RoadTopologyGraph random_connected_graph(std::mt19937_64& rng, int n,
                                                int extra, int rsu_count,
                                                double extent = 1000.0) {
  std::uniform_real_distribution<double> coord(0.0, extent);
  std::vector<Point> pos(n);
  for (auto& p : pos) p = {coord(rng), coord(rng)};
  std::set<std::pair<int, int>> seen;
  std::vector<RoadEdge> edges;
  for (int v = 1; v < n; ++v) {
    const int u = std::uniform_int_distribution<int>(0, v - 1)(rng);
    seen.insert({u, v});
    edges.push_back({u, v});
  }
  for (int tries = 0; tries < extra * 4 && extra > 0; ++tries) {
    int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
    int b = std::uniform_int_distribution<int>(0, n - 1)(rng);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (!seen.insert({a, b}).second) continue;
    edges.push_back({a, b});
    if (--extra == 0) break;
  }
  std::vector<VertexId> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(rsu_count, n));
  std::sort(all.begin(), all.end());
  return RoadTopologyGraph(std::move(pos), std::move(edges), std::move(all));
}

inline std::vector<int> random_counts(std::mt19937_64& rng, int m,
                                      double p_busy, int max_count) {
  std::bernoulli_distribution busy(p_busy);
  std::uniform_int_distribution<int> count(1, max_count);
  std::vector<int> c(m, 0);
  for (auto& x : c) x = busy(rng) ? count(rng) : 0;
  return c;
}

struct PrimalOracle {
  int components = 0;      // c-graph components holding at least one c-edge
  long c_edge_vehicles = 0;
};

// Straight from the definitions: classify, then BFS over the primal graph
// restricted to c-edges.
inline PrimalOracle primal_oracle(const RoadTopologyGraph& g,
                                  const std::vector<int>& counts, int uav) {
  const int n = g.vertex_count();
  const int m = g.edge_count();
  std::vector<int> weight(n, 0);
  for (VertexId r : g.rsu_vertices()) weight[r] = 1;
  if (uav >= 0) weight[uav] = 2;
  std::vector<bool> cv(n, false);
  for (int v = 0; v < n; ++v) cv[v] = weight[v] > 0;
  for (int e = 0; e < m; ++e) {
    if (counts[e] > 0) {
      cv[g.edge(e).u] = true;
      cv[g.edge(e).v] = true;
    }
  }
  std::vector<bool> ce(m, false);
  std::vector<std::vector<int>> adj(n);
  PrimalOracle out;
  for (int e = 0; e < m; ++e) {
    ce[e] = counts[e] > 0 || cv[g.edge(e).u] || cv[g.edge(e).v];
    if (!ce[e]) continue;
    out.c_edge_vehicles += counts[e];
    adj[g.edge(e).u].push_back(g.edge(e).v);
    adj[g.edge(e).v].push_back(g.edge(e).u);
  }
  std::vector<bool> seen(n, false);
  for (int s = 0; s < n; ++s) {
    if (seen[s] || adj[s].empty()) continue;
    ++out.components;
    std::queue<int> q;
    q.push(s);
    seen[s] = true;
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      for (int w : adj[v]) {
        if (!seen[w]) {
          seen[w] = true;
          q.push(w);
        }
      }
    }
  }
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("uavrelay_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// a - b - c - ... along the x axis with the given spacing.
inline RoadTopologyGraph path_graph(int n, double spacing,
                                    std::vector<VertexId> rsu = {}) {
  std::vector<Point> pos;
  std::vector<RoadEdge> edges;
  for (int i = 0; i < n; ++i) pos.push_back({i * spacing, 0.0});
  for (int i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1});
  return RoadTopologyGraph(std::move(pos), std::move(edges), std::move(rsu));
}

}  // namespace testsupport
