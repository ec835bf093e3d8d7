#pragma once

#include <array>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irene/graph/relations.hpp"
#include "irene/gridworld/types.hpp"

namespace irene::graph {

using gridworld::Frame;
using gridworld::GridSpec;

inline std::pair<double, double> normalize_position(int x, int y, int width, int height) {
  const double nx = width > 1 ? 2.0 * x / (width - 1) - 1.0 : 0.0;
  const double ny = height > 1 ? 2.0 * y / (height - 1) - 1.0 : 0.0;
  return {nx, ny};
}

struct NodeFeatures {
  std::array<double, gridworld::kNumKinds> type{};
  std::array<double, gridworld::kNumShapes> shape{};
  std::array<double, 3> colour{};    // G, B, R in [0, 1]
  std::array<double, 2> position{};  // x, y in [-1, 1]
  friend bool operator==(const NodeFeatures&, const NodeFeatures&) = default;
};

inline NodeFeatures node_features(const gridworld::Entity& e, const GridSpec& grid) {
  NodeFeatures f;
  f.type[static_cast<std::size_t>(e.kind)] = 1.0;
  f.shape[static_cast<std::size_t>(e.shape)] = 1.0;
  for (std::size_t c = 0; c < 3; ++c) f.colour[c] = e.colour.gbr[c] / 255.0;
  const auto [x, y] = normalize_position(e.pos.x, e.pos.y, grid.width, grid.height);
  f.position = {x, y};
  return f;
}

struct Edge {
  int src = 0;
  int dst = 0;
  EdgeType type = EdgeType::right;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge& a, const Edge& b) {
    if (auto c = a.src <=> b.src; c != 0) return c;
    if (auto c = a.dst <=> b.dst; c != 0) return c;
    return static_cast<int>(a.type) <=> static_cast<int>(b.type);
  }
};

struct FrameGraph {
  std::vector<NodeFeatures> nodes;
  std::vector<int> entity_ids;   // entity id of each node
  std::vector<gridworld::Entity> entities;  // source entity per node, for inspection
  std::vector<Edge> edges;
  RelationMask mask;

  std::size_t num_nodes() const { return nodes.size(); }

  /// Nodes touched by no edge at all.
  std::vector<int> isolated_nodes() const {
    std::vector<char> seen(nodes.size(), 0);
    for (const auto& e : edges) seen[static_cast<std::size_t>(e.src)] = seen[static_cast<std::size_t>(e.dst)] = 1;
    std::vector<int> out;
    for (std::size_t i = 0; i < seen.size(); ++i)
      if (!seen[i]) out.push_back(static_cast<int>(i));
    return out;
  }

  std::size_t degree(int node) const {
    std::size_t d = 0;
    for (const auto& e : edges) d += (e.src == node) + (e.dst == node);
    return d;
  }
};

struct GraphOptions {
  /// The outer wall ring is identical in every frame; it is left out of the graph unless asked for.
  bool include_boundary_walls = false;
};

inline bool is_boundary_wall(const gridworld::Entity& e, const GridSpec& grid) {
  if (e.kind != gridworld::EntityKind::wall) return false;
  const int i = e.pos.x / grid.spacing, j = e.pos.y / grid.spacing;
  return i == 0 || j == 0 || i == grid.columns() - 1 || j == grid.rows() - 1;
}

/// One node per (kept) entity in frame order; a typed edge src -> dst for every ordered pair of
/// distinct nodes and every enabled relation that holds for (src, dst).
inline FrameGraph build_graph(const Frame& frame, RelationMask mask, const GraphOptions& opts = {}) {
  FrameGraph g;
  g.mask = mask;
  for (const auto& e : frame.entities) {
    if (!opts.include_boundary_walls && is_boundary_wall(e, frame.grid)) continue;
    g.nodes.push_back(node_features(e, frame.grid));
    g.entity_ids.push_back(e.id);
    g.entities.push_back(e);
  }
  std::vector<EdgeType> enabled;
  for (std::size_t t = 0; t < kNumEdgeTypes; ++t)
    if (mask.contains(edge_type(t))) enabled.push_back(edge_type(t));
  const int n = static_cast<int>(g.entities.size());
  const int l = frame.grid.spacing;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      if (a == b) continue;
      for (EdgeType t : enabled)
        if (relation_holds(g.entities[static_cast<std::size_t>(a)], g.entities[static_cast<std::size_t>(b)], t, l))
          g.edges.push_back(Edge{a, b, t});
    }
  return g;
}

inline nlohmann::json graph_to_json(const FrameGraph& g) {
  using nlohmann::json;
  json nodes = json::array();
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& f = g.nodes[i];
    nodes.push_back(json{{"index", i},
                         {"entity_id", g.entity_ids[i]},
                         {"kind", std::string(gridworld::to_string(g.entities[i].kind))},
                         {"type_onehot", f.type},
                         {"shape_onehot", f.shape},
                         {"colour", f.colour},
                         {"position", f.position}});
  }
  json edges = json::array();
  for (const auto& e : g.edges) edges.push_back(json::array({e.src, e.dst, std::string(to_string(e.type))}));
  return json{{"vocab_version", gridworld::kVocabVersion},
              {"relations", g.mask.name()},
              {"nodes", std::move(nodes)},
              {"edges", std::move(edges)}};
}

}  // namespace irene::graph
