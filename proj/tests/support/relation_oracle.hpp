#pragma once

#include <set>
#include <tuple>

#include "irene/graph/graph_builder.hpp"

namespace irene::testing {

using gridworld::Cell;
using gridworld::Frame;

// Independent predicate table, written from the relation definitions with named offsets.
inline bool oracle_relation(Cell a, Cell b, std::size_t t, int l) {
  const int dx = a.x - b.x, dy = a.y - b.y;
  struct Off { int dx, dy; };
  static const Off local[8] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, 1}, {1, -1}, {-1, -1}};
  if (t < 8) return dx == local[t].dx * l && dy == local[t].dy * l;
  switch (t) {
    case 8: return dx > 0;
    case 9: return dx < 0;
    case 10: return dy > 0;
    case 11: return dy < 0;
    case 12: return dx == 0 || dy == 0;
    case 13: return dx * dx <= l * l && dy * dy <= l * l;
  }
  return false;
}

using EdgeKey = std::tuple<int, int, int>;

inline std::set<EdgeKey> oracle_edges(const Frame& f, const graph::RelationMask& mask) {
  std::set<EdgeKey> out;
  const auto n = static_cast<int>(f.entities.size());
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (std::size_t t = 0; t < graph::kNumEdgeTypes; ++t)
        if (a != b && mask.contains(graph::edge_type(t)) &&
            oracle_relation(f.entities[static_cast<std::size_t>(a)].pos, f.entities[static_cast<std::size_t>(b)].pos, t,
                            f.grid.spacing))
          out.insert({a, b, static_cast<int>(t)});
  return out;
}

inline std::set<EdgeKey> edge_set(const graph::FrameGraph& g) {
  std::set<EdgeKey> out;
  for (const auto& e : g.edges) out.insert({e.src, e.dst, static_cast<int>(e.type)});
  return out;
}

}  // namespace irene::testing
