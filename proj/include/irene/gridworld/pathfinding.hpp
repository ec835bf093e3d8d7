#pragma once

#include <array>
#include <deque>
#include <limits>
#include <vector>

#include "irene/gridworld/types.hpp"

namespace irene::gridworld {

/// Blocked/free map over lattice cells. Cells are addressed in coordinate space;
/// off-lattice or out-of-grid positions count as blocked.
class Occupancy {
 public:
  explicit Occupancy(GridSpec grid)
      : grid_(grid), blocked_(static_cast<std::size_t>(grid.columns() * grid.rows()), 0) {}

  /// Walls, barriers and locks block motion; everything else is passable.
  static bool blocks_motion(EntityKind k) {
    return k == EntityKind::wall || k == EntityKind::barrier || k == EntityKind::lock;
  }

  static Occupancy from_frame(const Frame& frame) {
    Occupancy occ(frame.grid);
    for (const auto& e : frame.entities)
      if (blocks_motion(e.kind)) occ.set_blocked(e.pos, true);
    return occ;
  }

  const GridSpec& grid() const { return grid_; }

  bool valid(Cell c) const { return grid_.contains(c) && grid_.on_lattice(c); }

  bool blocked(Cell c) const { return !valid(c) || blocked_[index(c)] != 0; }
  bool free(Cell c) const { return !blocked(c); }

  void set_blocked(Cell c, bool b) {
    if (valid(c)) blocked_[index(c)] = b ? 1 : 0;
  }

  std::size_t index(Cell c) const {
    return static_cast<std::size_t>((c.y / grid_.spacing) * grid_.columns() + c.x / grid_.spacing);
  }

  std::size_t size() const { return blocked_.size(); }

 private:
  GridSpec grid_;
  std::vector<char> blocked_;
};

namespace detail {
inline constexpr std::array<Cell, 8> kMoves = {Cell{1, 0},  Cell{-1, 0}, Cell{0, 1},  Cell{0, -1},
                                               Cell{1, 1},  Cell{1, -1}, Cell{-1, 1}, Cell{-1, -1}};
}  // namespace detail

/// 8-connected step from `from` by lattice offset (dx, dy). Diagonal steps may not cut a blocked corner.
inline bool can_step(const Occupancy& occ, Cell from, Cell d) {
  const int l = occ.grid().spacing;
  const Cell to{from.x + d.x * l, from.y + d.y * l};
  if (occ.blocked(to)) return false;
  if (d.x != 0 && d.y != 0)
    return occ.free(Cell{from.x + d.x * l, from.y}) && occ.free(Cell{from.x, from.y + d.y * l});
  return true;
}

inline constexpr int kUnreachable = std::numeric_limits<int>::max();

/// BFS step counts from `goal` to every lattice cell (motion is symmetric, so this equals the
/// distance from each cell to the goal).
inline std::vector<int> distance_field(const Occupancy& occ, Cell goal) {
  std::vector<int> dist(occ.size(), kUnreachable);
  if (occ.blocked(goal)) return dist;
  const int l = occ.grid().spacing;
  std::deque<Cell> queue{goal};
  dist[occ.index(goal)] = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    const int next = dist[occ.index(c)] + 1;
    for (const Cell d : detail::kMoves) {
      if (!can_step(occ, c, d)) continue;
      const Cell n{c.x + d.x * l, c.y + d.y * l};
      auto& slot = dist[occ.index(n)];
      if (slot == kUnreachable) {
        slot = next;
        queue.push_back(n);
      }
    }
  }
  return dist;
}

inline int path_distance(const Occupancy& occ, Cell start, Cell goal) {
  if (occ.blocked(start)) return kUnreachable;
  return distance_field(occ, goal)[occ.index(start)];
}

/// Minimal-length 8-connected path from start to goal (both endpoints included).
/// Among equally short successors the one closest to the goal in Euclidean terms wins, so the
/// next step is a function of (current cell, goal, occupancy) only. Empty if unreachable.
inline std::vector<Cell> bfs_path(const Occupancy& occ, Cell start, Cell goal) {
  if (occ.blocked(start) || occ.blocked(goal)) return {};
  const auto dist = distance_field(occ, goal);
  if (dist[occ.index(start)] == kUnreachable) return {};
  const int l = occ.grid().spacing;
  std::vector<Cell> path{start};
  Cell cur = start;
  while (cur != goal) {
    const int want = dist[occ.index(cur)] - 1;
    Cell best{};
    long best_score = std::numeric_limits<long>::max();
    for (const Cell d : detail::kMoves) {
      if (!can_step(occ, cur, d)) continue;
      const Cell n{cur.x + d.x * l, cur.y + d.y * l};
      if (dist[occ.index(n)] != want) continue;
      const long dx = n.x - goal.x;
      const long dy = n.y - goal.y;
      const long score = dx * dx + dy * dy;
      if (score < best_score) {
        best_score = score;
        best = n;
      }
    }
    cur = best;
    path.push_back(cur);
  }
  return path;
}

inline std::vector<Cell> shortest_path(const Frame& frame, Cell start, Cell goal) {
  return bfs_path(Occupancy::from_frame(frame), start, goal);
}

}  // namespace irene::gridworld
