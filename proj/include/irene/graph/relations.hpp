#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>

#include "irene/gridworld/types.hpp"

namespace irene::graph {

using gridworld::Entity;

/// Spatial relations between two grid entities a and b. Directions use +y as "top".
enum class EdgeType : std::uint8_t {
  right_adj,
  left_adj,
  top_adj,
  bottom_adj,
  top_right_adj,
  top_left_adj,
  bottom_right_adj,
  bottom_left_adj,
  right,
  left,
  top,
  bottom,
  aligned,
  adjacent,
};

inline constexpr std::size_t kNumEdgeTypes = 14;

inline constexpr std::array<std::string_view, kNumEdgeTypes> kEdgeTypeNames = {
    "RightAdj",       "LeftAdj",       "TopAdj", "BottomAdj", "TopRightAdj", "TopLeftAdj", "BottomRightAdj",
    "BottomLeftAdj", "Right",          "Left",   "Top",       "Bottom",      "Aligned",    "Adjacent"};

inline std::string_view to_string(EdgeType t) { return kEdgeTypeNames[static_cast<std::size_t>(t)]; }

inline std::optional<EdgeType> parse_edge_type(std::string_view s) {
  for (std::size_t i = 0; i < kNumEdgeTypes; ++i)
    if (kEdgeTypeNames[i] == s) return static_cast<EdgeType>(i);
  return std::nullopt;
}

inline constexpr EdgeType edge_type(std::size_t i) { return static_cast<EdgeType>(i); }

inline bool is_local_directional(EdgeType t) { return static_cast<int>(t) <= static_cast<int>(EdgeType::bottom_left_adj); }
inline bool is_remote_directional(EdgeType t) {
  return t == EdgeType::right || t == EdgeType::left || t == EdgeType::top || t == EdgeType::bottom;
}

/// The relation that holds for (b, a) whenever `t` holds for (a, b).
inline EdgeType inverse(EdgeType t) {
  switch (t) {
    case EdgeType::right_adj: return EdgeType::left_adj;
    case EdgeType::left_adj: return EdgeType::right_adj;
    case EdgeType::top_adj: return EdgeType::bottom_adj;
    case EdgeType::bottom_adj: return EdgeType::top_adj;
    case EdgeType::top_right_adj: return EdgeType::bottom_left_adj;
    case EdgeType::bottom_left_adj: return EdgeType::top_right_adj;
    case EdgeType::top_left_adj: return EdgeType::bottom_right_adj;
    case EdgeType::bottom_right_adj: return EdgeType::top_left_adj;
    case EdgeType::right: return EdgeType::left;
    case EdgeType::left: return EdgeType::right;
    case EdgeType::top: return EdgeType::bottom;
    case EdgeType::bottom: return EdgeType::top;
    case EdgeType::aligned: return EdgeType::aligned;
    case EdgeType::adjacent: return EdgeType::adjacent;
  }
  return t;
}

/// Set of enabled relations.
class RelationMask {
 public:
  constexpr RelationMask() = default;

  static RelationMask all() {
    RelationMask m;
    m.bits_.set();
    return m;
  }
  static RelationMask local() {
    RelationMask m;
    for (std::size_t i = 0; i < kNumEdgeTypes; ++i)
      if (is_local_directional(edge_type(i))) m.bits_.set(i);
    return m;
  }
  static RelationMask remote() {
    RelationMask m;
    for (std::size_t i = 0; i < kNumEdgeTypes; ++i)
      if (is_remote_directional(edge_type(i))) m.bits_.set(i);
    return m;
  }

  /// "all", "local" or "remote".
  static std::optional<RelationMask> parse(std::string_view name) {
    if (name == "all") return all();
    if (name == "local") return local();
    if (name == "remote") return remote();
    return std::nullopt;
  }

  std::string name() const {
    if (*this == all()) return "all";
    if (*this == local()) return "local";
    if (*this == remote()) return "remote";
    return "custom:" + bits_.to_string();
  }

  RelationMask& enable(EdgeType t) {
    bits_.set(static_cast<std::size_t>(t));
    return *this;
  }
  bool contains(EdgeType t) const { return bits_.test(static_cast<std::size_t>(t)); }
  std::size_t count() const { return bits_.count(); }
  unsigned long to_ulong() const { return bits_.to_ulong(); }

  friend bool operator==(const RelationMask&, const RelationMask&) = default;

 private:
  std::bitset<kNumEdgeTypes> bits_;
};

/// Evaluates relation `t` from entity a to entity b on a lattice with spacing `l`.
inline bool relation_holds(const Entity& a, const Entity& b, EdgeType t, int l) {
  const int xa = a.pos.x, ya = a.pos.y, xb = b.pos.x, yb = b.pos.y;
  switch (t) {
    case EdgeType::right_adj: return xa == xb + l && ya == yb;
    case EdgeType::left_adj: return xa == xb - l && ya == yb;
    case EdgeType::top_adj: return ya == yb + l && xa == xb;
    case EdgeType::bottom_adj: return ya == yb - l && xa == xb;
    case EdgeType::top_right_adj: return xa == xb + l && ya == yb + l;
    case EdgeType::top_left_adj: return xa == xb - l && ya == yb + l;
    case EdgeType::bottom_right_adj: return xa == xb + l && ya == yb - l;
    case EdgeType::bottom_left_adj: return xa == xb - l && ya == yb - l;
    case EdgeType::right: return xa > xb;
    case EdgeType::left: return xa < xb;
    case EdgeType::top: return ya > yb;
    case EdgeType::bottom: return ya < yb;
    case EdgeType::aligned: return xa == xb || ya == yb;
    case EdgeType::adjacent: return std::abs(xa - xb) <= l && std::abs(ya - yb) <= l;
  }
  return false;
}

}  // namespace irene::graph
