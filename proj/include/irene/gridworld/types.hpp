#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <compare>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "irene/error.hpp"

namespace irene::gridworld {

enum class EntityKind : std::uint8_t { agent, object, wall, barrier, key, lock, home };

inline constexpr std::array<EntityKind, 7> kEntityKinds = {
    EntityKind::agent, EntityKind::object, EntityKind::wall, EntityKind::barrier,
    EntityKind::key,   EntityKind::lock,   EntityKind::home};

inline constexpr std::array<std::string_view, 7> kEntityKindNames = {
    "agent", "object", "wall", "barrier", "key", "lock", "home"};

enum class Shape : std::uint8_t {
  circle, square, triangle, pentagon, hexagon, star, diamond, heart, cross, crescent
};

inline constexpr std::array<std::string_view, 10> kShapeNames = {
    "circle", "square", "triangle", "pentagon", "hexagon",
    "star",   "diamond", "heart",   "cross",    "crescent"};

/// Bumped whenever the kind or shape vocabulary changes; one-hot indices depend on it.
inline constexpr int kVocabVersion = 1;

inline constexpr std::size_t kNumKinds = kEntityKinds.size();
inline constexpr std::size_t kNumShapes = kShapeNames.size();

inline std::string_view to_string(EntityKind k) { return kEntityKindNames[static_cast<std::size_t>(k)]; }
inline std::string_view to_string(Shape s) { return kShapeNames[static_cast<std::size_t>(s)]; }

inline std::optional<EntityKind> parse_kind(std::string_view name) {
  for (std::size_t i = 0; i < kEntityKindNames.size(); ++i)
    if (kEntityKindNames[i] == name) return kEntityKinds[i];
  return std::nullopt;
}

inline std::optional<Shape> parse_shape(std::string_view name) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i)
    if (kShapeNames[i] == name) return static_cast<Shape>(i);
  return std::nullopt;
}

struct Cell {
  int x = 0;
  int y = 0;
  friend constexpr bool operator==(Cell, Cell) = default;
  friend constexpr auto operator<=>(Cell, Cell) = default;
};

inline int chebyshev(Cell a, Cell b) { return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)); }

/// Colour channels are stored in G, B, R order, each 0..255.
struct Colour {
  std::array<int, 3> gbr{0, 0, 0};
  friend bool operator==(const Colour&, const Colour&) = default;
};

struct Entity {
  int id = 0;
  EntityKind kind = EntityKind::object;
  Cell pos;
  Colour colour;
  Shape shape = Shape::circle;
  friend bool operator==(const Entity&, const Entity&) = default;
};

/// Coordinates range over [0, width) x [0, height); occupied positions are multiples of spacing.
struct GridSpec {
  int width = 10;
  int height = 10;
  int spacing = 1;

  int columns() const { return (width - 1) / spacing + 1; }
  int rows() const { return (height - 1) / spacing + 1; }
  bool contains(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  bool on_lattice(Cell c) const { return c.x % spacing == 0 && c.y % spacing == 0; }
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct Frame {
  std::vector<Entity> entities;
  GridSpec grid;

  const Entity* agent() const {
    for (const auto& e : entities)
      if (e.kind == EntityKind::agent) return &e;
    return nullptr;
  }
  const Entity* find(int id) const {
    for (const auto& e : entities)
      if (e.id == id) return &e;
    return nullptr;
  }
  friend bool operator==(const Frame&, const Frame&) = default;
};

/// actions[j] is the agent position in frames[j + 1].
struct Trial {
  std::vector<Frame> frames;
  std::vector<Cell> actions;

  std::vector<Cell> agent_path() const {
    std::vector<Cell> out;
    out.reserve(frames.size());
    for (const auto& f : frames)
      if (const auto* a = f.agent()) out.push_back(a->pos);
    return out;
  }
  friend bool operator==(const Trial&, const Trial&) = default;
};

enum class TaskKind : std::uint8_t {
  // training
  single_object,
  no_nav_preference,
  single_object_multi_agent,
  agent_blocked_instrumental,
  // evaluation
  preference,
  multi_agent,
  inaccessible_goal,
  eff_path_control,
  eff_time_control,
  eff_irrational_agent,
  inst_no_barrier,
  inst_inconsequential_barrier,
  inst_blocking_barrier,
};

inline constexpr std::array<TaskKind, 4> kTrainingTasks = {
    TaskKind::single_object, TaskKind::no_nav_preference, TaskKind::single_object_multi_agent,
    TaskKind::agent_blocked_instrumental};

/// Evaluation tasks in report row order.
inline constexpr std::array<TaskKind, 9> kEvaluationTasks = {
    TaskKind::preference,           TaskKind::multi_agent,     TaskKind::inaccessible_goal,
    TaskKind::eff_path_control,     TaskKind::eff_time_control, TaskKind::eff_irrational_agent,
    TaskKind::inst_no_barrier,      TaskKind::inst_inconsequential_barrier,
    TaskKind::inst_blocking_barrier};

inline constexpr std::array<std::string_view, 13> kTaskNames = {
    "single_object",     "no_nav_preference", "single_object_multi_agent", "agent_blocked_instrumental",
    "preference",        "multi_agent",       "inaccessible_goal",         "eff_path_control",
    "eff_time_control",  "eff_irrational_agent", "inst_no_barrier",        "inst_inconsequential_barrier",
    "inst_blocking_barrier"};

inline constexpr std::array<std::string_view, 13> kTaskDisplayNames = {
    "Single-Object",        "No-Navigation Preference", "Single-Object Multi-Agent",
    "Agent-Blocked Instrumental", "Preference",         "Multi-Agent",
    "Inaccessible Goal",    "Eff. Path Control",        "Eff. Time Control",
    "Eff. Irrational Agent", "Inst. No Barrier",        "Inst. Incons. Barrier",
    "Inst. Blocking Barrier"};

inline std::string_view to_string(TaskKind t) { return kTaskNames[static_cast<std::size_t>(t)]; }
inline std::string_view display_name(TaskKind t) { return kTaskDisplayNames[static_cast<std::size_t>(t)]; }

inline bool is_training_task(TaskKind t) {
  return static_cast<int>(t) <= static_cast<int>(TaskKind::agent_blocked_instrumental);
}
inline bool is_evaluation_task(TaskKind t) { return !is_training_task(t); }

/// One-letter codes used for training-task subsets: S, P, M, I.
inline char training_code(TaskKind t) {
  switch (t) {
    case TaskKind::single_object: return 'S';
    case TaskKind::no_nav_preference: return 'P';
    case TaskKind::single_object_multi_agent: return 'M';
    case TaskKind::agent_blocked_instrumental: return 'I';
    default: throw Error("not a training task: " + std::string(to_string(t)));
  }
}

/// Accepts snake_case names, CamelCase names (case-insensitive, underscores ignored) and S/P/M/I codes.
inline std::optional<TaskKind> parse_task(std::string_view name) {
  auto squash = [](std::string_view s) {
    std::string out;
    for (char c : s)
      if (c != '_' && c != '-') out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
  };
  if (name.size() == 1) {
    switch (std::toupper(static_cast<unsigned char>(name[0]))) {
      case 'S': return TaskKind::single_object;
      case 'P': return TaskKind::no_nav_preference;
      case 'M': return TaskKind::single_object_multi_agent;
      case 'I': return TaskKind::agent_blocked_instrumental;
      default: return std::nullopt;
    }
  }
  const auto key = squash(name);
  for (std::size_t i = 0; i < kTaskNames.size(); ++i)
    if (squash(kTaskNames[i]) == key) return static_cast<TaskKind>(i);
  return std::nullopt;
}

enum class EpisodeLabel : std::uint8_t { expected, unexpected, train_expected };

inline std::string_view to_string(EpisodeLabel l) {
  switch (l) {
    case EpisodeLabel::expected: return "expected";
    case EpisodeLabel::unexpected: return "unexpected";
    case EpisodeLabel::train_expected: return "train_expected";
  }
  return "?";
}

inline std::optional<EpisodeLabel> parse_label(std::string_view s) {
  if (s == "expected") return EpisodeLabel::expected;
  if (s == "unexpected") return EpisodeLabel::unexpected;
  if (s == "train_expected") return EpisodeLabel::train_expected;
  return std::nullopt;
}

inline constexpr std::size_t kFamiliarisationTrials = 8;

struct Episode {
  TaskKind task = TaskKind::single_object;
  EpisodeLabel label = EpisodeLabel::train_expected;
  GridSpec grid;
  std::vector<Trial> familiarisation;
  Trial test;
  friend bool operator==(const Episode&, const Episode&) = default;
};

struct EpisodePair {
  Episode expected;
  Episode unexpected;
  friend bool operator==(const EpisodePair&, const EpisodePair&) = default;
};

}  // namespace irene::gridworld
