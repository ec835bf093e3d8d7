#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "irene/error.hpp"
#include "irene/gridworld/pathfinding.hpp"
#include "irene/gridworld/types.hpp"

namespace irene::gridworld {

struct GeneratorConfig {
  GridSpec grid;
  int max_attempts = 500;
  /// Minimum Chebyshev distance (in lattice steps) between a trial's start and its goal.
  int min_goal_distance = 2;
};

namespace detail {

inline constexpr std::array<Colour, 8> kPalette = {
    Colour{{0, 0, 230}},   Colour{{200, 0, 0}},  Colour{{0, 200, 0}},   Colour{{220, 0, 220}},
    Colour{{230, 230, 0}}, Colour{{0, 230, 230}}, Colour{{120, 60, 240}}, Colour{{90, 200, 140}}};

inline constexpr std::array<Shape, 7> kShapePalette = {Shape::circle,  Shape::triangle, Shape::pentagon,
                                                       Shape::hexagon, Shape::star,     Shape::heart,
                                                       Shape::crescent};

inline constexpr Colour kWallColour{{128, 128, 128}};
inline constexpr Colour kBarrierColour{{69, 19, 139}};
inline constexpr Colour kKeyColour{{215, 0, 255}};
inline constexpr Colour kLockColour{{165, 0, 255}};

// Fixed ids for the movable and goal entities; obstacle ids are assigned from kFirstObstacleId.
inline constexpr int kAgentId = 0;
inline constexpr int kSecondAgentId = 1;
inline constexpr int kObjectAId = 2;
inline constexpr int kObjectBId = 3;
inline constexpr int kKeyId = 4;
inline constexpr int kLockId = 5;
inline constexpr int kFirstObstacleId = 6;

struct Removal {
  std::size_t step;
  std::vector<int> ids;
};

/// True when `a` is a prefix of `b` (equal paths included).
inline bool is_prefix(const std::vector<Cell>& a, const std::vector<Cell>& b) {
  return a.size() <= b.size() && std::equal(a.begin(), a.end(), b.begin());
}

class Builder {
 public:
  Builder(const GeneratorConfig& cfg, TaskKind task, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.grid.columns() < 6 || cfg.grid.rows() < 6 || cfg.grid.spacing < 1)
      throw LayoutInfeasible("grid must have at least 6x6 lattice cells");
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(task)};
    rng_.seed(seq);
    std::vector<std::size_t> colours(kPalette.size()), shapes(kShapePalette.size());
    for (std::size_t i = 0; i < colours.size(); ++i) colours[i] = i;
    for (std::size_t i = 0; i < shapes.size(); ++i) shapes[i] = i;
    std::shuffle(colours.begin(), colours.end(), rng_);
    std::shuffle(shapes.begin(), shapes.end(), rng_);
    colour_order_ = std::move(colours);
    shape_order_ = std::move(shapes);
  }

  const GridSpec& grid() const { return cfg_.grid; }
  int step() const { return cfg_.grid.spacing; }
  std::mt19937_64& rng() { return rng_; }

  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin() { return uniform(0, 1) == 1; }

  /// Distinct colour/shape for the n-th appearance drawn in this episode.
  Entity make(int id, EntityKind kind) {
    Entity e;
    e.id = id;
    e.kind = kind;
    e.colour = kPalette[colour_order_.at(drawn_)];
    e.shape = kShapePalette[shape_order_.at(drawn_)];
    ++drawn_;
    return e;
  }

  static Entity fixed(int id, EntityKind kind, Cell pos, Colour colour, Shape shape) {
    return Entity{id, kind, pos, colour, shape};
  }

  bool interior(Cell c) const {
    const int l = step();
    if (!grid().contains(c) || !grid().on_lattice(c)) return false;
    const int i = c.x / l, j = c.y / l;
    return i >= 1 && j >= 1 && i <= grid().columns() - 2 && j <= grid().rows() - 2;
  }

  Cell random_interior() {
    const int l = step();
    return Cell{l * uniform(1, grid().columns() - 2), l * uniform(1, grid().rows() - 2)};
  }

  Cell offset(Cell c, int dx, int dy) const { return Cell{c.x + dx * step(), c.y + dy * step()}; }

  int lattice_distance(Cell a, Cell b) const { return chebyshev(a, b) / step(); }

  std::vector<Entity> boundary_walls() const {
    std::vector<Entity> out;
    const int l = step(), cols = grid().columns(), rows = grid().rows();
    int id = kFirstObstacleId + 1000;
    for (int j = 0; j < rows; ++j)
      for (int i = 0; i < cols; ++i)
        if (i == 0 || j == 0 || i == cols - 1 || j == rows - 1)
          out.push_back(fixed(id++, EntityKind::wall, Cell{i * l, j * l}, kWallColour, Shape::square));
    return out;
  }

  /// Cells at Chebyshev distance exactly one from the rectangle spanned by `inner`.
  std::vector<Cell> ring_around(const std::vector<Cell>& inner) const {
    std::set<Cell> ring;
    for (Cell c : inner)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) ring.insert(offset(c, dx, dy));
    for (Cell c : inner) ring.erase(c);
    return {ring.begin(), ring.end()};
  }

  Frame frame_of(const std::vector<Entity>& entities) const { return Frame{entities, grid()}; }

  Occupancy occupancy_of(const std::vector<Entity>& entities) const {
    return Occupancy::from_frame(frame_of(entities));
  }

  /// Renders one trial: the agent (id `agent_id`, already in `scene`) walks `path`; each removal
  /// drops entities from the frame at its step and all later ones.
  Trial render(const std::vector<Entity>& scene, int agent_id, const std::vector<Cell>& path,
               const std::vector<Removal>& removals = {}) const {
    if (path.size() < 2) throw LayoutInfeasible("trajectory must contain at least two frames");
    Trial trial;
    trial.frames.reserve(path.size());
    for (std::size_t k = 0; k < path.size(); ++k) {
      Frame f{{}, grid()};
      for (const auto& e : scene) {
        bool gone = false;
        for (const auto& r : removals)
          if (k >= r.step && std::find(r.ids.begin(), r.ids.end(), e.id) != r.ids.end()) gone = true;
        if (gone) continue;
        Entity copy = e;
        if (e.id == agent_id) copy.pos = path[k];
        f.entities.push_back(copy);
      }
      trial.frames.push_back(std::move(f));
    }
    for (std::size_t k = 1; k < path.size(); ++k) trial.actions.push_back(path[k]);
    return trial;
  }

  template <class F>
  auto retry(const char* what, F&& attempt) {
    for (int i = 0; i < cfg_.max_attempts; ++i)
      if (auto r = attempt()) return std::move(*r);
    throw LayoutInfeasible(std::string("could not place layout for ") + what + " after " +
                           std::to_string(cfg_.max_attempts) + " attempts");
  }

  int min_goal_distance() const { return cfg_.min_goal_distance; }

 private:
  const GeneratorConfig& cfg_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> colour_order_;
  std::vector<std::size_t> shape_order_;
  std::size_t drawn_ = 0;
};

inline std::vector<Cell> concat_paths(std::initializer_list<const std::vector<Cell>*> parts) {
  std::vector<Cell> out;
  for (const auto* p : parts) {
    if (p->empty()) return {};
    if (!out.empty() && out.back() != p->front()) return {};
    out.insert(out.end(), out.empty() ? p->begin() : p->begin() + 1, p->end());
  }
  return out;
}

inline std::vector<Entity> with(std::vector<Entity> base, std::initializer_list<Entity> extra) {
  base.insert(base.end(), extra.begin(), extra.end());
  return base;
}

inline std::size_t index_of(const std::vector<Cell>& path, Cell c) {
  return static_cast<std::size_t>(std::find(path.begin(), path.end(), c) - path.begin());
}

/// Single-object navigation trial with a freshly sampled layout.
inline Trial single_object_trial(Builder& b, const Entity& agent_proto, const Entity& object_proto) {
  return b.retry("single object trial", [&]() -> std::optional<Trial> {
    Entity agent = agent_proto, object = object_proto;
    agent.pos = b.random_interior();
    object.pos = b.random_interior();
    if (b.lattice_distance(agent.pos, object.pos) < b.min_goal_distance()) return std::nullopt;
    auto scene = with(b.boundary_walls(), {agent, object});
    auto path = bfs_path(b.occupancy_of(scene), agent.pos, object.pos);
    if (path.empty()) return std::nullopt;
    return b.render(scene, agent.id, path);
  });
}

struct InstrumentalLayout {
  std::vector<Entity> scene;       // everything, barrier included
  std::vector<int> barrier_ids;    // barrier cells and lock
  Cell key;
  Cell lock;
  Cell object;
};

/// key -> lock -> object route. The lock is walkable once the key is held; reaching it opens the barrier.
inline std::optional<std::pair<std::vector<Cell>, std::vector<Removal>>> instrumental_route(
    const Builder& b, const InstrumentalLayout& lay, Cell start) {
  auto occ = b.occupancy_of(lay.scene);
  auto to_key = bfs_path(occ, start, lay.key);
  occ.set_blocked(lay.lock, false);
  auto to_lock = bfs_path(occ, lay.key, lay.lock);
  std::vector<Entity> opened;
  for (const auto& e : lay.scene)
    if (std::find(lay.barrier_ids.begin(), lay.barrier_ids.end(), e.id) == lay.barrier_ids.end())
      opened.push_back(e);
  auto to_object = bfs_path(b.occupancy_of(opened), lay.lock, lay.object);
  auto path = concat_paths({&to_key, &to_lock, &to_object});
  if (path.empty()) return std::nullopt;
  const std::size_t key_step = to_key.size() - 1;
  const std::size_t lock_step = key_step + to_lock.size() - 1;
  return std::make_pair(path, std::vector<Removal>{{key_step, {kKeyId}}, {lock_step, lay.barrier_ids}});
}

}  // namespace detail

/// Deterministic BIB-style episode generator; pure in (config, task, seed).
class EpisodeGenerator {
 public:
  explicit EpisodeGenerator(GeneratorConfig cfg = {}) : cfg_(cfg) {}

  const GeneratorConfig& config() const { return cfg_; }

  Episode training_episode(TaskKind task, std::uint64_t seed) const {
    if (!is_training_task(task))
      throw Error("training episodes require a training task, got " + std::string(to_string(task)));
    detail::Builder b(cfg_, task, seed);
    Episode ep;
    ep.task = task;
    ep.label = EpisodeLabel::train_expected;
    ep.grid = cfg_.grid;
    std::vector<Trial> trials;
    switch (task) {
      case TaskKind::single_object:
      case TaskKind::single_object_multi_agent: {
        const Entity agent = b.make(detail::kAgentId, EntityKind::agent);
        const Entity object = b.make(detail::kObjectAId, EntityKind::object);
        for (std::size_t i = 0; i < 9; ++i) {
          if (i == 8 && task == TaskKind::single_object_multi_agent) {
            Entity second = b.make(detail::kSecondAgentId, EntityKind::agent);
            trials.push_back(detail::single_object_trial(b, second, object));
          } else {
            trials.push_back(detail::single_object_trial(b, agent, object));
          }
        }
        break;
      }
      case TaskKind::no_nav_preference: {
        const Entity agent = b.make(detail::kAgentId, EntityKind::agent);
        const Entity preferred = b.make(detail::kObjectAId, EntityKind::object);
        const Entity other = b.make(detail::kObjectBId, EntityKind::object);
        for (std::size_t i = 0; i < 9; ++i) trials.push_back(no_nav_trial(b, agent, preferred, other));
        break;
      }
      case TaskKind::agent_blocked_instrumental: {
        const Entity agent = b.make(detail::kAgentId, EntityKind::agent);
        const Entity object = b.make(detail::kObjectAId, EntityKind::object);
        for (std::size_t i = 0; i < 9; ++i) trials.push_back(agent_blocked_trial(b, agent, object));
        break;
      }
      default: break;
    }
    ep.test = std::move(trials.back());
    trials.pop_back();
    ep.familiarisation = std::move(trials);
    return ep;
  }

  EpisodePair eval_pair(TaskKind task, std::uint64_t seed) const {
    if (!is_evaluation_task(task))
      throw Error("evaluation pairs require an evaluation task, got " + std::string(to_string(task)));
    detail::Builder b(cfg_, task, seed);
    std::vector<Trial> fam;
    Trial expected, unexpected;
    switch (task) {
      case TaskKind::preference:
      case TaskKind::multi_agent: preference_like(b, task, fam, expected, unexpected); break;
      case TaskKind::inaccessible_goal: inaccessible_goal(b, fam, expected, unexpected); break;
      case TaskKind::eff_path_control:
      case TaskKind::eff_time_control: efficiency_control(b, task, fam, expected, unexpected); break;
      case TaskKind::eff_irrational_agent: irrational_agent(b, fam, expected, unexpected); break;
      case TaskKind::inst_no_barrier:
      case TaskKind::inst_inconsequential_barrier:
      case TaskKind::inst_blocking_barrier: instrumental(b, task, fam, expected, unexpected); break;
      default: break;
    }
    EpisodePair pair;
    pair.expected = Episode{task, EpisodeLabel::expected, cfg_.grid, fam, std::move(expected)};
    pair.unexpected = Episode{task, EpisodeLabel::unexpected, cfg_.grid, std::move(fam), std::move(unexpected)};
    return pair;
  }

  /// Initial frame of the test trial (the expected one for evaluation tasks); this is where each
  /// task's structural constraint is visible.
  Frame layout(TaskKind task, std::uint64_t seed) const {
    if (is_training_task(task)) return training_episode(task, seed).test.frames.front();
    return eval_pair(task, seed).expected.test.frames.front();
  }

 private:
  using Builder = detail::Builder;

  static Trial no_nav_trial(Builder& b, const Entity& agent_proto, const Entity& pref_proto,
                            const Entity& other_proto) {
    return b.retry("no-navigation preference trial", [&]() -> std::optional<Trial> {
      Entity agent = agent_proto, pref = pref_proto, other = other_proto;
      agent.pos = b.random_interior();
      std::vector<Cell> around;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if ((dx != 0 || dy != 0) && b.interior(b.offset(agent.pos, dx, dy)))
            around.push_back(b.offset(agent.pos, dx, dy));
      if (around.size() < 2) return std::nullopt;
      std::shuffle(around.begin(), around.end(), b.rng());
      pref.pos = around[0];
      other.pos = around[1];
      auto scene = detail::with(b.boundary_walls(), {agent, pref, other});
      auto path = bfs_path(b.occupancy_of(scene), agent.pos, pref.pos);
      if (path.size() != 2) return std::nullopt;
      return b.render(scene, agent.id, path);
    });
  }

  static Trial agent_blocked_trial(Builder& b, const Entity& agent_proto, const Entity& object_proto) {
    return b.retry("agent-blocked instrumental trial", [&]() -> std::optional<Trial> {
      Entity agent = agent_proto, object = object_proto;
      agent.pos = b.random_interior();
      static constexpr std::array<Cell, 4> kOrth = {Cell{1, 0}, Cell{-1, 0}, Cell{0, 1}, Cell{0, -1}};
      const Cell d = kOrth[static_cast<std::size_t>(b.uniform(0, 3))];
      const Cell key_pos = b.offset(agent.pos, d.x, d.y);
      const auto ring = b.ring_around({agent.pos, key_pos});
      for (Cell c : ring)
        if (!b.interior(c)) return std::nullopt;
      std::vector<Cell> lock_candidates;
      for (Cell c : ring)
        for (Cell inner : {agent.pos, key_pos})
          if (chebyshev(c, inner) == b.step() && (c.x == inner.x || c.y == inner.y)) lock_candidates.push_back(c);
      const Cell lock_pos = lock_candidates[static_cast<std::size_t>(b.uniform(0, static_cast<int>(lock_candidates.size()) - 1))];
      object.pos = b.random_interior();
      if (object.pos == agent.pos || object.pos == key_pos ||
          std::find(ring.begin(), ring.end(), object.pos) != ring.end())
        return std::nullopt;

      detail::InstrumentalLayout lay;
      lay.scene = detail::with(b.boundary_walls(),
                               {agent, object,
                                Builder::fixed(detail::kKeyId, EntityKind::key, key_pos, detail::kKeyColour, Shape::diamond),
                                Builder::fixed(detail::kLockId, EntityKind::lock, lock_pos, detail::kLockColour, Shape::cross)});
      lay.barrier_ids.push_back(detail::kLockId);
      int id = detail::kFirstObstacleId;
      for (Cell c : ring) {
        if (c == lock_pos) continue;
        lay.scene.push_back(Builder::fixed(id, EntityKind::barrier, c, detail::kBarrierColour, Shape::square));
        lay.barrier_ids.push_back(id++);
      }
      lay.key = key_pos;
      lay.lock = lock_pos;
      lay.object = object.pos;
      auto route = detail::instrumental_route(b, lay, agent.pos);
      if (!route) return std::nullopt;
      return b.render(lay.scene, agent.id, route->first, route->second);
    });
  }

  /// Preference and Multi-Agent share layout: two objects at fixed familiarisation locations,
  /// swapped at test.
  static void preference_like(Builder& b, TaskKind task, std::vector<Trial>& fam, Trial& expected,
                              Trial& unexpected) {
    const Entity agent = b.make(detail::kAgentId, EntityKind::agent);
    const Entity pref_proto = b.make(detail::kObjectAId, EntityKind::object);
    const Entity other_proto = b.make(detail::kObjectBId, EntityKind::object);
    const Entity second = task == TaskKind::multi_agent ? b.make(detail::kSecondAgentId, EntityKind::agent) : agent;
    auto [pa, pb] = b.retry("object locations", [&]() -> std::optional<std::pair<Cell, Cell>> {
      Cell a = b.random_interior(), c = b.random_interior();
      if (b.lattice_distance(a, c) < 3) return std::nullopt;
      return std::make_pair(a, c);
    });
    auto navigate = [&](const Entity& who, Cell pref_at, Cell other_at, Cell goal) {
      return b.retry("preference trial", [&]() -> std::optional<Trial> {
        Entity a = who, p = pref_proto, o = other_proto;
        a.pos = b.random_interior();
        p.pos = pref_at;
        o.pos = other_at;
        if (b.lattice_distance(a.pos, pref_at) < b.min_goal_distance() ||
            b.lattice_distance(a.pos, other_at) < b.min_goal_distance())
          return std::nullopt;
        auto scene = detail::with(b.boundary_walls(), {a, p, o});
        auto path = bfs_path(b.occupancy_of(scene), a.pos, goal);
        if (path.empty()) return std::nullopt;
        return b.render(scene, a.id, path);
      });
    };
    for (std::size_t i = 0; i < kFamiliarisationTrials; ++i) fam.push_back(navigate(agent, pa, pb, pa));
    // Test: objects swap places; both outcomes start from the same frame. Neither route may pass
    // over the other outcome's goal, otherwise one outcome is a prefix of the other.
    auto [to_preferred, to_other] = b.retry("preference test", [&]() -> std::optional<std::pair<Trial, Trial>> {
      Trial pref_trial = navigate(second, pb, pa, pb);
      const auto pref_path = pref_trial.agent_path();
      const auto scene = pref_trial.frames.front().entities;
      auto other_path = bfs_path(b.occupancy_of(scene), pref_path.front(), pa);
      if (other_path.empty() || std::find(pref_path.begin(), pref_path.end(), pa) != pref_path.end() ||
          std::find(other_path.begin(), other_path.end(), pb) != other_path.end())
        return std::nullopt;
      Trial other_trial = b.render(scene, second.id, other_path);
      return std::make_pair(std::move(pref_trial), std::move(other_trial));
    });
    if (task == TaskKind::preference) {
      expected = to_preferred;
      unexpected = to_other;
    } else {
      expected = to_other;
      unexpected = to_preferred;
    }
  }

  static void inaccessible_goal(Builder& b, std::vector<Trial>& fam, Trial& expected, Trial& unexpected) {
    const Entity agent = b.make(detail::kAgentId, EntityKind::agent);
    const Entity pref_proto = b.make(detail::kObjectAId, EntityKind::object);
    const Entity other_proto = b.make(detail::kObjectBId, EntityKind::object);
    for (std::size_t i = 0; i < kFamiliarisationTrials; ++i) {
      fam.push_back(b.retry("inaccessible-goal familiarisation", [&]() -> std::optional<Trial> {
        Entity a = agent, p = pref_proto, o = other_proto;
        a.pos = b.random_interior();
        p.pos = b.random_interior();
        o.pos = b.random_interior();
        if (b.lattice_distance(p.pos, o.pos) < 2 || b.lattice_distance(a.pos, p.pos) < b.min_goal_distance() ||
            b.lattice_distance(a.pos, o.pos) < 1)
          return std::nullopt;
        auto scene = detail::with(b.boundary_walls(), {a, p, o});
        auto path = bfs_path(b.occupancy_of(scene), a.pos, p.pos);
        if (path.empty()) return std::nullopt;
        return b.render(scene, a.id, path);
      }));
    }
    auto trials = b.retry("inaccessible-goal test", [&]() -> std::optional<std::pair<Trial, Trial>> {
      Entity a = agent, p = pref_proto, o = other_proto;
      a.pos = b.random_interior();
      p.pos = b.random_interior();
      o.pos = b.random_interior();
      const auto ring = b.ring_around({p.pos});
      for (Cell c : ring)
        if (!b.interior(c) || c == o.pos || c == a.pos) return std::nullopt;
      if (b.lattice_distance(a.pos, o.pos) < b.min_goal_distance() || b.lattice_distance(a.pos, p.pos) < 2 ||
          b.lattice_distance(p.pos, o.pos) < 2)
        return std::nullopt;
      // The gap in the unexpected layout is the orthogonal ring cell closest to the agent.
      Cell gap{};
      long best = std::numeric_limits<long>::max();
      for (Cell c : ring) {
        if (c.x != p.pos.x && c.y != p.pos.y) continue;
        const long dx = c.x - a.pos.x, dy = c.y - a.pos.y;
        if (dx * dx + dy * dy < best) {
          best = dx * dx + dy * dy;
          gap = c;
        }
      }
      auto closed = detail::with(b.boundary_walls(), {a, p, o});
      auto open = closed;
      int id = detail::kFirstObstacleId;
      for (Cell c : ring) {
        const Entity w = Builder::fixed(id++, EntityKind::wall, c, detail::kWallColour, Shape::square);
        closed.push_back(w);
        if (c != gap) open.push_back(w);
      }
      const auto occ_closed = b.occupancy_of(closed);
      const auto occ_open = b.occupancy_of(open);
      if (!bfs_path(occ_closed, a.pos, p.pos).empty()) return std::nullopt;
      if (bfs_path(occ_open, a.pos, p.pos).empty()) return std::nullopt;
      auto path_closed = bfs_path(occ_closed, a.pos, o.pos);
      auto path_open = bfs_path(occ_open, a.pos, o.pos);
      if (path_closed.empty() || path_open.empty()) return std::nullopt;
      // the open route to the preferred object must not lead over the other object
      if (detail::is_prefix(path_open, bfs_path(occ_open, a.pos, p.pos))) return std::nullopt;
      return std::make_pair(b.render(closed, a.id, path_closed), b.render(open, a.id, path_open));
    });
    expected = std::move(trials.first);
    unexpected = std::move(trials.second);
  }

  struct EfficiencyLayout {
    Entity agent;
    Entity object;
    std::vector<Entity> obstacle;
  };

  static EfficiencyLayout blocked_efficiency_layout(Builder& b, const Entity& agent_proto,
                                                    const Entity& object_proto) {
    return b.retry("efficiency layout", [&]() -> std::optional<EfficiencyLayout> {
      EfficiencyLayout lay{agent_proto, object_proto, {}};
      const bool vertical = b.coin();
      const int span = (vertical ? b.grid().rows() : b.grid().columns()) - 2;
      const int gap = b.uniform(4, std::max(4, span - 1));
      const int along0 = b.uniform(1, span - gap);
      const int across = b.uniform(1, (vertical ? b.grid().columns() : b.grid().rows()) - 2);
      const int half = b.uniform(1, 2);
      auto at = [&](int along, int acr) {
        return vertical ? Cell{acr * b.step(), along * b.step()} : Cell{along * b.step(), acr * b.step()};
      };
      lay.agent.pos = at(along0, across);
      lay.object.pos = at(along0 + gap, across);
      if (b.coin()) std::swap(lay.agent.pos, lay.object.pos);
      const int mid = along0 + gap / 2;
      int id = detail::kFirstObstacleId;
      for (int k = -half; k <= half; ++k) {
        const Cell c = at(mid, across + k);
        if (!b.interior(c)) return std::nullopt;
        lay.obstacle.push_back(Builder::fixed(id++, EntityKind::wall, c, detail::kWallColour, Shape::square));
      }
      return lay;
    });
  }

  static void efficiency_control(Builder& b, TaskKind task, std::vector<Trial>& fam, Trial& expected,
                                 Trial& unexpected) {
    const Entity agent = b.make(detail::kAgentId, EntityKind::agent);
    const Entity object = b.make(detail::kObjectAId, EntityKind::object);
    struct Out {
      Trial fam, expected, unexpected;
    };
    auto out = b.retry("efficiency control", [&]() -> std::optional<Out> {
      auto lay = blocked_efficiency_layout(b, agent, object);
      auto open = detail::with(b.boundary_walls(), {lay.agent, lay.object});
      auto blocked = open;
      blocked.insert(blocked.end(), lay.obstacle.begin(), lay.obstacle.end());
      auto detour = bfs_path(b.occupancy_of(blocked), lay.agent.pos, lay.object.pos);
      auto direct = bfs_path(b.occupancy_of(open), lay.agent.pos, lay.object.pos);
      if (detour.empty() || direct.empty() || detour.size() <= direct.size()) return std::nullopt;
      Out o{b.render(blocked, agent.id, detour), b.render(open, agent.id, direct), {}};
      if (task == TaskKind::eff_path_control) {
        o.unexpected = b.render(open, agent.id, detour);
      } else {
        // Same cells, more frames: the agent pauses at some interior points of the route.
        auto slow = direct;
        const int pauses = b.uniform(1, 3);
        for (int k = 0; k < pauses; ++k) {
          const auto at = static_cast<std::size_t>(b.uniform(1, static_cast<int>(slow.size()) - 2));
          slow.insert(slow.begin() + static_cast<std::ptrdiff_t>(at), slow[at]);
        }
        o.unexpected = b.render(open, agent.id, slow);
      }
      return o;
    });
    fam.assign(kFamiliarisationTrials, out.fam);
    expected = std::move(out.expected);
    unexpected = std::move(out.unexpected);
  }

  /// Shortest route plus exactly 2k extra cells, via a waypoint that costs that much.
  static std::optional<std::vector<Cell>> inefficient_path(Builder& b, const Occupancy& occ, Cell s, Cell g,
                                                           int k) {
    const auto from_goal = distance_field(occ, g);
    const auto from_start = distance_field(occ, s);
    const int best = from_goal[occ.index(s)];
    if (best == kUnreachable) return std::nullopt;
    std::vector<Cell> waypoints;
    const int l = b.step();
    for (int j = 0; j < b.grid().rows(); ++j)
      for (int i = 0; i < b.grid().columns(); ++i) {
        const Cell c{i * l, j * l};
        if (occ.blocked(c)) continue;
        const int ds = from_start[occ.index(c)], dg = from_goal[occ.index(c)];
        if (ds == kUnreachable || dg == kUnreachable) continue;
        if (ds + dg == best + 2 * k) waypoints.push_back(c);
      }
    if (waypoints.empty()) return std::nullopt;
    const Cell w = waypoints[static_cast<std::size_t>(b.uniform(0, static_cast<int>(waypoints.size()) - 1))];
    auto first = bfs_path(occ, s, w);
    auto second = bfs_path(occ, w, g);
    auto path = detail::concat_paths({&first, &second});
    if (path.empty() || detail::index_of(path, g) != path.size() - 1) return std::nullopt;
    return path;
  }

  static void irrational_agent(Builder& b, std::vector<Trial>& fam, Trial& expected, Trial& unexpected) {
    const Entity agent = b.make(detail::kAgentId, EntityKind::agent);
    const Entity object = b.make(detail::kObjectAId, EntityKind::object);
    auto scene = b.retry("irrational agent layout", [&]() -> std::optional<std::vector<Entity>> {
      Entity a = agent, o = object;
      a.pos = b.random_interior();
      o.pos = b.random_interior();
      if (b.lattice_distance(a.pos, o.pos) < 3) return std::nullopt;
      return detail::with(b.boundary_walls(), {a, o});
    });
    const Cell s = scene[scene.size() - 2].pos;
    const Cell g = scene.back().pos;
    const auto occ = b.occupancy_of(scene);
    auto detour = [&] {
      return b.retry("inefficient path", [&]() { return inefficient_path(b, occ, s, g, b.uniform(1, 3)); });
    };
    for (std::size_t i = 0; i < kFamiliarisationTrials; ++i) fam.push_back(b.render(scene, agent.id, detour()));
    expected = b.render(scene, agent.id, detour());
    unexpected = b.render(scene, agent.id, bfs_path(occ, s, g));
  }

  static void instrumental(Builder& b, TaskKind task, std::vector<Trial>& fam, Trial& expected,
                           Trial& unexpected) {
    const Entity agent = b.make(detail::kAgentId, EntityKind::agent);
    const Entity object = b.make(detail::kObjectAId, EntityKind::object);
    const Entity key_proto = Builder::fixed(detail::kKeyId, EntityKind::key, {}, detail::kKeyColour, Shape::diamond);
    const Entity lock_proto = Builder::fixed(detail::kLockId, EntityKind::lock, {}, detail::kLockColour, Shape::cross);

    // Barrier ring with a lock around `centre`; returns the entities and the ids that open together.
    auto barrier_ring = [&](Cell centre, std::vector<Entity>& scene, std::vector<int>& ids) -> std::optional<Cell> {
      const auto ring = b.ring_around({centre});
      for (Cell c : ring)
        if (!b.interior(c)) return std::nullopt;
      std::vector<Cell> orth;
      for (Cell c : ring)
        if (c.x == centre.x || c.y == centre.y) orth.push_back(c);
      const Cell lock_pos = orth[static_cast<std::size_t>(b.uniform(0, static_cast<int>(orth.size()) - 1))];
      Entity lock = lock_proto;
      lock.pos = lock_pos;
      scene.push_back(lock);
      ids.push_back(lock.id);
      int id = detail::kFirstObstacleId;
      for (Cell c : ring) {
        if (c == lock_pos) continue;
        scene.push_back(Builder::fixed(id, EntityKind::barrier, c, detail::kBarrierColour, Shape::square));
        ids.push_back(id++);
      }
      return lock_pos;
    };

    struct Setup {
      detail::InstrumentalLayout blocking;
      Cell start;
    };
    auto setup = b.retry("instrumental layout", [&]() -> std::optional<Setup> {
      Setup s;
      Entity o = object, k = key_proto;
      o.pos = b.random_interior();
      k.pos = b.random_interior();
      auto& lay = s.blocking;
      lay.scene = detail::with(b.boundary_walls(), {o, k});
      auto lock = barrier_ring(o.pos, lay.scene, lay.barrier_ids);
      if (!lock) return std::nullopt;
      for (const auto& e : lay.scene)
        if (e.id != k.id && e.pos == k.pos) return std::nullopt;
      lay.key = k.pos;
      lay.lock = *lock;
      lay.object = o.pos;
      if (!detail::instrumental_route(b, lay, k.pos)) return std::nullopt;
      return s;
    });
    auto& lay = setup.blocking;

    auto place_agent = [&](const std::vector<Entity>& scene) -> std::optional<Entity> {
      Entity a = agent;
      a.pos = b.random_interior();
      for (const auto& e : scene)
        if (e.pos == a.pos) return std::nullopt;
      if (b.lattice_distance(a.pos, lay.key) < 1) return std::nullopt;
      return a;
    };

    for (std::size_t i = 0; i < kFamiliarisationTrials; ++i) {
      fam.push_back(b.retry("instrumental familiarisation", [&]() -> std::optional<Trial> {
        auto a = place_agent(lay.scene);
        if (!a) return std::nullopt;
        detail::InstrumentalLayout with_agent = lay;
        with_agent.scene.insert(with_agent.scene.begin(), *a);
        auto route = detail::instrumental_route(b, with_agent, a->pos);
        if (!route) return std::nullopt;
        return b.render(with_agent.scene, agent.id, route->first, route->second);
      }));
    }

    auto pair = b.retry("instrumental test", [&]() -> std::optional<std::pair<Trial, Trial>> {
      if (task == TaskKind::inst_blocking_barrier) {
        auto a = place_agent(lay.scene);
        if (!a) return std::nullopt;
        detail::InstrumentalLayout l2 = lay;
        l2.scene.insert(l2.scene.begin(), *a);
        auto route = detail::instrumental_route(b, l2, a->pos);
        if (!route) return std::nullopt;
        // Straight to the object as if the barrier were not there; it stays rendered.
        std::vector<Entity> no_barrier;
        for (const auto& e : l2.scene)
          if (std::find(l2.barrier_ids.begin(), l2.barrier_ids.end(), e.id) == l2.barrier_ids.end())
            no_barrier.push_back(e);
        auto through = bfs_path(b.occupancy_of(no_barrier), a->pos, lay.object);
        // crossing the ring exactly where the key route goes would make both outcomes identical
        if (through.empty() || detail::is_prefix(through, route->first)) return std::nullopt;
        return std::make_pair(b.render(l2.scene, agent.id, route->first, route->second),
                              b.render(l2.scene, agent.id, through, {{index_of(through, lay.key), {detail::kKeyId}}}));
      }
      // No barrier around the object. For the inconsequential variant a locked ring sits elsewhere.
      detail::InstrumentalLayout l2;
      l2.key = lay.key;
      l2.object = lay.object;
      for (const auto& e : lay.scene)
        if (std::find(lay.barrier_ids.begin(), lay.barrier_ids.end(), e.id) == lay.barrier_ids.end())
          l2.scene.push_back(e);
      if (task == TaskKind::inst_inconsequential_barrier) {
        const Cell centre = b.random_interior();
        auto lock = barrier_ring(centre, l2.scene, l2.barrier_ids);
        if (!lock) return std::nullopt;
        for (const auto& e : l2.scene)
          for (const auto& f : l2.scene)
            if (e.id != f.id && e.pos == f.pos) return std::nullopt;
        l2.lock = *lock;
      }
      auto a = place_agent(l2.scene);
      if (!a) return std::nullopt;
      l2.scene.insert(l2.scene.begin(), *a);
      const auto occ = b.occupancy_of(l2.scene);
      auto direct = bfs_path(occ, a->pos, lay.object);
      if (direct.size() < 2) return std::nullopt;
      Trial detour;
      if (task == TaskKind::inst_no_barrier) {
        auto to_key = bfs_path(occ, a->pos, lay.key);
        auto to_object = bfs_path(occ, lay.key, lay.object);
        auto path = detail::concat_paths({&to_key, &to_object});
        if (path.empty()) return std::nullopt;
        detour = b.render(l2.scene, agent.id, path, {{to_key.size() - 1, {detail::kKeyId}}});
      } else {
        auto route = detail::instrumental_route(b, l2, a->pos);
        if (!route) return std::nullopt;
        detour = b.render(l2.scene, agent.id, route->first, route->second);
      }
      // Key pick-up on the direct route would make both outcomes identical in kind.
      if (index_of(direct, lay.key) < direct.size()) return std::nullopt;
      return std::make_pair(b.render(l2.scene, agent.id, direct), std::move(detour));
    });
    expected = std::move(pair.first);
    unexpected = std::move(pair.second);
  }

  static std::size_t index_of(const std::vector<Cell>& path, Cell c) { return detail::index_of(path, c); }

  GeneratorConfig cfg_;
};

inline Frame generate_layout(TaskKind task, std::uint64_t seed, const GeneratorConfig& cfg = {}) {
  return EpisodeGenerator(cfg).layout(task, seed);
}

inline Episode generate_training_episode(TaskKind task, std::uint64_t seed, const GeneratorConfig& cfg = {}) {
  return EpisodeGenerator(cfg).training_episode(task, seed);
}

inline EpisodePair generate_eval_pair(TaskKind task, std::uint64_t seed, const GeneratorConfig& cfg = {}) {
  return EpisodeGenerator(cfg).eval_pair(task, seed);
}

}  // namespace irene::gridworld
