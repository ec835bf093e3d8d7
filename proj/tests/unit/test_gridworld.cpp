#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "irene/gridworld/episode_json.hpp"
#include "irene/gridworld/generator.hpp"
#include "irene/gridworld/pathfinding.hpp"

using namespace irene::gridworld;

namespace {

// Independent distance oracle: Bellman-Ford style relaxation over the lattice until a fixpoint.
int relaxation_distance(const Frame& f, Cell start, Cell goal) {
  const GridSpec& g = f.grid;
  std::set<Cell> blocked;
  for (const auto& e : f.entities)
    if (e.kind == EntityKind::wall || e.kind == EntityKind::barrier || e.kind == EntityKind::lock)
      blocked.insert(e.pos);
  auto free = [&](Cell c) { return g.contains(c) && g.on_lattice(c) && !blocked.count(c); };
  if (!free(start) || !free(goal)) return -1;
  std::map<Cell, int> dist;
  dist[goal] = 0;
  const int l = g.spacing;
  for (bool changed = true; changed;) {
    changed = false;
    for (int y = 0; y < g.height; y += l)
      for (int x = 0; x < g.width; x += l) {
        const Cell c{x, y};
        if (!free(c)) continue;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dx && !dy) continue;
            const Cell n{x + dx * l, y + dy * l};
            if (!free(n) || !dist.count(n)) continue;
            if (dx && dy && (!free(Cell{x + dx * l, y}) || !free(Cell{x, y + dy * l}))) continue;
            const int cand = dist[n] + 1;
            if (!dist.count(c) || cand < dist[c]) {
              dist[c] = cand;
              changed = true;
            }
          }
      }
  }
  return dist.count(start) ? dist[start] : -1;
}

Frame walled_frame(int w, int h) {
  Frame f;
  f.grid = GridSpec{w, h, 1};
  int id = 100;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (x == 0 || y == 0 || x == w - 1 || y == h - 1)
        f.entities.push_back(Entity{id++, EntityKind::wall, {x, y}, {}, Shape::square});
  return f;
}

void add(Frame& f, EntityKind k, Cell c, int id) { f.entities.push_back(Entity{id, k, c, {}, Shape::square}); }

bool legal_step(const Frame& f, Cell a, Cell b) {
  const int l = f.grid.spacing;
  return std::abs(a.x - b.x) <= l && std::abs(a.y - b.y) <= l;
}

std::vector<Cell> agent_positions(const Trial& t) { return t.agent_path(); }

const Entity* entity_by_id(const Frame& f, int id) { return f.find(id); }

void check_trial(const Trial& t) {
  ASSERT_GE(t.frames.size(), 2u);
  ASSERT_EQ(t.actions.size(), t.frames.size() - 1);
  for (std::size_t j = 0; j < t.frames.size(); ++j) {
    const auto& f = t.frames[j];
    int agents = 0;
    std::set<int> ids;
    for (const auto& e : f.entities) {
      EXPECT_TRUE(f.grid.contains(e.pos) && f.grid.on_lattice(e.pos));
      EXPECT_TRUE(ids.insert(e.id).second) << "duplicate entity id";
      agents += e.kind == EntityKind::agent;
    }
    EXPECT_EQ(agents, 1);
    const auto* a = f.agent();
    ASSERT_NE(a, nullptr);
    for (const auto& e : f.entities)
      if (e.kind == EntityKind::wall) EXPECT_NE(e.pos, a->pos) << "agent on a wall cell";
    if (j + 1 < t.frames.size()) {
      const auto* next = t.frames[j + 1].agent();
      EXPECT_EQ(t.actions[j], next->pos);
      EXPECT_TRUE(legal_step(f, a->pos, next->pos));
    }
  }
}

void check_episode(const Episode& e) {
  ASSERT_EQ(e.familiarisation.size(), 8u);
  for (const auto& t : e.familiarisation) check_trial(t);
  check_trial(e.test);
}

}  // namespace

TEST(ShortestPath, StraightCorridorOfLengthFour) {
  Frame f = walled_frame(7, 3);
  const auto path = shortest_path(f, {1, 1}, {5, 1});
  EXPECT_EQ(static_cast<int>(path.size()), relaxation_distance(f, {1, 1}, {5, 1}) + 1);
  EXPECT_EQ(path.size(), 5u);
}

TEST(ShortestPath, StartEqualsGoal) {
  Frame f = walled_frame(6, 6);
  const auto path = shortest_path(f, {2, 3}, {2, 3});
  ASSERT_EQ(path.size(), 1u);
  EXPECT_EQ(path[0], (Cell{2, 3}));
}

TEST(ShortestPath, EnclosedGoalIsUnreachable) {
  Frame f = walled_frame(10, 10);
  int id = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (dx || dy) add(f, EntityKind::barrier, {6 + dx, 6 + dy}, id++);
  EXPECT_TRUE(shortest_path(f, {1, 1}, {6, 6}).empty());
}

TEST(ShortestPath, NoCornerCutting) {
  Frame f = walled_frame(6, 6);
  add(f, EntityKind::wall, {2, 1}, 0);
  add(f, EntityKind::wall, {1, 2}, 1);
  // (1,1) is sealed in diagonally.
  EXPECT_TRUE(shortest_path(f, {1, 1}, {3, 3}).empty());
}

TEST(ShortestPath, MatchesRelaxationOracleOnRandomFrames) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    Frame f = walled_frame(10, 10);
    std::uniform_int_distribution<int> cell(1, 8), count(0, 20);
    const int walls = count(rng);
    for (int i = 0; i < walls; ++i) add(f, EntityKind::wall, {cell(rng), cell(rng)}, i);
    const Cell s{cell(rng), cell(rng)}, g{cell(rng), cell(rng)};
    const auto path = shortest_path(f, s, g);
    const int oracle = relaxation_distance(f, s, g);
    if (oracle < 0) {
      EXPECT_TRUE(path.empty());
      continue;
    }
    ASSERT_EQ(static_cast<int>(path.size()), oracle + 1);
    EXPECT_EQ(path.front(), s);
    EXPECT_EQ(path.back(), g);
    const auto occ = Occupancy::from_frame(f);
    for (std::size_t k = 1; k < path.size(); ++k) {
      EXPECT_TRUE(occ.free(path[k]));
      EXPECT_TRUE(can_step(occ, path[k - 1], Cell{path[k].x - path[k - 1].x, path[k].y - path[k - 1].y}));
    }
  }
}

TEST(GenerateLayout, SingleObjectHasOneAgentOneObjectAndOuterWalls) {
  const Frame f = generate_layout(TaskKind::single_object, 7);
  int agents = 0, objects = 0;
  std::set<Cell> walls;
  for (const auto& e : f.entities) {
    agents += e.kind == EntityKind::agent;
    objects += e.kind == EntityKind::object;
    if (e.kind == EntityKind::wall) walls.insert(e.pos);
  }
  EXPECT_EQ(agents, 1);
  EXPECT_EQ(objects, 1);
  for (int i = 0; i < 10; ++i) {
    EXPECT_TRUE(walls.count({i, 0}) && walls.count({i, 9}) && walls.count({0, i}) && walls.count({9, i}));
  }
  EXPECT_EQ(walls.size(), 36u);
}

TEST(GenerateLayout, AgentBlockedInstrumentalNeedsABarrierRemoved) {
  const Frame f = generate_layout(TaskKind::agent_blocked_instrumental, 7);
  const Cell agent = f.agent()->pos;
  Cell object{};
  for (const auto& e : f.entities)
    if (e.kind == EntityKind::object) object = e.pos;
  EXPECT_LT(relaxation_distance(f, agent, object), 0);
  bool opens = false;
  for (std::size_t i = 0; i < f.entities.size(); ++i) {
    const auto k = f.entities[i].kind;
    if (k != EntityKind::barrier && k != EntityKind::lock) continue;
    Frame g = f;
    g.entities.erase(g.entities.begin() + static_cast<std::ptrdiff_t>(i));
    opens = opens || relaxation_distance(g, agent, object) >= 0;
  }
  EXPECT_TRUE(opens);
}

TEST(GenerateLayout, NoNavPreferenceObjectsAreNextToTheAgent) {
  const Frame f = generate_layout(TaskKind::no_nav_preference, 7);
  int objects = 0;
  for (const auto& e : f.entities)
    if (e.kind == EntityKind::object) {
      ++objects;
      EXPECT_LE(chebyshev(e.pos, f.agent()->pos), 1);
    }
  EXPECT_EQ(objects, 2);
}

TEST(GenerateLayout, TooSmallGridIsInfeasible) {
  GeneratorConfig cfg;
  cfg.grid = GridSpec{5, 5, 1};
  EXPECT_THROW(generate_layout(TaskKind::single_object, 7, cfg), irene::LayoutInfeasible);
}

TEST(TrainingEpisode, SingleObjectTrialsEndOnTheObject) {
  const auto ep = generate_training_episode(TaskKind::single_object, 7);
  check_episode(ep);
  std::vector<const Trial*> all;
  for (const auto& t : ep.familiarisation) all.push_back(&t);
  all.push_back(&ep.test);
  for (const auto* t : all) {
    const Frame& last = t->frames.back();
    const Entity* object = nullptr;
    for (const auto& e : last.entities)
      if (e.kind == EntityKind::object) object = &e;
    ASSERT_NE(object, nullptr);
    EXPECT_EQ(last.agent()->pos, object->pos);
    // rational: the trajectory is a shortest path
    EXPECT_EQ(static_cast<int>(t->frames.size()),
              relaxation_distance(t->frames.front(), t->frames.front().agent()->pos, object->pos) + 1);
  }
}

TEST(TrainingEpisode, MultiAgentSwapsTheAgentAtTest) {
  const auto ep = generate_training_episode(TaskKind::single_object_multi_agent, 7);
  check_episode(ep);
  const Entity first = *ep.familiarisation.front().frames.front().agent();
  for (const auto& t : ep.familiarisation) EXPECT_EQ(t.frames.front().agent()->id, first.id);
  const Entity second = *ep.test.frames.front().agent();
  EXPECT_NE(second.id, first.id);
  EXPECT_FALSE(second.colour == first.colour);
  EXPECT_NE(second.shape, first.shape);
}

TEST(TrainingEpisode, AgentBlockedVisitsKeyThenLockThenObject) {
  for (std::uint64_t seed : {7u, 8u, 9u, 10u}) {
    const auto ep = generate_training_episode(TaskKind::agent_blocked_instrumental, seed);
    check_episode(ep);
    const Frame& first = ep.test.frames.front();
    Cell key{}, lock{}, object{};
    for (const auto& e : first.entities) {
      if (e.kind == EntityKind::key) key = e.pos;
      if (e.kind == EntityKind::lock) lock = e.pos;
      if (e.kind == EntityKind::object) object = e.pos;
    }
    const auto path = ep.test.agent_path();
    const auto ik = std::find(path.begin(), path.end(), key) - path.begin();
    const auto il = std::find(path.begin(), path.end(), lock) - path.begin();
    const auto io = std::find(path.begin(), path.end(), object) - path.begin();
    EXPECT_LT(ik, il);
    EXPECT_LT(il, io);
    EXPECT_EQ(io, static_cast<std::ptrdiff_t>(path.size()) - 1);
  }
}

TEST(EvalPair, PreferenceExpectedGoesToPreferredObjectAtNewLocation) {
  const auto pair = generate_eval_pair(TaskKind::preference, 7);
  check_episode(pair.expected);
  check_episode(pair.unexpected);
  const Frame& fam_end = pair.expected.familiarisation.front().frames.back();
  const Cell familiar_spot = fam_end.agent()->pos;
  const int preferred = [&] {
    for (const auto& e : fam_end.entities)
      if (e.kind == EntityKind::object && e.pos == familiar_spot) return e.id;
    return -1;
  }();
  ASSERT_GE(preferred, 0);
  for (const auto& t : pair.expected.familiarisation) EXPECT_EQ(t.frames.back().agent()->pos, familiar_spot);

  const Frame& exp_end = pair.expected.test.frames.back();
  EXPECT_EQ(exp_end.agent()->pos, exp_end.find(preferred)->pos);
  EXPECT_NE(exp_end.agent()->pos, familiar_spot);

  const Frame& unexp_end = pair.unexpected.test.frames.back();
  EXPECT_EQ(unexp_end.agent()->pos, familiar_spot);
  EXPECT_NE(unexp_end.agent()->pos, unexp_end.find(preferred)->pos);
}

TEST(EvalPair, TimeControlUnexpectedIsSlowerOverTheSameCells) {
  const auto pair = generate_eval_pair(TaskKind::eff_time_control, 7);
  const auto& exp = pair.expected.test;
  const auto& unexp = pair.unexpected.test;
  const Cell s = exp.frames.front().agent()->pos, g = exp.frames.back().agent()->pos;
  EXPECT_EQ(static_cast<int>(exp.frames.size()), relaxation_distance(exp.frames.front(), s, g) + 1);
  EXPECT_GT(unexp.frames.size(), exp.frames.size());
  auto a = exp.agent_path(), b = unexp.agent_path();
  b.erase(std::unique(b.begin(), b.end()), b.end());
  EXPECT_EQ(a, b);
}

TEST(EvalPair, BlockingBarrierUnexpectedWalksThroughARenderedBarrier) {
  const auto pair = generate_eval_pair(TaskKind::inst_blocking_barrier, 7);
  // expected: key, lock, object in order
  const Frame& first = pair.expected.test.frames.front();
  Cell key{}, lock{}, object{};
  for (const auto& e : first.entities) {
    if (e.kind == EntityKind::key) key = e.pos;
    if (e.kind == EntityKind::lock) lock = e.pos;
    if (e.kind == EntityKind::object) object = e.pos;
  }
  const auto p = pair.expected.test.agent_path();
  const auto ik = std::find(p.begin(), p.end(), key) - p.begin();
  const auto il = std::find(p.begin(), p.end(), lock) - p.begin();
  EXPECT_LT(ik, il);
  EXPECT_EQ(p.back(), object);
  // unexpected: object unreachable in every rendered frame, yet the agent arrives there
  const auto& unexp = pair.unexpected.test;
  EXPECT_EQ(unexp.frames.back().agent()->pos, object);
  for (std::size_t j = 0; j + 1 < unexp.frames.size(); ++j)
    EXPECT_LT(relaxation_distance(unexp.frames[j], unexp.frames[j].agent()->pos, object), 0);
  const auto up = unexp.agent_path();
  EXPECT_EQ(std::find(up.begin(), up.end(), key), up.end());
}

TEST(EvalPair, InaccessibleGoalExpectedHasEnclosedPreferredObject) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto pair = generate_eval_pair(TaskKind::inaccessible_goal, seed);
    const Frame& e0 = pair.expected.test.frames.front();
    const Frame& u0 = pair.unexpected.test.frames.front();
    const Cell pref = e0.find(2)->pos, other = e0.find(3)->pos;
    EXPECT_LT(relaxation_distance(e0, e0.agent()->pos, pref), 0);
    EXPECT_GE(relaxation_distance(u0, u0.agent()->pos, pref), 0);
    EXPECT_EQ(pair.expected.test.frames.back().agent()->pos, other);
    EXPECT_EQ(pair.unexpected.test.frames.back().agent()->pos, other);
  }
}

TEST(Invariants, AllTasksManySeeds) {
  for (TaskKind task : kTrainingTasks)
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      const auto ep = generate_training_episode(task, seed);
      EXPECT_EQ(ep.label, EpisodeLabel::train_expected);
      check_episode(ep);
      EXPECT_EQ(ep, generate_training_episode(task, seed));
    }
  for (TaskKind task : kEvaluationTasks)
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      SCOPED_TRACE(std::string(to_string(task)) + " seed " + std::to_string(seed));
      const auto pair = generate_eval_pair(task, seed);
      check_episode(pair.expected);
      check_episode(pair.unexpected);
      EXPECT_EQ(pair.expected.familiarisation, pair.unexpected.familiarisation);
      EXPECT_EQ(serialize_episode(pair.expected)["trials"][0].dump(),
                serialize_episode(pair.unexpected)["trials"][0].dump());
      EXPECT_NE(pair.expected.test, pair.unexpected.test);
      EXPECT_EQ(pair, generate_eval_pair(task, seed));

      const auto& exp = pair.expected.test;
      const auto& unexp = pair.unexpected.test;
      const Cell s = exp.frames.front().agent()->pos, g = exp.frames.back().agent()->pos;
      switch (task) {
        case TaskKind::eff_path_control:
          EXPECT_EQ(static_cast<int>(exp.frames.size()), relaxation_distance(exp.frames.front(), s, g) + 1);
          EXPECT_GT(unexp.agent_path().size(), exp.agent_path().size());
          break;
        case TaskKind::eff_time_control:
          EXPECT_EQ(static_cast<int>(exp.frames.size()), relaxation_distance(exp.frames.front(), s, g) + 1);
          EXPECT_GT(unexp.frames.size(), exp.frames.size());
          break;
        case TaskKind::eff_irrational_agent: {
          const int best = relaxation_distance(exp.frames.front(), s, g) + 1;
          EXPECT_EQ(static_cast<int>(unexp.frames.size()), best);
          for (const auto& t : pair.expected.familiarisation) {
            const int extra = static_cast<int>(t.frames.size()) - best;
            EXPECT_TRUE(extra == 2 || extra == 4 || extra == 6) << extra;
          }
          break;
        }
        default: break;
      }
    }
}

TEST(Invariants, SpacingTwoLattice) {
  GeneratorConfig cfg;
  cfg.grid = GridSpec{20, 20, 2};
  const auto pair = generate_eval_pair(TaskKind::eff_path_control, 3, cfg);
  check_episode(pair.expected);
  const auto ep = generate_training_episode(TaskKind::agent_blocked_instrumental, 3, cfg);
  check_episode(ep);
}

TEST(EpisodeJson, RoundTripIsIdentity) {
  for (TaskKind task : kTrainingTasks) {
    const auto ep = generate_training_episode(task, 5);
    EXPECT_EQ(deserialize_episode(serialize_episode(ep)), ep);
    EXPECT_EQ(deserialize_episode(json::parse(serialize_episode(ep).dump())), ep);
  }
  for (TaskKind task : kEvaluationTasks) {
    const auto pair = generate_eval_pair(task, 5);
    EXPECT_EQ(deserialize_pair(json::parse(serialize_pair(pair).dump())), pair);
  }
}

TEST(EpisodeJson, MissingFamiliarisationIsASchemaError) {
  auto doc = serialize_episode(generate_training_episode(TaskKind::single_object, 7));
  json explicit_layout = doc;
  explicit_layout.erase("trials");
  explicit_layout["test"] = doc["trials"][8];
  EXPECT_THROW(deserialize_episode(explicit_layout), irene::SchemaError);
  explicit_layout["familiarisation"] = json::array();
  for (int i = 0; i < 8; ++i) explicit_layout["familiarisation"].push_back(doc["trials"][i]);
  EXPECT_EQ(deserialize_episode(explicit_layout), deserialize_episode(doc));
}

TEST(EpisodeJson, SevenFamiliarisationTrialsIsASchemaError) {
  auto doc = serialize_episode(generate_training_episode(TaskKind::single_object, 7));
  doc["trials"].erase(0);
  EXPECT_THROW(deserialize_episode(doc), irene::SchemaError);
}

TEST(EpisodeJson, MalformedFieldsAreSchemaErrors) {
  const auto doc = serialize_episode(generate_training_episode(TaskKind::single_object, 7));
  auto bad = doc;
  bad["trials"][0]["frames"][0][0]["kind"] = "dragon";
  EXPECT_THROW(deserialize_episode(bad), irene::SchemaError);
  bad = doc;
  bad["trials"][0]["actions"].erase(0);
  EXPECT_THROW(deserialize_episode(bad), irene::SchemaError);
  bad = doc;
  bad["trials"][0]["frames"][0][0]["colour"] = json::array({1, 2});
  EXPECT_THROW(deserialize_episode(bad), irene::SchemaError);
  bad = doc;
  bad["label"] = "expected";
  EXPECT_THROW(deserialize_episode(bad), irene::SchemaError);
  EXPECT_THROW(deserialize_episode(json::array()), irene::SchemaError);
}
