#pragma once

#include <string>

#include <json.hpp>

#include "irene/error.hpp"
#include "irene/gridworld/types.hpp"

namespace irene::gridworld {

using json = nlohmann::json;

namespace detail {

inline const json& require(const json& doc, const char* key) {
  if (!doc.is_object() || !doc.contains(key)) throw SchemaError(std::string("missing key \"") + key + "\"");
  return doc.at(key);
}

inline int require_int(const json& doc, const char* key) {
  const auto& v = require(doc, key);
  if (!v.is_number_integer()) throw SchemaError(std::string("\"") + key + "\" must be an integer");
  return v.get<int>();
}

inline std::string require_string(const json& doc, const char* key) {
  const auto& v = require(doc, key);
  if (!v.is_string()) throw SchemaError(std::string("\"") + key + "\" must be a string");
  return v.get<std::string>();
}

inline json cell_to_json(Cell c) { return json::array({c.x, c.y}); }

inline Cell cell_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    throw SchemaError("action must be an [x, y] integer pair");
  return Cell{j[0].get<int>(), j[1].get<int>()};
}

inline json entity_to_json(const Entity& e) {
  return json{{"id", e.id},
              {"kind", std::string(to_string(e.kind))},
              {"x", e.pos.x},
              {"y", e.pos.y},
              {"colour", json::array({e.colour.gbr[0], e.colour.gbr[1], e.colour.gbr[2]})},
              {"shape", std::string(to_string(e.shape))}};
}

inline Entity entity_from_json(const json& j, const GridSpec& grid) {
  Entity e;
  e.id = require_int(j, "id");
  const auto kind = parse_kind(require_string(j, "kind"));
  if (!kind) throw SchemaError("unknown entity kind \"" + j.at("kind").get<std::string>() + "\"");
  e.kind = *kind;
  e.pos = Cell{require_int(j, "x"), require_int(j, "y")};
  if (!grid.contains(e.pos) || !grid.on_lattice(e.pos)) throw SchemaError("entity position outside the grid lattice");
  const auto& colour = require(j, "colour");
  if (!colour.is_array() || colour.size() != 3) throw SchemaError("\"colour\" must be [g, b, r]");
  for (std::size_t c = 0; c < 3; ++c) {
    if (!colour[c].is_number_integer()) throw SchemaError("colour channels must be integers");
    const int v = colour[c].get<int>();
    if (v < 0 || v > 255) throw SchemaError("colour channel out of range 0..255");
    e.colour.gbr[c] = v;
  }
  const auto shape = parse_shape(require_string(j, "shape"));
  if (!shape) throw SchemaError("unknown shape \"" + j.at("shape").get<std::string>() + "\"");
  e.shape = *shape;
  return e;
}

inline json trial_to_json(const Trial& t) {
  json frames = json::array();
  for (const auto& f : t.frames) {
    json ents = json::array();
    for (const auto& e : f.entities) ents.push_back(entity_to_json(e));
    frames.push_back(std::move(ents));
  }
  json actions = json::array();
  for (Cell c : t.actions) actions.push_back(cell_to_json(c));
  return json{{"frames", std::move(frames)}, {"actions", std::move(actions)}};
}

inline Trial trial_from_json(const json& j, const GridSpec& grid) {
  Trial t;
  const auto& frames = require(j, "frames");
  const auto& actions = require(j, "actions");
  if (!frames.is_array() || !actions.is_array()) throw SchemaError("\"frames\" and \"actions\" must be arrays");
  if (frames.size() < 2) throw SchemaError("a trial needs at least two frames");
  if (actions.size() + 1 != frames.size()) throw SchemaError("a trial needs exactly one action per frame transition");
  for (const auto& f : frames) {
    if (!f.is_array()) throw SchemaError("each frame must be an array of entities");
    Frame frame{{}, grid};
    for (const auto& e : f) frame.entities.push_back(entity_from_json(e, grid));
    t.frames.push_back(std::move(frame));
  }
  for (const auto& a : actions) t.actions.push_back(cell_from_json(a));
  return t;
}

}  // namespace detail

inline json vocabulary_json() {
  json kinds = json::array(), shapes = json::array();
  for (auto k : kEntityKindNames) kinds.push_back(std::string(k));
  for (auto s : kShapeNames) shapes.push_back(std::string(s));
  return json{{"version", kVocabVersion}, {"kinds", std::move(kinds)}, {"shapes", std::move(shapes)}};
}

inline json serialize_episode(const Episode& e) {
  json trials = json::array();
  for (const auto& t : e.familiarisation) trials.push_back(detail::trial_to_json(t));
  trials.push_back(detail::trial_to_json(e.test));
  return json{{"task", std::string(to_string(e.task))},
              {"label", std::string(to_string(e.label))},
              {"grid", {{"w", e.grid.width}, {"h", e.grid.height}, {"l", e.grid.spacing}}},
              {"vocab", vocabulary_json()},
              {"trials", std::move(trials)}};
}

/// Accepts either the flat "trials" layout (eight familiarisation trials followed by the test
/// trial) or explicit "familiarisation" + "test" keys.
inline Episode deserialize_episode(const json& doc) {
  if (!doc.is_object()) throw SchemaError("episode document must be a JSON object");
  Episode e;
  const auto task = parse_task(detail::require_string(doc, "task"));
  if (!task) throw SchemaError("unknown task \"" + doc.at("task").get<std::string>() + "\"");
  e.task = *task;
  const auto label = parse_label(detail::require_string(doc, "label"));
  if (!label) throw SchemaError("unknown label \"" + doc.at("label").get<std::string>() + "\"");
  e.label = *label;
  if (is_training_task(e.task) != (e.label == EpisodeLabel::train_expected))
    throw SchemaError("training tasks carry label train_expected and evaluation tasks do not");
  const auto& grid = detail::require(doc, "grid");
  e.grid = GridSpec{detail::require_int(grid, "w"), detail::require_int(grid, "h"), detail::require_int(grid, "l")};
  if (e.grid.width < 1 || e.grid.height < 1 || e.grid.spacing < 1) throw SchemaError("grid dimensions must be positive");
  if (doc.contains("vocab")) {
    const auto& vocab = doc.at("vocab");
    if (!vocab.is_object() || !vocab.contains("version") || vocab.at("version") != kVocabVersion)
      throw SchemaError("unsupported vocabulary version");
  }

  if (doc.contains("trials")) {
    const auto& trials = doc.at("trials");
    if (!trials.is_array()) throw SchemaError("\"trials\" must be an array");
    if (trials.size() != kFamiliarisationTrials + 1)
      throw SchemaError("an episode has exactly 8 familiarisation trials and 1 test trial, got " +
                        std::to_string(trials.size()) + " trials");
    for (std::size_t i = 0; i < kFamiliarisationTrials; ++i)
      e.familiarisation.push_back(detail::trial_from_json(trials[i], e.grid));
    e.test = detail::trial_from_json(trials[kFamiliarisationTrials], e.grid);
  } else {
    const auto& fam = detail::require(doc, "familiarisation");
    if (!fam.is_array() || fam.size() != kFamiliarisationTrials)
      throw SchemaError("\"familiarisation\" must hold exactly 8 trials");
    for (const auto& t : fam) e.familiarisation.push_back(detail::trial_from_json(t, e.grid));
    e.test = detail::trial_from_json(detail::require(doc, "test"), e.grid);
  }
  return e;
}

inline json serialize_pair(const EpisodePair& p) {
  return json{{"expected", serialize_episode(p.expected)}, {"unexpected", serialize_episode(p.unexpected)}};
}

inline EpisodePair deserialize_pair(const json& doc) {
  EpisodePair p{deserialize_episode(detail::require(doc, "expected")),
                deserialize_episode(detail::require(doc, "unexpected"))};
  if (p.expected.label != EpisodeLabel::expected || p.unexpected.label != EpisodeLabel::unexpected)
    throw SchemaError("pair members must be labelled expected and unexpected");
  if (p.expected.familiarisation != p.unexpected.familiarisation)
    throw SchemaError("pair members must share familiarisation trials");
  return p;
}

}  // namespace irene::gridworld
