#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "irene/error.hpp"
#include "irene/graph/relations.hpp"
#include "irene/util/io.hpp"

namespace irene::model {

/// How the action of a familiarisation frame is fed to the context encoder.
enum class ActionRepr { absolute, delta };

inline std::string to_string(ActionRepr a) { return a == ActionRepr::absolute ? "absolute" : "delta"; }

inline ActionRepr parse_action_repr(const std::string& s) {
  if (s == "absolute") return ActionRepr::absolute;
  if (s == "delta") return ActionRepr::delta;
  throw UsageError("action representation must be absolute or delta, got \"" + s + "\"");
}

struct ModelConfig {
  int hidden_dim = 96;
  int gnn_layers = 2;
  int transformer_layers = 6;
  int heads = 4;
  int ff_dim = 512;
  std::vector<int> policy_hidden = {256, 128, 256};
  int output_dim = 2;
  graph::RelationMask relations = graph::RelationMask::all();
  bool use_gcn = false;
  bool use_lstm_context = false;
  bool post_ln = false;
  ActionRepr action_repr = ActionRepr::absolute;
  int max_tokens = 64;
  bool include_boundary_walls = false;

  /// Published architecture sizes.
  static ModelConfig paper() { return {}; }

  /// Narrow variant for CPU experiments.
  static ModelConfig desk() {
    ModelConfig c;
    c.hidden_dim = 32;
    c.transformer_layers = 2;
    c.ff_dim = 128;
    c.policy_hidden = {128, 64, 128};
    return c;
  }

  /// Smallest useful variant, for gradient checks and pipeline tests.
  static ModelConfig toy() {
    ModelConfig c;
    c.hidden_dim = 8;
    c.gnn_layers = 1;
    c.transformer_layers = 1;
    c.heads = 2;
    c.ff_dim = 16;
    c.policy_hidden = {16, 8, 16};
    return c;
  }

  static ModelConfig preset(const std::string& name) {
    if (name == "paper") return paper();
    if (name == "desk") return desk();
    if (name == "toy") return toy();
    throw UsageError("unknown model preset \"" + name + "\" (paper, desk, toy)");
  }

  void validate() const {
    if (output_dim != 2) throw ShapeMismatch("output_dim must be 2");
    if (hidden_dim <= 0 || heads <= 0 || hidden_dim % heads != 0)
      throw ShapeMismatch("hidden_dim must be a positive multiple of heads");
    if (gnn_layers < 1 || transformer_layers < 1 || ff_dim < 1 || max_tokens < 2)
      throw ShapeMismatch("layer counts and widths must be positive");
    for (int h : policy_hidden)
      if (h < 1) throw ShapeMismatch("policy widths must be positive");
    if (relations.count() == 0) throw ShapeMismatch("at least one relation must be enabled");
  }

  nlohmann::json to_json() const {
    return {{"hidden_dim", hidden_dim},
            {"gnn_layers", gnn_layers},
            {"transformer_layers", transformer_layers},
            {"heads", heads},
            {"ff_dim", ff_dim},
            {"policy_hidden", policy_hidden},
            {"output_dim", output_dim},
            {"relations", relations.name()},
            {"relation_bits", relations.to_ulong()},
            {"use_gcn", use_gcn},
            {"use_lstm_context", use_lstm_context},
            {"post_ln", post_ln},
            {"action_repr", to_string(action_repr)},
            {"max_tokens", max_tokens},
            {"include_boundary_walls", include_boundary_walls}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.gnn_layers = j.at("gnn_layers").get<int>();
    c.transformer_layers = j.at("transformer_layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ff_dim = j.at("ff_dim").get<int>();
    c.policy_hidden = j.at("policy_hidden").get<std::vector<int>>();
    c.output_dim = j.at("output_dim").get<int>();
    c.relations = graph::RelationMask();
    const auto bits = j.at("relation_bits").get<unsigned long>();
    for (std::size_t t = 0; t < graph::kNumEdgeTypes; ++t)
      if (bits & (1UL << t)) c.relations.enable(graph::edge_type(t));
    c.use_gcn = j.at("use_gcn").get<bool>();
    c.use_lstm_context = j.at("use_lstm_context").get<bool>();
    c.post_ln = j.at("post_ln").get<bool>();
    c.action_repr = parse_action_repr(j.at("action_repr").get<std::string>());
    c.max_tokens = j.at("max_tokens").get<int>();
    c.include_boundary_walls = j.at("include_boundary_walls").get<bool>();
    c.validate();
    return c;
  }

  std::string hash() const { return util::hex64(util::fnv1a64(to_json().dump())); }
};

}  // namespace irene::model
