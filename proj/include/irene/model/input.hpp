#pragma once

#include <array>
#include <vector>

#include "irene/graph/graph_builder.hpp"
#include "irene/gridworld/types.hpp"
#include "irene/model/config.hpp"
#include "irene/nn/tensor.hpp"

namespace irene::model {

using nn::Index;
using nn::Mat;

/// All frames of one trial as a single disjoint-union graph, ready for the encoder.
struct TrialInput {
  Mat features;                        // nodes x (kinds + shapes + 3 + 2), stacked frame by frame
  std::vector<Index> frame_offsets;    // frames + 1 entries
  std::vector<graph::EdgeType> relations;  // enabled relations, in edge-type order
  /// neighbours[r][v]: sources of r-edges into node v, ascending.
  std::vector<std::vector<std::vector<Index>>> neighbours;
  Mat actions;  // frames x 2, zero for the final frame
  Mat targets;  // (frames - 1) x 2, normalized next agent position

  Index num_frames() const { return static_cast<Index>(frame_offsets.size()) - 1; }
  Index num_nodes() const { return features.rows(); }
};

struct PreparedEpisode {
  gridworld::TaskKind task{};
  gridworld::EpisodeLabel label{};
  std::vector<TrialInput> familiarisation;
  TrialInput test;
};

inline constexpr Index kFeatureWidth = static_cast<Index>(gridworld::kNumKinds + gridworld::kNumShapes + 3 + 2);
inline constexpr Index kTypeOffset = 0;
inline constexpr Index kShapeOffset = static_cast<Index>(gridworld::kNumKinds);
inline constexpr Index kColourOffset = kShapeOffset + static_cast<Index>(gridworld::kNumShapes);
inline constexpr Index kPositionOffset = kColourOffset + 3;

inline void write_features(const graph::NodeFeatures& f, Mat& m, Index row) {
  Index c = 0;
  for (double v : f.type) m(row, c++) = v;
  for (double v : f.shape) m(row, c++) = v;
  for (double v : f.colour) m(row, c++) = v;
  for (double v : f.position) m(row, c++) = v;
}

/// Appends one frame graph to a trial input under construction.
inline void append_graph(TrialInput& in, const graph::FrameGraph& g) {
  const Index base = in.features.rows();
  const auto n = static_cast<Index>(g.num_nodes());
  in.features.conservativeResize(base + n, kFeatureWidth);
  for (Index i = 0; i < n; ++i) write_features(g.nodes[static_cast<std::size_t>(i)], in.features, base + i);
  for (auto& per_rel : in.neighbours) per_rel.resize(static_cast<std::size_t>(base + n));
  std::array<int, graph::kNumEdgeTypes> slot{};
  slot.fill(-1);
  for (std::size_t r = 0; r < in.relations.size(); ++r) slot[static_cast<std::size_t>(in.relations[r])] = static_cast<int>(r);
  // edges are produced in ascending (src, dst) order, so each list ends up sorted by source
  for (const auto& e : g.edges) {
    const int r = slot[static_cast<std::size_t>(e.type)];
    if (r < 0) continue;
    in.neighbours[static_cast<std::size_t>(r)][static_cast<std::size_t>(base + e.dst)].push_back(base + e.src);
  }
  if (in.frame_offsets.empty()) in.frame_offsets.push_back(0);
  in.frame_offsets.push_back(base + n);
}

inline TrialInput empty_input(const ModelConfig& cfg) {
  TrialInput in;
  in.features.resize(0, kFeatureWidth);
  for (std::size_t t = 0; t < graph::kNumEdgeTypes; ++t)
    if (cfg.relations.contains(graph::edge_type(t))) in.relations.push_back(graph::edge_type(t));
  in.neighbours.resize(in.relations.size());
  in.frame_offsets.push_back(0);
  return in;
}

/// Graph input for a list of frames (no actions or targets).
inline TrialInput prepare_frames(const std::vector<gridworld::Frame>& frames, const ModelConfig& cfg) {
  TrialInput in = empty_input(cfg);
  in.frame_offsets.clear();
  graph::GraphOptions opts;
  opts.include_boundary_walls = cfg.include_boundary_walls;
  for (const auto& f : frames) {
    const auto g = graph::build_graph(f, cfg.relations, opts);
    if (g.num_nodes() == 0) throw EmptyTrial("frame without entities");
    append_graph(in, g);
  }
  in.actions = Mat::Zero(static_cast<Index>(frames.size()), 2);
  return in;
}

inline std::array<double, 2> normalized(gridworld::Cell c, const gridworld::GridSpec& grid) {
  const auto [x, y] = graph::normalize_position(c.x, c.y, grid.width, grid.height);
  return {x, y};
}

inline TrialInput prepare_trial(const gridworld::Trial& t, const ModelConfig& cfg) {
  if (t.frames.empty()) throw EmptyTrial("trial without frames");
  if (t.actions.size() + 1 != t.frames.size()) throw LengthMismatch("a trial needs one action per frame transition");
  TrialInput in = prepare_frames(t.frames, cfg);
  const auto& grid = t.frames.front().grid;
  const Index T = static_cast<Index>(t.frames.size());
  in.targets = Mat::Zero(T - 1, 2);
  for (Index j = 0; j + 1 < T; ++j) {
    const auto* agent = t.frames[static_cast<std::size_t>(j)].agent();
    if (!agent) throw SchemaError("frame without an agent");
    const auto next = normalized(t.actions[static_cast<std::size_t>(j)], grid);
    in.targets(j, 0) = next[0];
    in.targets(j, 1) = next[1];
    if (cfg.action_repr == ActionRepr::absolute) {
      in.actions(j, 0) = next[0];
      in.actions(j, 1) = next[1];
    } else {
      in.actions(j, 0) = static_cast<double>(t.actions[static_cast<std::size_t>(j)].x - agent->pos.x) / grid.spacing;
      in.actions(j, 1) = static_cast<double>(t.actions[static_cast<std::size_t>(j)].y - agent->pos.y) / grid.spacing;
    }
  }
  return in;
}

inline PreparedEpisode prepare_episode(const gridworld::Episode& e, const ModelConfig& cfg) {
  if (e.familiarisation.size() != gridworld::kFamiliarisationTrials)
    throw WrongTrialCount("an episode needs exactly 8 familiarisation trials, got " +
                          std::to_string(e.familiarisation.size()));
  PreparedEpisode p;
  p.task = e.task;
  p.label = e.label;
  for (const auto& t : e.familiarisation) p.familiarisation.push_back(prepare_trial(t, cfg));
  p.test = prepare_trial(e.test, cfg);
  if (p.test.num_frames() < 2) throw EmptyTrial("test trial needs at least two frames");
  return p;
}

}  // namespace irene::model
