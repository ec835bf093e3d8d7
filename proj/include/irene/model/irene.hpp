#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "irene/model/config.hpp"
#include "irene/model/input.hpp"
#include "irene/nn/attention.hpp"
#include "irene/nn/lstm.hpp"
#include "irene/nn/ops.hpp"
#include "irene/nn/optim.hpp"

namespace irene::model {

using nn::Tensor;

struct LinearLayer {
  Tensor w, b;
  Tensor operator()(const Tensor& x) const { return nn::linear(x, w, b); }
};

struct NormLayer {
  Tensor gamma, beta;
  Tensor operator()(const Tensor& x) const { return nn::layer_norm(x, gamma, beta); }
};

struct TransformerBlock {
  NormLayer ln1, ln2;
  nn::AttentionParams attn;
  LinearLayer ff1, ff2;
};

struct GnnLayer {
  LinearLayer self;                    // SAGE only
  std::vector<nn::LstmParams> lstm;    // SAGE only, one per relation
  Tensor message;                      // (relations * hidden) x hidden, stacked per-relation weights
  Tensor bias;                         // GCN only
};

/// The observer model: graph state encoder, per-trial context encoder and policy.
class IreneModel {
 public:
  explicit IreneModel(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    nn::Init init{rng};
    const Index H = cfg_.hidden_dim;
    auto linear = [&](const std::string& name, Index in, Index out) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      return LinearLayer{store_.add(name + ".w", init.uniform(in, out, bound)),
                         store_.add(name + ".b", init.uniform(1, out, bound))};
    };
    auto norm = [&](const std::string& name, Index n) {
      return NormLayer{store_.add(name + ".gamma", Mat::Ones(1, n)), store_.add(name + ".beta", Mat::Zero(1, n))};
    };
    auto lstm = [&](const std::string& name, Index in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(H));
      Mat b = init.uniform(1, 4 * H, bound);
      b.middleCols(H, H).setConstant(1.0);
      return nn::LstmParams{store_.add(name + ".wx", init.uniform(in, 4 * H, bound)),
                            store_.add(name + ".wh", init.uniform(H, 4 * H, bound)), store_.add(name + ".b", b)};
    };

    f_type_ = linear("fuse.type", static_cast<Index>(gridworld::kNumKinds), H);
    f_shape_ = linear("fuse.shape", static_cast<Index>(gridworld::kNumShapes), H);
    f_colour_ = linear("fuse.colour", 3, H);
    f_pos_ = linear("fuse.position", 2, H);
    f_f1_ = linear("fuse.f1", 3 * H, H);
    f_f2_ = linear("fuse.f2", 2 * H, H);

    for (std::size_t t = 0; t < graph::kNumEdgeTypes; ++t)
      if (cfg_.relations.contains(graph::edge_type(t))) relations_.push_back(graph::edge_type(t));
    const auto R = static_cast<Index>(relations_.size());
    for (int l = 0; l < cfg_.gnn_layers; ++l) {
      const std::string p = "gnn." + std::to_string(l);
      GnnLayer layer;
      const double bound = 1.0 / std::sqrt(static_cast<double>(H));
      if (cfg_.use_gcn) {
        layer.message = store_.add(p + ".gcn.w", init.uniform(R * H, H, bound));
        layer.bias = store_.add(p + ".gcn.b", init.uniform(1, H, bound));
      } else {
        layer.self = linear(p + ".self", H, H);
        for (auto r : relations_) layer.lstm.push_back(lstm(p + ".lstm." + std::string(graph::to_string(r)), H));
        layer.message = store_.add(p + ".message.w", init.uniform(R * H, H, bound));
      }
      gnn_.push_back(std::move(layer));
    }

    proj_ = linear("context.proj", H + 2, H);
    pos_table_ = store_.add("context.position", init.normal(cfg_.max_tokens, H, 0.02));
    ln_in_ = norm("context.ln_in", H);
    if (cfg_.use_lstm_context) {
      ctx_lstm_ = lstm("context.lstm", H);
    } else {
      ctx_token_ = store_.add("context.ctx_token", init.normal(1, H, 0.02));
      for (int l = 0; l < cfg_.transformer_layers; ++l) {
        const std::string p = "context.block." + std::to_string(l);
        TransformerBlock b;
        b.ln1 = norm(p + ".ln1", H);
        b.ln2 = norm(p + ".ln2", H);
        const auto q = linear(p + ".attn.q", H, H), k = linear(p + ".attn.k", H, H), v = linear(p + ".attn.v", H, H),
                   o = linear(p + ".attn.o", H, H);
        b.attn = {q.w, q.b, k.w, k.b, v.w, v.b, o.w, o.b};
        b.ff1 = linear(p + ".ff1", H, cfg_.ff_dim);
        b.ff2 = linear(p + ".ff2", cfg_.ff_dim, H);
        blocks_.push_back(std::move(b));
      }
      if (!cfg_.post_ln) ln_out_ = norm("context.ln_out", H);
    }

    Index in = 2 * H;
    for (std::size_t i = 0; i < cfg_.policy_hidden.size(); ++i) {
      policy_.push_back(linear("policy." + std::to_string(i), in, cfg_.policy_hidden[i]));
      in = cfg_.policy_hidden[i];
    }
    policy_.push_back(linear("policy." + std::to_string(cfg_.policy_hidden.size()), in, cfg_.output_dim));
  }

  IreneModel(const IreneModel&) = delete;
  IreneModel& operator=(const IreneModel&) = delete;
  IreneModel(IreneModel&&) = default;
  IreneModel& operator=(IreneModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  const std::vector<graph::EdgeType>& relations() const { return relations_; }

  struct Fusion {
    Tensor tsc;    // type/shape/colour embedding, position-free
    Tensor fused;  // final node vector
  };

  /// Node feature fusion for rows of packed node features.
  Fusion fuse(const Tensor& features) const {
    const Tensor type = nn::slice_cols(features, kTypeOffset, static_cast<Index>(gridworld::kNumKinds));
    const Tensor shape = nn::slice_cols(features, kShapeOffset, static_cast<Index>(gridworld::kNumShapes));
    const Tensor colour = nn::slice_cols(features, kColourOffset, 3);
    const Tensor position = nn::slice_cols(features, kPositionOffset, 2);
    Tensor tsc = f_f1_(nn::relu(nn::concat_cols({f_type_(type), f_shape_(shape), f_colour_(colour)})));
    Tensor fused = f_f2_(nn::relu(nn::concat_cols({f_pos_(position), tsc})));
    return {std::move(tsc), std::move(fused)};
  }

  /// One state embedding per frame (frames x hidden). With `shuffle`, every neighbour list is
  /// visited in a random order drawn from it; otherwise in ascending node order.
  Tensor encode_states(const TrialInput& in, std::mt19937_64* shuffle = nullptr) const {
    if (in.num_frames() < 1) throw EmptyTrial("no frames to encode");
    if (in.relations != relations_) throw ShapeMismatch("input was prepared with a different relation mask");
    Tensor h = fuse(Tensor::constant(in.features)).fused;
    const auto R = relations_.size();
    std::vector<std::vector<std::vector<Index>>> shuffled;
    const auto* nbrs = &in.neighbours;
    if (shuffle && !cfg_.use_gcn) {
      shuffled = in.neighbours;
      for (auto& per_rel : shuffled)
        for (auto& list : per_rel) std::shuffle(list.begin(), list.end(), *shuffle);
      nbrs = &shuffled;
    }
    std::vector<nn::SparseMat> adj;
    if (cfg_.use_gcn)
      for (std::size_t r = 0; r < R; ++r) adj.push_back(gcn_adjacency(in.neighbours[r]));
    for (const auto& layer : gnn_) {
      std::vector<Tensor> messages;
      messages.reserve(R);
      if (cfg_.use_gcn) {
        for (std::size_t r = 0; r < R; ++r) messages.push_back(nn::spmm(adj[r], h));
        h = nn::elu(nn::add(nn::matmul(R == 1 ? messages[0] : nn::concat_cols(messages), layer.message), layer.bias));
      } else {
        for (std::size_t r = 0; r < R; ++r) messages.push_back(nn::lstm_aggregate(h, (*nbrs)[r], layer.lstm[r]));
        const Tensor m = nn::matmul(R == 1 ? messages[0] : nn::concat_cols(messages), layer.message);
        h = nn::elu(nn::add(layer.self(h), m));
      }
    }
    return nn::segment_mean(h, in.frame_offsets);
  }

  /// Trial representation (1 x hidden) from per-frame states and action features.
  Tensor encode_trial(const Tensor& states, const Mat& actions) const {
    const Index T = states.rows();
    if (T < 1) throw EmptyTrial("trial without states");
    if (actions.rows() != T || actions.cols() != 2) throw ShapeMismatch("one 2-d action row per state is required");
    const Tensor tokens = proj_(nn::concat_cols({states, Tensor::constant(actions)}));
    if (cfg_.use_lstm_context) {
      if (T > cfg_.max_tokens) throw ShapeMismatch("trial longer than the positional table");
      const Tensor x = ln_in_(nn::add(tokens, nn::slice_rows(pos_table_, 0, T)));
      const Index H = cfg_.hidden_dim;
      Tensor h = Tensor::zeros(1, H), c = Tensor::zeros(1, H);
      for (Index j = 0; j < T; ++j) std::tie(h, c) = nn::lstm_cell(nn::slice_rows(x, j, 1), h, c, ctx_lstm_);
      return h;
    }
    if (T + 1 > cfg_.max_tokens) throw ShapeMismatch("trial longer than the positional table");
    Tensor x = nn::concat_rows({ctx_token_, tokens});
    x = ln_in_(nn::add(x, nn::slice_rows(pos_table_, 0, T + 1)));
    for (const auto& b : blocks_) {
      if (cfg_.post_ln) {
        x = b.ln1(nn::add(x, nn::multi_head_self_attention(x, b.attn, cfg_.heads)));
        x = b.ln2(nn::add(x, b.ff2(nn::gelu(b.ff1(x)))));
      } else {
        x = nn::add(x, nn::multi_head_self_attention(b.ln1(x), b.attn, cfg_.heads));
        x = nn::add(x, b.ff2(nn::gelu(b.ff1(b.ln2(x)))));
      }
    }
    if (!cfg_.post_ln) x = ln_out_(x);
    return nn::slice_rows(x, 0, 1);
  }

  /// Mean of the eight trial representations, summed in a value-sorted order so the result does
  /// not depend on the order the trials are given in.
  static Tensor encode_context(const std::vector<Tensor>& trials) {
    if (trials.size() != gridworld::kFamiliarisationTrials)
      throw WrongTrialCount("context needs exactly 8 trial encodings, got " + std::to_string(trials.size()));
    std::vector<std::size_t> order(trials.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const Mat& x = trials[a].value();
      const Mat& y = trials[b].value();
      return std::lexicographical_compare(x.data(), x.data() + x.size(), y.data(), y.data() + y.size());
    });
    Tensor acc = trials[order[0]];
    for (std::size_t i = 1; i < order.size(); ++i) acc = nn::add(acc, trials[order[i]]);
    return nn::scale(acc, 1.0 / static_cast<double>(trials.size()));
  }

  /// Next-position prediction (rows x 2) for each state row given the context.
  Tensor predict_action(const Tensor& context, const Tensor& states) const {
    if (context.rows() != 1 || context.cols() != cfg_.hidden_dim || states.cols() != cfg_.hidden_dim)
      throw ShapeMismatch("policy input widths do not match the hidden size");
    Tensor x = nn::concat_cols({nn::repeat_rows(context, states.rows()), states});
    for (std::size_t i = 0; i + 1 < policy_.size(); ++i) x = nn::relu(policy_[i](x));
    return policy_.back()(x);
  }

  Tensor context(const PreparedEpisode& ep, std::mt19937_64* shuffle = nullptr) const {
    std::vector<Tensor> enc;
    enc.reserve(ep.familiarisation.size());
    for (const auto& t : ep.familiarisation) enc.push_back(encode_trial(encode_states(t, shuffle), t.actions));
    return encode_context(enc);
  }

  /// Predictions for every test frame that has a successor ((frames - 1) x 2).
  Tensor predict_test(const Tensor& context, const TrialInput& test, std::mt19937_64* shuffle = nullptr) const {
    const Tensor states = encode_states(test, shuffle);
    return predict_action(context, nn::slice_rows(states, 0, states.rows() - 1));
  }

  Tensor forward_episode(const PreparedEpisode& ep, std::mt19937_64* shuffle = nullptr) const {
    return predict_test(context(ep, shuffle), ep.test, shuffle);
  }

  Tensor forward_episode(const gridworld::Episode& ep) const { return forward_episode(prepare_episode(ep, cfg_)); }

  LinearLayer& policy_layer(std::size_t i) { return policy_.at(i); }
  std::size_t policy_depth() const { return policy_.size(); }

 private:
  /// D^-1/2 (A + I) D^-1/2 with D the in-degree including the self loop.
  static nn::SparseMat gcn_adjacency(const std::vector<std::vector<Index>>& nbrs) {
    const auto n = static_cast<Index>(nbrs.size());
    std::vector<double> inv_sqrt(nbrs.size());
    for (std::size_t v = 0; v < nbrs.size(); ++v) inv_sqrt[v] = 1.0 / std::sqrt(static_cast<double>(nbrs[v].size() + 1));
    std::vector<Eigen::Triplet<double>> trip;
    for (Index v = 0; v < n; ++v) {
      const auto sv = static_cast<std::size_t>(v);
      trip.emplace_back(v, v, inv_sqrt[sv] * inv_sqrt[sv]);
      for (Index u : nbrs[sv]) trip.emplace_back(v, u, inv_sqrt[sv] * inv_sqrt[static_cast<std::size_t>(u)]);
    }
    nn::SparseMat a(n, n);
    a.setFromTriplets(trip.begin(), trip.end());
    return a;
  }

  ModelConfig cfg_;
  nn::ParameterStore store_;
  std::vector<graph::EdgeType> relations_;
  LinearLayer f_type_, f_shape_, f_colour_, f_pos_, f_f1_, f_f2_;
  std::vector<GnnLayer> gnn_;
  LinearLayer proj_;
  Tensor pos_table_;
  NormLayer ln_in_, ln_out_;
  Tensor ctx_token_;
  nn::LstmParams ctx_lstm_;
  std::vector<TransformerBlock> blocks_;
  std::vector<LinearLayer> policy_;
};

}  // namespace irene::model
