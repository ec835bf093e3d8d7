#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "irene/nn/attention.hpp"
#include "irene/nn/checkpoint.hpp"
#include "irene/nn/lstm.hpp"
#include "irene/nn/optim.hpp"
#include "../support/gradcheck.hpp"

using namespace irene::nn;
using irene::testing::check_gradients;
using irene::testing::check_op;
using irene::testing::random_mat;

namespace {

constexpr double kTol = 1e-4;

Tensor param(std::mt19937_64& rng, Index r, Index c, double lo = -1.0, double hi = 1.0) {
  return Tensor::parameter(random_mat(rng, r, c, lo, hi));
}

/// Values bounded away from zero so kinked activations stay differentiable under the probe step.
Tensor param_off_zero(std::mt19937_64& rng, Index r, Index c) {
  Mat m = random_mat(rng, r, c, 0.1, 1.5);
  std::bernoulli_distribution sign(0.5);
  for (Index i = 0; i < m.size(); ++i)
    if (sign(rng)) m.data()[i] = -m.data()[i];
  return Tensor::parameter(m);
}

LstmParams lstm_params(std::mt19937_64& rng, Index in, Index H) {
  return {param(rng, in, 4 * H, -0.5, 0.5), param(rng, H, 4 * H, -0.5, 0.5), param(rng, 1, 4 * H, -0.5, 0.5)};
}

AttentionParams attention_params(std::mt19937_64& rng, Index d) {
  return {param(rng, d, d, -0.6, 0.6), param(rng, 1, d, -0.2, 0.2), param(rng, d, d, -0.6, 0.6),
          param(rng, 1, d, -0.2, 0.2), param(rng, d, d, -0.6, 0.6), param(rng, 1, d, -0.2, 0.2),
          param(rng, d, d, -0.6, 0.6), param(rng, 1, d, -0.2, 0.2)};
}

}  // namespace

TEST(Ops, Examples) {
  EXPECT_EQ(relu(Tensor::row({-1, 0, 2})).value(), Tensor::row({0, 0, 2}).value());
  const auto ln = layer_norm(Tensor::row({3, 3, 3, 3}), Tensor::row({1, 1, 1, 1}), Tensor::row({0, 0, 0, 0}));
  EXPECT_LT(ln.value().cwiseAbs().maxCoeff(), 1e-12);
  const auto sm = softmax(Tensor::row({0, 0, 0}));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(sm.value()(0, i), 1.0 / 3.0, 1e-15);
}

TEST(Ops, SoftmaxRowsSumToOneAndLayerNormIsCentred) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = Tensor::constant(random_mat(rng, 1 + trial % 7, 2 + trial % 11, -20, 20));
    const auto s = softmax(x);
    for (Index r = 0; r < s.rows(); ++r) EXPECT_NEAR(s.value().row(r).sum(), 1.0, 1e-9);
    const Index n = x.cols();
    const auto ln = layer_norm(x, Tensor::constant(Mat::Ones(1, n)), Tensor::constant(Mat::Zero(1, n)));
    for (Index r = 0; r < ln.rows(); ++r) {
      const double m = ln.value().row(r).mean();
      EXPECT_LE(std::abs(m), 1e-6);
      const double raw_var = (x.value().row(r).array() - x.value().row(r).mean()).square().mean();
      if (raw_var < 0.1) continue;  // variance comparable to epsilon counts as degenerate
      const double var = (ln.value().row(r).array() - m).square().mean();
      EXPECT_NEAR(var, 1.0, 1e-4);
    }
  }
}

TEST(Ops, SoftmaxAlongColumns) {
  const Tensor x = Tensor::constant((Mat(2, 2) << 1, 5, 1, 5).finished());
  const auto s = softmax(x, 0);
  EXPECT_NEAR(s.value()(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(s.value()(1, 1), 0.5, 1e-15);
}

TEST(Ops, ShapeMismatchIsReported) {
  const Tensor a = Tensor::zeros(2, 3), b = Tensor::zeros(4, 5);
  EXPECT_THROW(add(a, b), irene::ShapeMismatch);
  EXPECT_THROW(matmul(a, a), irene::ShapeMismatch);
  EXPECT_THROW(linear(a, Tensor::zeros(2, 2), Tensor::zeros(1, 2)), irene::ShapeMismatch);
  EXPECT_THROW(layer_norm(a, Tensor::zeros(1, 2), Tensor::zeros(1, 3)), irene::ShapeMismatch);
  EXPECT_THROW(concat_cols({a, b}), irene::ShapeMismatch);
}

TEST(Ops, NonFiniteOutputsRaise) {
  const Tensor x = Tensor::row({1.0, 2.0});
  EXPECT_THROW(scale(x, std::numeric_limits<double>::infinity()), irene::NumericError);
  EXPECT_THROW(relu(Tensor::row({std::numeric_limits<double>::quiet_NaN()})), irene::NumericError);
}

TEST(Ops, ForwardIsDeterministic) {
  std::mt19937_64 rng(4);
  const Tensor x = Tensor::constant(random_mat(rng, 5, 8));
  const auto p = attention_params(rng, 8);
  EXPECT_EQ(multi_head_self_attention(x, p, 2).value(), multi_head_self_attention(x, p, 2).value());
}

TEST(GradCheck, ElementwiseAndBroadcast) {
  std::mt19937_64 rng(5);
  const auto a = param(rng, 3, 4), b = param(rng, 3, 4), row = param(rng, 1, 4), s = param(rng, 1, 1);
  EXPECT_LE(check_op([](auto& v) { return add(v[0], v[1]); }, {a, b}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return add(v[0], v[1]); }, {a, row}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return sub(v[0], v[1]); }, {a, s}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return mul(v[0], v[1]); }, {a, b}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return mul(v[0], v[1]); }, {a, row}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return scale(v[0], -2.5); }, {a}).max_rel, kTol);
}

TEST(GradCheck, Products) {
  std::mt19937_64 rng(6);
  const auto a = param(rng, 3, 4), b = param(rng, 4, 5), c = param(rng, 6, 4), bias = param(rng, 1, 5);
  EXPECT_LE(check_op([](auto& v) { return matmul(v[0], v[1]); }, {a, b}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return matmul_nt(v[0], v[1]); }, {a, c}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return linear(v[0], v[1], v[2]); }, {a, b, bias}).max_rel, kTol);
  SparseMat sp(3, 3);
  sp.insert(0, 1) = 0.5;
  sp.insert(2, 0) = -1.25;
  sp.insert(1, 1) = 2.0;
  sp.makeCompressed();
  EXPECT_LE(check_op([&](auto& v) { return spmm(sp, v[0]); }, {a}).max_rel, kTol);
}

TEST(GradCheck, Activations) {
  std::mt19937_64 rng(7);
  const auto x = param_off_zero(rng, 4, 5);
  EXPECT_LE(check_op([](auto& v) { return relu(v[0]); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return elu(v[0]); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return gelu(v[0]); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return sigmoid(v[0]); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return tanh(v[0]); }, {x}).max_rel, kTol);
}

TEST(GradCheck, Normalizations) {
  std::mt19937_64 rng(8);
  const auto x = param(rng, 4, 6, -2, 2), g = param(rng, 1, 6), b = param(rng, 1, 6);
  EXPECT_LE(check_op([](auto& v) { return layer_norm(v[0], v[1], v[2]); }, {x, g, b}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return softmax(v[0], 1); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return softmax(v[0], 0); }, {x}).max_rel, kTol);
  const std::vector<char> mask = {0, 1, 0, 0, 1, 0};
  EXPECT_LE(check_op([&](auto& v) { return masked_softmax(v[0], mask); }, {x}).max_rel, kTol);
}

TEST(GradCheck, ReductionsAndShapes) {
  std::mt19937_64 rng(9);
  const auto x = param(rng, 6, 3), y = param(rng, 6, 2), r = param(rng, 1, 3);
  EXPECT_LE(check_op([](auto& v) { return mean_pool(v[0], 0); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return mean_pool(v[0], 1); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return segment_mean(v[0], {0, 2, 3, 6}); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return sum(v[0]); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return mean(v[0]); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return concat_cols({v[0], v[1], v[0]}); }, {x, y}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return concat_rows({v[0], v[1], v[0]}); }, {x, r}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return slice_cols(v[0], 1, 2); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return slice_rows(v[0], 2, 3); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return gather_rows(v[0], {5, 0, 5, 2}); }, {x}).max_rel, kTol);
  EXPECT_LE(check_op([](auto& v) { return repeat_rows(v[0], 4); }, {r}).max_rel, kTol);
}

TEST(Lstm, ZeroEverythingGivesZeroHidden) {
  const LstmParams p{Tensor::zeros(3, 8), Tensor::zeros(2, 8), Tensor::zeros(1, 8)};
  const auto [h, c] = lstm_cell(Tensor::zeros(1, 3), Tensor::zeros(1, 2), Tensor::zeros(1, 2), p);
  EXPECT_EQ(h.value(), Mat::Zero(1, 2));
  EXPECT_EQ(c.value(), Mat::Zero(1, 2));
}

TEST(Lstm, SaturatedForgetGateKeepsCell) {
  std::mt19937_64 rng(10);
  const Index H = 3;
  Mat b = Mat::Zero(1, 4 * H);
  b.leftCols(H).setConstant(-60.0);       // input gate closed
  b.middleCols(H, H).setConstant(60.0);   // forget gate open
  const LstmParams p{Tensor::constant(random_mat(rng, 2, 4 * H, -0.1, 0.1)),
                     Tensor::constant(random_mat(rng, H, 4 * H, -0.1, 0.1)), Tensor::constant(b)};
  const Tensor c0 = Tensor::constant(random_mat(rng, 1, H));
  const auto [h, c] = lstm_cell(Tensor::constant(random_mat(rng, 1, 2)), Tensor::constant(random_mat(rng, 1, H)), c0, p);
  EXPECT_LT((c.value() - c0.value()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Lstm, CellGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  const auto p = lstm_params(rng, 3, 4);
  const auto x = param(rng, 2, 3), h = param(rng, 2, 4), c = param(rng, 2, 4);
  const auto rep = check_op(
      [&](auto& v) {
        const auto [h1, c1] = lstm_cell(v[0], v[1], v[2], p);
        return concat_cols({h1, c1});
      },
      {x, h, c, p.w_x, p.w_h, p.b});
  EXPECT_LE(rep.max_rel, kTol) << rep.worst;
}

TEST(Lstm, AggregatorEqualsUnrolledCell) {
  std::mt19937_64 rng(12);
  const Index N = 6, d = 5, H = 4;
  const auto p = lstm_params(rng, d, H);
  const Tensor x = Tensor::constant(random_mat(rng, N, d));
  const std::vector<std::vector<Index>> nbrs = {{1, 2, 3}, {}, {0}, {5, 4, 3, 2, 1}, {4}, {0, 0}};
  const auto out = lstm_aggregate(x, nbrs, p);
  for (Index v = 0; v < N; ++v) {
    Tensor h = Tensor::zeros(1, H), c = Tensor::zeros(1, H);
    for (Index j : nbrs[static_cast<std::size_t>(v)]) std::tie(h, c) = lstm_cell(slice_rows(x, j, 1), h, c, p);
    EXPECT_LT((out.value().row(v) - h.value()).cwiseAbs().maxCoeff(), 1e-13) << "node " << v;
  }
}

TEST(Lstm, AggregatorGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  const auto p = lstm_params(rng, 4, 3);
  const auto x = param(rng, 5, 4);
  const std::vector<std::vector<Index>> nbrs = {{1, 2}, {0, 2, 3, 4}, {}, {3}, {2, 2, 1}};
  const auto rep = check_op([&](auto& v) { return lstm_aggregate(v[0], nbrs, p); }, {x, p.w_x, p.w_h, p.b});
  EXPECT_LE(rep.max_rel, kTol) << rep.worst;
}

TEST(Attention, SingleTokenReturnsValueProjection) {
  std::mt19937_64 rng(14);
  auto p = attention_params(rng, 4);
  p.w_o = Tensor::constant(Mat::Identity(4, 4));
  p.b_o = Tensor::zeros(1, 4);
  const Tensor x = Tensor::constant(random_mat(rng, 1, 4));
  const auto out = multi_head_self_attention(x, p, 2);
  const Mat expect = (x.value() * p.w_v.value()) + p.b_v.value();
  EXPECT_LT((out.value() - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Attention, IdenticalTokensGiveIdenticalOutputs) {
  std::mt19937_64 rng(15);
  const auto p = attention_params(rng, 8);
  const Mat row = random_mat(rng, 1, 8);
  const auto out = multi_head_self_attention(Tensor::constant(row.replicate(2, 1)), p, 4);
  EXPECT_EQ(out.value().row(0), out.value().row(1));
}

TEST(Attention, WeightsSumToOneOverUnmaskedKeys) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = attention_params(rng, 8);
    const Tensor x = Tensor::constant(random_mat(rng, 6, 8, -2, 2));
    std::vector<char> mask = {0, 0, 1, 0, 1, 0};
    std::vector<Tensor> weights;
    const auto out = multi_head_self_attention(x, p, 4, mask, &weights);
    ASSERT_EQ(weights.size(), 4u);
    for (const auto& w : weights)
      for (Index r = 0; r < w.rows(); ++r) {
        EXPECT_NEAR(w.value().row(r).sum(), 1.0, 1e-12);
        EXPECT_EQ(w.value()(r, 2), 0.0);
        EXPECT_EQ(w.value()(r, 4), 0.0);
      }
    EXPECT_EQ(out.value().row(2), Mat::Zero(1, 8));
    EXPECT_EQ(out.value().row(4), Mat::Zero(1, 8));
  }
}

TEST(Attention, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(17);
  const auto p = attention_params(rng, 4);
  const auto x = param(rng, 3, 4);
  const std::vector<Tensor> all = {x, p.w_q, p.b_q, p.w_k, p.b_k, p.w_v, p.b_v, p.w_o, p.b_o};
  auto rep = check_op([&](auto& v) { return multi_head_self_attention(v[0], p, 2); }, all);
  EXPECT_LE(rep.max_rel, kTol) << rep.worst;
  rep = check_op([&](auto& v) { return multi_head_self_attention(v[0], p, 2, {0, 1, 0}); }, all);
  EXPECT_LE(rep.max_rel, kTol) << rep.worst;
}

TEST(Backward, LinearCaseHasOuterProductGradient) {
  std::mt19937_64 rng(18);
  const Tensor x = Tensor::constant(random_mat(rng, 1, 3));
  Tensor w = param(rng, 3, 2);
  backward(sum(matmul(x, w)));
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(w.grad()(i, j), x.value()(0, i));
}

TEST(Backward, SecondCallWithoutZeroingDoublesGradients) {
  std::mt19937_64 rng(19);
  Tensor w = param(rng, 3, 3);
  const Tensor loss = sum(tanh(matmul(Tensor::constant(random_mat(rng, 2, 3)), w)));
  backward(loss);
  const Mat once = w.grad();
  backward(loss);
  EXPECT_LT((w.grad() - 2.0 * once).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Backward, DisconnectedLossRaises) {
  const Tensor c = Tensor::constant(Mat::Ones(2, 2));
  EXPECT_THROW(backward(sum(c)), irene::GraphDisconnected);
  Tensor w = Tensor::parameter(Mat::Ones(2, 2));
  Tensor loss;
  {
    NoGradGuard ng;
    loss = sum(mul(w, w));
  }
  EXPECT_THROW(backward(loss), irene::GraphDisconnected);
  EXPECT_THROW(backward(mul(w, w)), irene::ShapeMismatch);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore store;
  Tensor p = store.add("p", Mat::Constant(1, 1, 0.3));
  p.mutable_grad() = Mat::Ones(1, 1);
  AdamConfig cfg;
  adam_step(store, cfg);
  EXPECT_NEAR(p.item() - 0.3, -cfg.lr / (1.0 + cfg.epsilon), 1e-15);
  EXPECT_FALSE(p.has_grad());
}

TEST(Adam, ZeroGradientLeavesParameterAndDecaysMoments) {
  ParameterStore store;
  Tensor p = store.add("p", Mat::Constant(1, 1, 0.3));
  Tensor q = store.add("q", Mat::Constant(1, 1, 0.0));
  AdamConfig cfg;
  q.mutable_grad() = Mat::Ones(1, 1);
  p.mutable_grad() = Mat::Ones(1, 1);
  adam_step(store, cfg);
  const double m = store.at("p").m(0, 0), v = store.at("p").v(0, 0);
  p.mutable_grad() = Mat::Zero(1, 1);
  q.mutable_grad() = Mat::Ones(1, 1);
  adam_step(store, cfg);
  EXPECT_NEAR(store.at("p").m(0, 0), cfg.beta1 * m, 1e-15);
  EXPECT_NEAR(store.at("p").v(0, 0), cfg.beta2 * v, 1e-15);
  // with no gradient history the parameter stays put
  ParameterStore fresh;
  Tensor z = fresh.add("z", Mat::Constant(1, 1, 0.7));
  Tensor other = fresh.add("other", Mat::Constant(1, 1, 0.0));
  z.mutable_grad() = Mat::Zero(1, 1);
  other.mutable_grad() = Mat::Ones(1, 1);
  adam_step(fresh, cfg);
  EXPECT_EQ(z.item(), 0.7);
  EXPECT_EQ(fresh.at("z").m(0, 0), 0.0);
  EXPECT_EQ(fresh.at("z").v(0, 0), 0.0);
}

TEST(Adam, MissingGradientsRaise) {
  ParameterStore store;
  store.add("p", Mat::Ones(1, 1));
  EXPECT_THROW(adam_step(store, AdamConfig{}), irene::MissingGrad);
}

TEST(Adam, QuadraticLossMatchesDirectSimulation) {
  // Independent scalar recurrence for minimizing p^2 from p = 1.
  auto simulate = [](double lr, int steps) {
    double p = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= steps; ++t) {
      const double g = 2.0 * p;
      m = 0.9 * m + 0.1 * g;
      v = 0.99 * v + 0.01 * g * g;
      p -= lr * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.99, t))) + 1e-8);
    }
    return p;
  };
  for (double lr : {5e-4, 5e-2}) {
    ParameterStore store;
    Tensor p = store.add("p", Mat::Ones(1, 1));
    AdamConfig cfg;
    cfg.lr = lr;
    for (int t = 0; t < 100; ++t) {
      backward(mul(p, p));
      adam_step(store, cfg);
    }
    EXPECT_NEAR(p.item(), simulate(lr, 100), 1e-12);
    if (lr == 5e-4) EXPECT_NEAR(p.item(), 0.950366, 1e-6);  // about lr per step: far from the optimum
    if (lr == 5e-2) EXPECT_LT(std::abs(p.item()), 1e-2);
  }
}

TEST(ParameterStoreTest, DuplicateNamesRejected) {
  ParameterStore store;
  store.add("w", Mat::Ones(2, 2));
  EXPECT_THROW(store.add("w", Mat::Ones(1, 1)), irene::Error);
  EXPECT_EQ(store.num_scalars(), 4u);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(20);
  ParameterStore store;
  Tensor a = store.add("a", random_mat(rng, 3, 4));
  Tensor b = store.add("b", random_mat(rng, 1, 4));
  backward(sum(mul(a, a)));
  b.mutable_grad() = Mat::Ones(1, 4);
  adam_step(store, AdamConfig{});
  const nlohmann::json meta = {{"note", "x"}};
  const std::string bytes = encode_checkpoint(store, meta);
  const auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.meta, meta);
  EXPECT_EQ(ck.store.step(), 1);
  ASSERT_EQ(ck.store.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(ck.store.entries()[i].tensor.value(), store.entries()[i].tensor.value());
    EXPECT_EQ(ck.store.entries()[i].m, store.entries()[i].m);
    EXPECT_EQ(ck.store.entries()[i].v, store.entries()[i].v);
  }
  EXPECT_EQ(encode_checkpoint(ck.store, meta), bytes);

  ParameterStore target;
  target.add("a", Mat::Zero(3, 4));
  target.add("b", Mat::Zero(1, 4));
  restore(target, ck.store);
  EXPECT_EQ(target.get("a").value(), a.value());

  ParameterStore wrong;
  wrong.add("a", Mat::Zero(3, 4));
  wrong.add("c", Mat::Zero(1, 4));
  EXPECT_THROW(restore(wrong, ck.store), irene::CheckpointError);
  EXPECT_THROW(decode_checkpoint("garbage-bytes-here"), irene::CheckpointError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), irene::CheckpointError);
}
