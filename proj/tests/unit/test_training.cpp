#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "irene/gridworld/generator.hpp"
#include "irene/training/training.hpp"
#include "../support/toy_episode.hpp"

using namespace irene;
using namespace irene::training;
using gridworld::TaskKind;

namespace {

std::vector<gridworld::Episode> mixed_episodes(std::size_t per_task, std::uint64_t seed0 = 100) {
  std::vector<gridworld::Episode> out;
  for (auto t : gridworld::kTrainingTasks)
    for (std::size_t i = 0; i < per_task; ++i) out.push_back(gridworld::generate_training_episode(t, seed0 + i));
  return out;
}

TrainConfig quick(int epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 4;
  return c;
}

}  // namespace

TEST(Split, TenEpisodesGiveEightAndTwo) {
  std::vector<int> xs(10);
  std::iota(xs.begin(), xs.end(), 0);
  const auto [tr, va] = split_train_val(xs, 0.8, 7);
  EXPECT_EQ(tr.size(), 8u);
  EXPECT_EQ(va.size(), 2u);
  std::vector<int> all = tr;
  all.insert(all.end(), va.begin(), va.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, xs);
}

TEST(Split, SameSeedSameSplitAndCeiling) {
  std::vector<int> xs(7);
  std::iota(xs.begin(), xs.end(), 0);
  EXPECT_EQ(split_train_val(xs, 0.8, 3), split_train_val(xs, 0.8, 3));
  EXPECT_NE(split_train_val(xs, 0.8, 3).first, split_train_val(xs, 0.8, 4).first);
  EXPECT_EQ(split_train_val(xs, 0.8, 3).first.size(), 6u);  // ceil(5.6)
  EXPECT_EQ(split_train_val(std::vector<int>{1, 2, 3, 4, 5}, 0.5, 3).first.size(), 3u);
}

TEST(Split, UnionIsInputMultiset) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> xs(5 + rng() % 40);
    for (auto& x : xs) x = static_cast<int>(rng() % 4);
    const auto [tr, va] = split_train_val(xs, 0.1 + 0.8 * static_cast<double>(rng() % 100) / 100.0, rng());
    std::vector<int> all = tr;
    all.insert(all.end(), va.begin(), va.end());
    std::sort(all.begin(), all.end());
    std::sort(xs.begin(), xs.end());
    EXPECT_EQ(all, xs);
    EXPECT_FALSE(va.empty());
  }
}

TEST(Split, TooFewEpisodes) {
  EXPECT_THROW(split_train_val(std::vector<int>{1, 2, 3, 4}, 0.8, 7), TooFewEpisodes);
}

TEST(Loss, Examples) {
  const Mat t = (Mat(2, 2) << 0.1, -0.2, 0.5, 0.5).finished();
  EXPECT_EQ(mse_loss(Tensor::constant(t), t).item(), 0.0);
  const Mat zero = Mat::Zero(1, 2);
  const Mat truth = (Mat(1, 2) << 0.3, 0.4).finished();
  EXPECT_NEAR(mse_loss(Tensor::constant(zero), truth).item(), 0.25, 1e-15);
  EXPECT_THROW(mse_loss(Tensor::constant(t), truth), LengthMismatch);
}

TEST(Loss, ReorderingBothListsIdentically) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  Mat p(6, 2), t(6, 2);
  for (nn::Index i = 0; i < p.size(); ++i) {
    p.data()[i] = u(rng);
    t.data()[i] = u(rng);
  }
  const double ref = mse_loss(Tensor::constant(p), t).item();
  EXPECT_GE(ref, 0.0);
  const Mat P = p.colwise().reverse(), T = t.colwise().reverse();
  EXPECT_NEAR(mse_loss(Tensor::constant(P), T).item(), ref, 1e-15);
}

TEST(Train, MemorizesOneEpisode) {
  auto cfg = quick(400);
  cfg.adam.lr = 3e-3;
  cfg.batch_size = 1;
  const auto ep = model::prepare_episode(irene::testing::toy_episode(), model::ModelConfig::toy());
  const auto res = fit({ep}, {ep}, cfg, model::ModelConfig::toy());
  EXPECT_LT(evaluate_mse(res.model, {ep}), 1e-3);
  EXPECT_LT(res.metrics.best_val_mse, 1e-3);
}

TEST(Train, SameSeedGivesBitIdenticalRuns) {
  const auto eps = mixed_episodes(3);
  const auto a = train(eps, quick(), model::ModelConfig::toy());
  const auto b = train(eps, quick(), model::ModelConfig::toy());
  EXPECT_EQ(a.metrics.to_csv(), b.metrics.to_csv());
  EXPECT_EQ(encode_model(a.model), encode_model(b.model));
  auto other = quick();
  other.seed = 42;
  EXPECT_NE(encode_model(train(eps, other, model::ModelConfig::toy()).model), encode_model(a.model));
}

TEST(Train, SubsetFilteringSeesOnlyThoseTasks) {
  const auto eps = mixed_episodes(6);
  auto cfg = quick(1);
  cfg.task_subset = {TaskKind::single_object};
  const auto res = train(eps, cfg, model::ModelConfig::toy());
  ASSERT_EQ(res.metrics.task_counts.size(), 1u);
  EXPECT_EQ(res.metrics.task_counts[0].first, TaskKind::single_object);
  EXPECT_EQ(res.metrics.n_train + res.metrics.n_val, 6u);
  EXPECT_EQ(cfg.subset_code(), "S");
  EXPECT_EQ(quick().subset_code(), "IMPS");
}

TEST(Train, MetricsAreFiniteNonNegativeAndOnePerEpoch) {
  const auto res = train(mixed_episodes(2), quick(3), model::ModelConfig::toy());
  ASSERT_EQ(res.metrics.epochs.size(), 3u);
  for (const auto& e : res.metrics.epochs) {
    EXPECT_TRUE(std::isfinite(e.train_mse));
    EXPECT_GE(e.train_mse, 0.0);
    EXPECT_GE(e.val_mse, 0.0);
  }
  EXPECT_EQ(res.metrics.to_csv().substr(0, 24), "epoch,train_mse,val_mse\n");
}

TEST(Train, ReturnsBestValidationParameters) {
  const auto eps = mixed_episodes(2);
  const auto res = train(eps, quick(4), model::ModelConfig::toy());
  const auto& m = res.metrics;
  ASSERT_GE(m.best_epoch, 0);
  double best = 1e300;
  for (const auto& e : m.epochs) best = std::min(best, e.val_mse);
  EXPECT_EQ(m.best_val_mse, best);
  std::vector<const gridworld::Episode*> ptrs;
  for (const auto& e : eps) ptrs.push_back(&e);
  const auto split = split_train_val(ptrs, 0.8, 7);
  std::vector<model::PreparedEpisode> val;
  for (const auto* e : split.second) val.push_back(model::prepare_episode(*e, model::ModelConfig::toy()));
  EXPECT_EQ(evaluate_mse(res.model, val), m.best_val_mse);
}

TEST(Train, ValidationLeavesParametersAndGradientsAlone) {
  model::IreneModel m(model::ModelConfig::toy(), 3);
  const auto before = encode_model(m);
  const auto ep = model::prepare_episode(irene::testing::toy_episode(), m.config());
  (void)evaluate_mse(m, {ep});
  EXPECT_EQ(encode_model(m), before);
  for (const auto& e : m.parameters().entries()) EXPECT_FALSE(e.tensor.has_grad()) << e.name;
}

TEST(Train, EarlyStopThreshold) {
  auto cfg = quick(50);
  cfg.stop_below_train_mse = 1e9;
  const auto res = train(mixed_episodes(2), cfg, model::ModelConfig::toy());
  EXPECT_EQ(res.metrics.epochs.size(), 1u);
}

TEST(Train, RejectsBadInput) {
  auto eps = mixed_episodes(2);
  eps[0].label = gridworld::EpisodeLabel::expected;
  EXPECT_THROW(train(eps, quick(), model::ModelConfig::toy()), SchemaError);
  auto cfg = quick();
  cfg.task_subset = {TaskKind::single_object};
  EXPECT_THROW(train(mixed_episodes(4), cfg, model::ModelConfig::toy()), TooFewEpisodes);
  cfg.train_fraction = 1.0;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = quick();
  cfg.task_subset = {TaskKind::preference};
  EXPECT_THROW(cfg.validate(), UsageError);
}

TEST(Checkpoint, ModelRoundTripThroughBytes) {
  auto mcfg = model::ModelConfig::toy();
  mcfg.use_gcn = true;
  mcfg.relations = graph::RelationMask::local();
  model::IreneModel m(mcfg, 9);
  const auto bytes = encode_model(m, {{"seed", 9}});
  const auto back = decode_model(bytes);
  EXPECT_EQ(back.config().hash(), mcfg.hash());
  const auto ep = irene::testing::toy_episode();
  EXPECT_EQ(back.forward_episode(ep).value(), m.forward_episode(ep).value());
  EXPECT_THROW(decode_model(nn::encode_checkpoint(m.parameters(), nlohmann::json::object())), CheckpointError);
}
