#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irene/error.hpp"
#include "irene/model/irene.hpp"
#include "irene/nn/checkpoint.hpp"
#include "irene/nn/optim.hpp"

namespace irene::training {

using gridworld::TaskKind;
using model::IreneModel;
using model::ModelConfig;
using model::PreparedEpisode;
using nn::Mat;
using nn::Tensor;

inline constexpr std::uint64_t kPaperSeeds[3] = {7, 42, 123};

struct TrainConfig {
  int epochs = 32;
  int batch_size = 32;
  nn::AdamConfig adam;
  double train_fraction = 0.8;
  std::uint64_t seed = 7;
  std::vector<TaskKind> task_subset{gridworld::kTrainingTasks.begin(), gridworld::kTrainingTasks.end()};
  /// Stop once an epoch's mean train MSE falls below this value; 0 disables.
  double stop_below_train_mse = 0.0;

  static TrainConfig paper() { return {}; }
  static TrainConfig desk() {
    TrainConfig c;
    c.epochs = 8;
    return c;
  }

  bool includes(TaskKind t) const { return std::find(task_subset.begin(), task_subset.end(), t) != task_subset.end(); }

  /// Subset code in P, M, I, S notation, e.g. "IMPS".
  std::string subset_code() const {
    std::string out;
    for (char c : std::string("IMPS"))
      if (includes(*gridworld::parse_task(std::string(1, c)))) out.push_back(c);
    return out;
  }

  void validate() const {
    if (epochs < 1) throw UsageError("epochs must be positive");
    if (batch_size < 1) throw UsageError("batch size must be positive");
    if (!(train_fraction > 0 && train_fraction < 1)) throw UsageError("train fraction must lie in (0, 1)");
    if (task_subset.empty()) throw UsageError("task subset must not be empty");
    for (auto t : task_subset)
      if (!gridworld::is_training_task(t)) throw UsageError(std::string(gridworld::to_string(t)) + " is not a training task");
    if (stop_below_train_mse < 0) throw UsageError("stop threshold must be non-negative");
    adam.validate();
  }

  nlohmann::json to_json() const {
    std::vector<std::string> tasks;
    for (auto t : task_subset) tasks.emplace_back(gridworld::to_string(t));
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"epsilon", adam.epsilon}}},
            {"train_fraction", train_fraction},
            {"seed", seed},
            {"task_subset", tasks},
            {"stop_below_train_mse", stop_below_train_mse}};
  }
};

/// Mean over frames of the squared Euclidean error between predicted and true positions.
inline Tensor mse_loss(const Tensor& predictions, const Mat& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
    throw LengthMismatch("predictions " + nn::shape_str(predictions.value()) + " vs targets " + nn::shape_str(targets));
  if (targets.rows() == 0) throw LengthMismatch("no frames to compare");
  const Tensor d = nn::sub(predictions, Tensor::constant(targets));
  return nn::scale(nn::sum(nn::mul(d, d)), 1.0 / static_cast<double>(targets.rows()));
}

/// Seeded shuffle, then the first ceil(fraction * N) items train and the rest validate.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_train_val(const std::vector<T>& items, double fraction, std::uint64_t seed) {
  if (items.size() < 5) throw TooFewEpisodes("need at least 5 episodes to split, got " + std::to_string(items.size()));
  if (!(fraction > 0 && fraction < 1)) throw UsageError("train fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(items.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_train = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(items.size()) - 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, items.size() - 1);
  std::pair<std::vector<T>, std::vector<T>> out;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_train ? out.first : out.second).push_back(items[idx[i]]);
  return out;
}

struct EpochMetrics {
  int epoch = 0;
  double train_mse = 0;
  double val_mse = 0;
  double seconds = 0;
};

struct Metrics {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;
  double best_val_mse = std::numeric_limits<double>::infinity();
  double wall_seconds = 0;
  std::string config_hash;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::vector<std::pair<TaskKind, std::size_t>> task_counts;

  /// Deterministic part only: no timings.
  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_mse,val_mse\n";
    for (const auto& e : epochs) os << e.epoch << ',' << e.train_mse << ',' << e.val_mse << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json tasks = nlohmann::json::object();
    for (const auto& [t, n] : task_counts) tasks[std::string(gridworld::to_string(t))] = n;
    return {{"epochs_run", epochs.size()}, {"best_epoch", best_epoch}, {"best_val_mse", best_val_mse},
            {"wall_seconds", wall_seconds}, {"config_hash", config_hash}, {"n_train", n_train},
            {"n_val", n_val},             {"task_counts", tasks}};
  }
};

struct TrainResult {
  IreneModel model;  // holds the best-validation parameters
  Metrics metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

inline std::string config_hash(const TrainConfig& cfg, const ModelConfig& mcfg) {
  return util::hex64(util::fnv1a64(cfg.to_json().dump() + mcfg.to_json().dump()));
}

/// Mean episode loss with gradients off and canonical neighbour order.
inline double evaluate_mse(const IreneModel& m, const std::vector<PreparedEpisode>& eps) {
  if (eps.empty()) return std::numeric_limits<double>::quiet_NaN();
  nn::NoGradGuard guard;
  double total = 0;
  for (const auto& e : eps) total += mse_loss(m.forward_episode(e), e.test.targets).item();
  return total / static_cast<double>(eps.size());
}

namespace detail {

struct Snapshot {
  std::vector<Mat> value, m, v;
  std::int64_t step = 0;

  void take(const nn::ParameterStore& s) {
    value.clear();
    m.clear();
    v.clear();
    for (const auto& e : s.entries()) {
      value.push_back(e.tensor.value());
      m.push_back(e.m);
      v.push_back(e.v);
    }
    step = s.step();
  }
  void put(nn::ParameterStore& s) const {
    for (std::size_t i = 0; i < s.size(); ++i) {
      auto& e = s.entries()[i];
      e.tensor.mutable_value() = value[i];
      e.m = m[i];
      e.v = v[i];
    }
    s.set_step(step);
  }
};

/// Seed for the neighbour-order permutation of one episode in one epoch.
inline std::uint64_t shuffle_seed(std::uint64_t seed, int epoch, std::size_t episode) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) * 0xBF58476D1CE4E5B9ULL +
                    episode * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

}  // namespace detail

/// Trains on prepared episodes; `val` selects the returned parameters.
inline TrainResult fit(const std::vector<PreparedEpisode>& train, const std::vector<PreparedEpisode>& val,
                       const TrainConfig& cfg, const ModelConfig& mcfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw TooFewEpisodes("no training episodes");
  if (val.empty()) throw TooFewEpisodes("no validation episodes");
  const auto t_start = std::chrono::steady_clock::now();
  TrainResult res{IreneModel(mcfg, cfg.seed), {}};
  auto& store = res.model.parameters();
  res.metrics.config_hash = config_hash(cfg, mcfg);
  res.metrics.n_train = train.size();
  res.metrics.n_val = val.size();

  std::mt19937_64 order_rng(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  detail::Snapshot best;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        std::mt19937_64 shuffle(detail::shuffle_seed(cfg.seed, epoch, order[k]));
        const auto& ep = train[order[k]];
        const Tensor loss = mse_loss(res.model.forward_episode(ep, &shuffle), ep.test.targets);
        loss_sum += loss.item();
        // leaf gradients accumulate, so per-episode backward passes sum to the batch-mean gradient
        nn::backward(nn::scale(loss, inv_batch));
      }
      nn::adam_step(store, cfg.adam);
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_mse = loss_sum / static_cast<double>(train.size());
    em.val_mse = evaluate_mse(res.model, val);
    if (!std::isfinite(em.train_mse) || !std::isfinite(em.val_mse)) throw NumericError("non-finite loss in epoch " + std::to_string(epoch));
    if (em.val_mse < res.metrics.best_val_mse) {
      res.metrics.best_val_mse = em.val_mse;
      res.metrics.best_epoch = epoch;
      best.take(store);
    }
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
    res.metrics.epochs.push_back(em);
    if (on_epoch) on_epoch(em);
    if (cfg.stop_below_train_mse > 0 && em.train_mse < cfg.stop_below_train_mse) break;
  }
  best.put(store);
  res.metrics.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

/// Filters to the configured task subset, splits, prepares and trains.
inline TrainResult train(const std::vector<gridworld::Episode>& episodes, const TrainConfig& cfg, const ModelConfig& mcfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  mcfg.validate();
  std::vector<const gridworld::Episode*> kept;
  for (const auto& e : episodes) {
    if (e.label != gridworld::EpisodeLabel::train_expected)
      throw SchemaError("training episodes must carry the train_expected label");
    if (cfg.includes(e.task)) kept.push_back(&e);
  }
  const auto [tr, va] = split_train_val(kept, cfg.train_fraction, cfg.seed);
  std::vector<PreparedEpisode> ptr, pva;
  for (const auto* e : tr) ptr.push_back(model::prepare_episode(*e, mcfg));
  for (const auto* e : va) pva.push_back(model::prepare_episode(*e, mcfg));
  auto res = fit(ptr, pva, cfg, mcfg, on_epoch);
  for (auto t : gridworld::kTrainingTasks) {
    const auto n = static_cast<std::size_t>(std::count_if(tr.begin(), tr.end(), [&](const auto* e) { return e->task == t; }));
    if (n) res.metrics.task_counts.emplace_back(t, n);
  }
  return res;
}

/// Checkpoint bytes carrying the model config, so a checkpoint alone rebuilds the model.
inline std::string encode_model(const IreneModel& m, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json meta = extra;
  meta["model"] = m.config().to_json();
  return nn::encode_checkpoint(m.parameters(), meta);
}

inline IreneModel decode_model(const std::string& bytes) {
  const auto ck = nn::decode_checkpoint(bytes);
  if (!ck.meta.contains("model")) throw CheckpointError("checkpoint carries no model config");
  IreneModel m(ModelConfig::from_json(ck.meta.at("model")));
  nn::restore(m.parameters(), ck.store);
  return m;
}

}  // namespace irene::training
