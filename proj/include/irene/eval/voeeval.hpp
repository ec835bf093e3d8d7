#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "irene/error.hpp"
#include "irene/gridworld/pathfinding.hpp"
#include "irene/gridworld/types.hpp"
#include "irene/model/irene.hpp"
#include "irene/training/training.hpp"
#include "irene/util/parallel.hpp"

namespace irene::eval {

using gridworld::Episode;
using gridworld::EpisodePair;
using gridworld::TaskKind;
using nn::Index;
using nn::Mat;

enum class ExpectednessMode { max, mean };

inline std::string to_string(ExpectednessMode m) { return m == ExpectednessMode::max ? "max" : "mean"; }

inline ExpectednessMode parse_mode(const std::string& s) {
  if (s == "max") return ExpectednessMode::max;
  if (s == "mean") return ExpectednessMode::mean;
  throw UsageError("mode must be max or mean, got \"" + s + "\"");
}

/// Normalized next agent position for every test frame that has a successor.
inline Mat test_targets(const Episode& e) {
  const auto& t = e.test;
  if (t.frames.size() < 2) throw EmptyTrial("test trial needs at least two frames");
  Mat out(static_cast<Index>(t.actions.size()), 2);
  for (std::size_t j = 0; j < t.actions.size(); ++j) {
    const auto p = model::normalized(t.actions[j], t.frames[j].grid);
    out(static_cast<Index>(j), 0) = p[0];
    out(static_cast<Index>(j), 1) = p[1];
  }
  return out;
}

/// Squared Euclidean error per frame.
inline std::vector<double> trial_errors(const Mat& predictions, const Mat& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != 2 || targets.cols() != 2)
    throw LengthMismatch("predictions " + nn::shape_str(predictions) + " vs targets " + nn::shape_str(targets));
  std::vector<double> out(static_cast<std::size_t>(targets.rows()));
  for (Index j = 0; j < targets.rows(); ++j) out[static_cast<std::size_t>(j)] = (predictions.row(j) - targets.row(j)).squaredNorm();
  return out;
}

inline double expectedness(const std::vector<double>& errors, ExpectednessMode mode) {
  if (errors.empty()) throw EmptyErrors("expectedness of an empty error list");
  if (mode == ExpectednessMode::max) return *std::max_element(errors.begin(), errors.end());
  return std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
}

/// Anything that predicts next agent positions for a test trial.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual Mat predict(const Episode& e) const = 0;
  /// Predictions for both members of a pair; overridable to share work across the pair.
  virtual std::pair<Mat, Mat> predict_pair(const EpisodePair& p) const { return {predict(p.expected), predict(p.unexpected)}; }
  virtual std::string name() const = 0;
};

class ModelPredictor : public Predictor {
 public:
  explicit ModelPredictor(const model::IreneModel& m) : m_(m) {}

  Mat predict(const Episode& e) const override {
    nn::NoGradGuard guard;
    return m_.forward_episode(e).value();
  }

  std::pair<Mat, Mat> predict_pair(const EpisodePair& p) const override {
    if (p.expected.familiarisation != p.unexpected.familiarisation) return Predictor::predict_pair(p);
    nn::NoGradGuard guard;
    const auto& cfg = m_.config();
    const auto prepared = model::prepare_episode(p.expected, cfg);
    const auto c = m_.context(prepared);
    const auto unexpected = model::prepare_trial(p.unexpected.test, cfg);
    if (unexpected.num_frames() < 2) throw EmptyTrial("test trial needs at least two frames");
    return {m_.predict_test(c, prepared.test).value(), m_.predict_test(c, unexpected).value()};
  }

  std::string name() const override { return "irene"; }

 private:
  const model::IreneModel& m_;
};

/// Predicts what a rational observer expects: the expected outcome's ground truth on both members
/// of a pair, followed frame by frame and held at its final position. For the inaccessible-goal
/// task the unexpected layout opens a route to the preferred object, so the expectation there is
/// the shortest path to it.
class ExpectationOracle : public Predictor {
 public:
  Mat predict(const Episode& e) const override { return test_targets(e); }

  std::pair<Mat, Mat> predict_pair(const EpisodePair& p) const override {
    const Mat expected = test_targets(p.expected);
    std::vector<gridworld::Cell> path = p.expected.test.agent_path();
    if (p.unexpected.task == TaskKind::inaccessible_goal) {
      const auto& f0 = p.unexpected.test.frames.front();
      const auto* agent = f0.agent();
      const auto* goal = f0.find(2);
      if (agent && goal) {
        auto route = gridworld::shortest_path(f0, agent->pos, goal->pos);
        if (!route.empty()) path = std::move(route);
      }
    }
    const auto& grid = p.unexpected.test.frames.front().grid;
    const auto n = static_cast<Index>(p.unexpected.test.actions.size());
    Mat unexpected(n, 2);
    for (Index j = 0; j < n; ++j) {
      const auto k = std::min(static_cast<std::size_t>(j + 1), path.size() - 1);
      const auto q = model::normalized(path[k], grid);
      unexpected(j, 0) = q[0];
      unexpected(j, 1) = q[1];
    }
    return {expected, unexpected};
  }

  std::string name() const override { return "oracle"; }
};

struct PairErrors {
  std::vector<double> expected;
  std::vector<double> unexpected;
};

struct PairRecord {
  double expected_error = 0;
  double unexpected_error = 0;
  bool success = false;
};

struct VoEResult {
  TaskKind task{};
  int n_pairs = 0;
  double accuracy = 0;
  std::vector<PairRecord> pairs;
  ExpectednessMode mode = ExpectednessMode::max;
  std::vector<std::uint64_t> seeds;
};

/// Success requires a strictly larger error on the unexpected trial; ties fail.
inline VoEResult score_pairs(TaskKind task, const std::vector<PairErrors>& errors, ExpectednessMode mode) {
  if (errors.empty()) throw MissingTask("no pairs for " + std::string(gridworld::to_string(task)));
  VoEResult r;
  r.task = task;
  r.mode = mode;
  r.n_pairs = static_cast<int>(errors.size());
  int wins = 0;
  for (const auto& e : errors) {
    PairRecord rec{expectedness(e.expected, mode), expectedness(e.unexpected, mode), false};
    rec.success = rec.unexpected_error > rec.expected_error;
    wins += rec.success;
    r.pairs.push_back(rec);
  }
  r.accuracy = 100.0 * wins / static_cast<double>(errors.size());
  return r;
}

inline std::vector<PairErrors> pair_errors(const Predictor& p, const std::vector<EpisodePair>& pairs, int jobs = 1) {
  std::vector<PairErrors> out(pairs.size());
  util::parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    const auto [pe, pu] = p.predict_pair(pairs[i]);
    out[i] = {trial_errors(pe, test_targets(pairs[i].expected)), trial_errors(pu, test_targets(pairs[i].unexpected))};
  });
  return out;
}

inline VoEResult voe_accuracy(const Predictor& p, const std::vector<EpisodePair>& pairs, ExpectednessMode mode, int jobs = 1) {
  if (pairs.empty()) throw MissingTask("no evaluation pairs");
  for (const auto& pr : pairs)
    if (pr.expected.task != pairs.front().expected.task || pr.unexpected.task != pairs.front().expected.task)
      throw SchemaError("evaluation pairs of different tasks cannot be scored together");
  return score_pairs(pairs.front().expected.task, pair_errors(p, pairs, jobs), mode);
}

inline constexpr std::array<TaskKind, 3> kEfficiencyTasks = {TaskKind::eff_path_control, TaskKind::eff_time_control,
                                                             TaskKind::eff_irrational_agent};
inline constexpr std::array<TaskKind, 3> kInstrumentalTasks = {
    TaskKind::inst_no_barrier, TaskKind::inst_inconsequential_barrier, TaskKind::inst_blocking_barrier};

struct SuiteResult {
  std::vector<VoEResult> tasks;  // evaluation-task order
  double eff_average = 0;
  double inst_average = 0;

  const VoEResult& at(TaskKind t) const {
    for (const auto& r : tasks)
      if (r.task == t) return r;
    throw MissingTask("no result for " + std::string(gridworld::to_string(t)));
  }

  /// The eleven score rows in report order: nine tasks with the two group averages after their groups.
  std::vector<std::pair<std::string, double>> rows() const {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& r : tasks) {
      out.emplace_back(gridworld::display_name(r.task), r.accuracy);
      if (r.task == TaskKind::eff_irrational_agent) out.emplace_back("Eff. Action Average", eff_average);
      if (r.task == TaskKind::inst_blocking_barrier) out.emplace_back("Inst. Action Average", inst_average);
    }
    return out;
  }
};

inline constexpr std::size_t kReportRows = 11;

inline std::vector<std::string> report_row_names() {
  std::vector<std::string> out;
  for (auto t : gridworld::kEvaluationTasks) {
    out.emplace_back(gridworld::display_name(t));
    if (t == TaskKind::eff_irrational_agent) out.emplace_back("Eff. Action Average");
    if (t == TaskKind::inst_blocking_barrier) out.emplace_back("Inst. Action Average");
  }
  return out;
}

/// Group averages over unrounded task accuracies.
inline SuiteResult summarize(std::vector<VoEResult> results) {
  SuiteResult s;
  for (auto t : gridworld::kEvaluationTasks) {
    auto it = std::find_if(results.begin(), results.end(), [&](const VoEResult& r) { return r.task == t; });
    if (it == results.end()) throw MissingTask("missing evaluation task " + std::string(gridworld::to_string(t)));
    s.tasks.push_back(*it);
  }
  for (auto t : kEfficiencyTasks) s.eff_average += s.at(t).accuracy / 3.0;
  for (auto t : kInstrumentalTasks) s.inst_average += s.at(t).accuracy / 3.0;
  return s;
}

using EvalSets = std::map<TaskKind, std::vector<EpisodePair>>;

inline SuiteResult run_task_suite(const Predictor& p, const EvalSets& sets, ExpectednessMode mode, int jobs = 1) {
  std::vector<VoEResult> results;
  for (auto t : gridworld::kEvaluationTasks) {
    auto it = sets.find(t);
    if (it == sets.end() || it->second.empty())
      throw MissingTask("missing evaluation task " + std::string(gridworld::to_string(t)));
    results.push_back(voe_accuracy(p, it->second, mode, jobs));
  }
  return summarize(std::move(results));
}

/// Mean and largest absolute deviation from it, as reported across seeds.
struct SeedSpread {
  double mean = 0;
  double max_dev = 0;
};

inline SeedSpread spread(const std::vector<double>& xs) {
  if (xs.empty()) throw EmptyErrors("no values to aggregate");
  SeedSpread s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  for (double x : xs) s.max_dev = std::max(s.max_dev, std::abs(x - s.mean));
  return s;
}

/// Training-task subsets in the column order of the combination table.
inline const std::vector<std::string>& combination_subsets() {
  static const std::vector<std::string> kSubsets = {"IMPS", "IMP", "IMS", "IPS", "MPS", "PS", "MP", "IP",
                                                    "MS",   "IS",  "IM",  "P",   "M",   "I",  "S"};
  return kSubsets;
}

inline std::vector<TaskKind> subset_tasks(const std::string& code) {
  std::vector<TaskKind> out;
  for (char c : code) {
    auto t = gridworld::parse_task(std::string(1, c));
    if (!t) throw UsageError(std::string("unknown training-task code '") + c + "'");
    out.push_back(*t);
  }
  return out;
}

/// Percentage change relative to the full-training score; zero when both are zero.
inline double relative_difference(double score, double full) {
  if (full == 0) return score == 0 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  return (score - full) / full * 100.0;
}

struct CombinationStudy {
  std::vector<std::string> subsets;
  std::vector<std::vector<SuiteResult>> runs;  // [subset][seed]
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<SeedSpread>> scores;  // [subset][row]
  std::vector<std::vector<double>> relative;    // [subset][row]
};

/// Mean and spread of every report row across seeds.
inline std::vector<SeedSpread> row_spreads(const std::vector<SuiteResult>& per_seed) {
  std::vector<SeedSpread> out;
  for (std::size_t row = 0; row < kReportRows; ++row) {
    std::vector<double> xs;
    for (const auto& s : per_seed) xs.push_back(s.rows()[row].second);
    out.push_back(spread(xs));
  }
  return out;
}

using RunCallback = std::function<void(const std::string& subset, std::uint64_t seed, const training::TrainResult&)>;

/// One model per non-empty training-task subset and seed, each scored on the full suite.
inline CombinationStudy run_combination_study(const std::vector<Episode>& training_set, const EvalSets& eval_sets,
                                              const training::TrainConfig& base, const model::ModelConfig& mcfg,
                                              const std::vector<std::uint64_t>& seeds, ExpectednessMode mode,
                                              int jobs = 1, const RunCallback& on_run = {}) {
  if (seeds.empty()) throw UsageError("at least one seed is required");
  CombinationStudy study;
  study.subsets = combination_subsets();
  study.seeds = seeds;
  const std::size_t S = study.subsets.size();
  study.runs.assign(S, std::vector<SuiteResult>(seeds.size()));
  std::mutex mu;
  util::parallel_for(S * seeds.size(), jobs, [&](std::size_t k) {
    const std::size_t s = k / seeds.size(), r = k % seeds.size();
    auto cfg = base;
    cfg.task_subset = subset_tasks(study.subsets[s]);
    cfg.seed = seeds[r];
    const auto res = training::train(training_set, cfg, mcfg);
    study.runs[s][r] = run_task_suite(ModelPredictor(res.model), eval_sets, mode);
    if (on_run) {
      std::lock_guard<std::mutex> lock(mu);
      on_run(study.subsets[s], seeds[r], res);
    }
  });
  for (std::size_t s = 0; s < S; ++s) study.scores.push_back(row_spreads(study.runs[s]));
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<double> rel;
    for (std::size_t row = 0; row < kReportRows; ++row)
      rel.push_back(relative_difference(study.scores[s][row].mean, study.scores[0][row].mean));
    study.relative.push_back(std::move(rel));
  }
  return study;
}

}  // namespace irene::eval
