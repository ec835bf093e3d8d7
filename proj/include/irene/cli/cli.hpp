#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "irene/error.hpp"
#include "irene/eval/voeeval.hpp"
#include "irene/graph/graph_builder.hpp"
#include "irene/gridworld/episode_json.hpp"
#include "irene/gridworld/generator.hpp"
#include "irene/training/training.hpp"
#include "irene/util/io.hpp"
#include "irene/util/parallel.hpp"

#ifndef IRENE_BUILD_ID
#define IRENE_BUILD_ID "unknown"
#endif

namespace irene::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using gridworld::TaskKind;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr std::uint64_t kSeedStride = 1000003;

// ---------------------------------------------------------------------------------------------
// small helpers

/// Shortest round-trip decimal form.
inline std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string fixed1(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << v;
  return os.str();
}

inline std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// "all", "training", "eval" or a comma list of task names / S,P,M,I codes.
inline std::vector<TaskKind> parse_tasks(const std::string& spec) {
  std::vector<TaskKind> out;
  auto add = [&](TaskKind t) {
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  };
  for (const auto& item : split(spec)) {
    if (item == "all") {
      for (auto t : gridworld::kTrainingTasks) add(t);
      for (auto t : gridworld::kEvaluationTasks) add(t);
    } else if (item == "training") {
      for (auto t : gridworld::kTrainingTasks) add(t);
    } else if (item == "eval") {
      for (auto t : gridworld::kEvaluationTasks) add(t);
    } else if (auto t = gridworld::parse_task(item)) {
      add(*t);
    } else if (item.size() > 1 && std::all_of(item.begin(), item.end(), [](char c) { return std::string("SPMI").find(c) != std::string::npos; })) {
      for (char c : item) add(*gridworld::parse_task(std::string(1, c)));
    } else {
      throw UsageError("unknown task \"" + item + "\"");
    }
  }
  if (out.empty()) throw UsageError("no tasks selected");
  return out;
}

inline std::vector<TaskKind> only(const std::vector<TaskKind>& ts, bool training) {
  std::vector<TaskKind> out;
  for (auto t : ts)
    if (gridworld::is_training_task(t) == training) out.push_back(t);
  return out;
}

inline json task_names(const std::vector<TaskKind>& ts) {
  json out = json::array();
  for (auto t : ts) out.push_back(std::string(gridworld::to_string(t)));
  return out;
}

inline std::string write_text(const fs::path& path, const std::string& text, json& outputs) {
  util::atomic_write(path, text);
  outputs.push_back(path.string());
  return path.string();
}

// ---------------------------------------------------------------------------------------------
// manifest

/// Appends one run record to `dir/manifest.json`.
inline void append_manifest(const fs::path& dir, json run) {
  const fs::path path = dir / "manifest.json";
  json doc = {{"runs", json::array()}};
  if (fs::exists(path)) {
    doc = json::parse(util::read_file(path), nullptr, false);
    if (doc.is_discarded() || !doc.contains("runs") || !doc["runs"].is_array())
      throw SchemaError("existing manifest " + path.string() + " is not a run list");
  }
  doc["runs"].push_back(std::move(run));
  util::atomic_write(path, doc.dump(2) + "\n");
}

inline json build_info() {
  return {{"version", kVersion}, {"build_id", IRENE_BUILD_ID}, {"compiler", __VERSION__}};
}

// ---------------------------------------------------------------------------------------------
// data

struct DataOptions {
  std::string data_dir;
  int n_per_task = 200;
  std::uint64_t data_seed = 0;
  std::string eval_dir;
  int n_eval = 50;
  std::uint64_t eval_seed = 1;
  int width = 10;
  int height = 10;
  int spacing = 1;

  gridworld::GeneratorConfig generator() const {
    gridworld::GeneratorConfig g;
    g.grid = {width, height, spacing};
    return g;
  }

  json training_json() const {
    if (!data_dir.empty()) return {{"dir", data_dir}};
    return {{"generated", true}, {"n_per_task", n_per_task}, {"seed", data_seed}, {"grid", {width, height, spacing}}};
  }
  json eval_json() const {
    if (!eval_dir.empty()) return {{"dir", eval_dir}};
    return {{"generated", true}, {"n_per_task", n_eval}, {"seed", eval_seed}, {"grid", {width, height, spacing}}};
  }
};

inline void add_grid_options(CLI::App* app, DataOptions& d) {
  app->add_option("--width", d.width, "Grid width")->capture_default_str();
  app->add_option("--height", d.height, "Grid height")->capture_default_str();
  app->add_option("--spacing", d.spacing, "Lattice spacing l")->capture_default_str();
}

inline void add_training_data_options(CLI::App* app, DataOptions& d) {
  app->add_option("--data", d.data_dir, "Directory of training episode JSON files (generated when absent)");
  app->add_option("--n-per-task", d.n_per_task, "Generated training episodes per training task")->capture_default_str();
  app->add_option("--data-seed", d.data_seed, "Seed for generated training data")->capture_default_str();
}

inline void add_eval_data_options(CLI::App* app, DataOptions& d) {
  app->add_option("--eval-data", d.eval_dir, "Directory of evaluation pair JSON files (generated when absent)");
  app->add_option("--n", d.n_eval, "Generated evaluation pairs per task")->capture_default_str();
  app->add_option("--eval-seed", d.eval_seed, "Seed for generated evaluation pairs")->capture_default_str();
}

inline std::vector<fs::path> json_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("data directory " + dir.string() + " does not exist");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename() != "manifest.json")
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline json parse_json_file(const fs::path& p) {
  json doc = json::parse(util::read_file(p), nullptr, false);
  if (doc.is_discarded()) throw SchemaError(p.string() + " is not valid JSON");
  return doc;
}

inline std::vector<gridworld::Episode> load_training(const DataOptions& d, const std::vector<TaskKind>& tasks) {
  std::vector<gridworld::Episode> out;
  if (!d.data_dir.empty()) {
    for (const auto& p : json_files(d.data_dir)) {
      const json doc = parse_json_file(p);
      if (doc.contains("expected")) continue;  // evaluation pair
      auto e = gridworld::deserialize_episode(doc);
      if (gridworld::is_training_task(e.task)) out.push_back(std::move(e));
    }
    if (out.empty()) throw TooFewEpisodes("no training episodes in " + d.data_dir);
    return out;
  }
  if (d.n_per_task < 1) throw UsageError("--n-per-task must be positive");
  const auto gen = d.generator();
  for (auto t : tasks)
    for (int i = 0; i < d.n_per_task; ++i)
      out.push_back(gridworld::generate_training_episode(t, d.data_seed * kSeedStride + static_cast<std::uint64_t>(i), gen));
  return out;
}

inline eval::EvalSets load_eval(const DataOptions& d, const std::vector<TaskKind>& tasks) {
  eval::EvalSets sets;
  if (!d.eval_dir.empty()) {
    for (const auto& p : json_files(d.eval_dir)) {
      const json doc = parse_json_file(p);
      if (!doc.contains("expected")) continue;
      auto pair = gridworld::deserialize_pair(doc);
      if (std::find(tasks.begin(), tasks.end(), pair.expected.task) != tasks.end())
        sets[pair.expected.task].push_back(std::move(pair));
    }
  } else {
    if (d.n_eval < 1) throw UsageError("--n must be positive");
    const auto gen = d.generator();
    for (auto t : tasks)
      for (int i = 0; i < d.n_eval; ++i)
        sets[t].push_back(gridworld::generate_eval_pair(t, d.eval_seed * kSeedStride + static_cast<std::uint64_t>(i), gen));
  }
  for (auto t : tasks)
    if (sets[t].empty()) throw MissingTask("no evaluation pairs for " + std::string(gridworld::to_string(t)));
  return sets;
}

// ---------------------------------------------------------------------------------------------
// model and training options

struct ModelOptions {
  std::string preset = "paper";
  bool gcn = false;
  bool lstm_context = false;
  bool post_ln = false;
  std::string relations = "all";
  std::string action_repr = "absolute";

  model::ModelConfig build() const {
    auto c = model::ModelConfig::preset(preset);
    c.use_gcn = gcn;
    c.use_lstm_context = lstm_context;
    c.post_ln = post_ln;
    const auto mask = graph::RelationMask::parse(relations);
    if (!mask) throw UsageError("relations must be all, local or remote, got \"" + relations + "\"");
    c.relations = *mask;
    c.action_repr = model::parse_action_repr(action_repr);
    c.validate();
    return c;
  }
};

inline void add_model_options(CLI::App* app, ModelOptions& m) {
  app->add_option("--preset", m.preset, "Model size: paper, desk or toy")->capture_default_str();
  app->add_flag("--gcn", m.gcn, "Use GCN layers instead of GraphSAGE");
  app->add_flag("--lstm-context", m.lstm_context, "Encode trials with an LSTM instead of the transformer");
  app->add_flag("--post-ln", m.post_ln, "Post-norm transformer blocks");
  app->add_option("--relations", m.relations, "Relation mask: all, local or remote")->capture_default_str();
  app->add_option("--action-repr", m.action_repr, "Action input: absolute or delta")->capture_default_str();
}

struct TrainOptions {
  std::string tasks = "IMPS";
  std::vector<std::uint64_t> seeds{7};
  int epochs = 0;  // 0: 8, or 32 with --paper-scale
  bool paper_scale = false;
  int batch_size = 32;
  double lr = 5e-4;
  double train_fraction = 0.8;

  training::TrainConfig build() const {
    training::TrainConfig c;
    c.epochs = epochs > 0 ? epochs : (paper_scale ? 32 : 8);
    c.batch_size = batch_size;
    c.adam.lr = lr;
    c.train_fraction = train_fraction;
    c.task_subset = only(parse_tasks(tasks), true);
    if (c.task_subset.empty()) throw UsageError("--tasks selects no training task");
    if (seeds.empty()) throw UsageError("at least one seed is required");
    c.seed = seeds.front();
    c.validate();
    return c;
  }
};

inline void add_train_options(CLI::App* app, TrainOptions& t, bool with_tasks = true) {
  if (with_tasks) app->add_option("--tasks", t.tasks, "Training tasks (S,P,M,I codes or names)")->capture_default_str();
  app->add_option("--seed", t.seeds, "Training seed(s)")->delimiter(',')->capture_default_str();
  app->add_option("--epochs", t.epochs, "Epochs (default 8, or 32 with --paper-scale)");
  app->add_flag("--paper-scale", t.paper_scale, "Use the published 32 epochs");
  app->add_option("--batch-size", t.batch_size, "Episodes per Adam step")->capture_default_str();
  app->add_option("--lr", t.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--train-fraction", t.train_fraction, "Share of episodes used for training")->capture_default_str();
}

inline std::vector<eval::ExpectednessMode> parse_modes(const std::string& s) {
  if (s == "both") return {eval::ExpectednessMode::max, eval::ExpectednessMode::mean};
  return {eval::parse_mode(s)};
}

// ---------------------------------------------------------------------------------------------
// report tables

/// Score rows in report order for whatever subset of tasks is present; group averages appear
/// only when all three of their tasks are.
inline std::vector<std::pair<std::string, std::optional<double>>> report_rows(const std::map<TaskKind, double>& acc) {
  std::vector<std::pair<std::string, std::optional<double>>> out;
  auto group = [&](const auto& tasks) -> std::optional<double> {
    double s = 0;
    for (auto t : tasks) {
      auto it = acc.find(t);
      if (it == acc.end()) return std::nullopt;
      s += it->second / 3.0;
    }
    return s;
  };
  for (auto t : gridworld::kEvaluationTasks) {
    auto it = acc.find(t);
    if (it != acc.end()) out.emplace_back(std::string(gridworld::display_name(t)), it->second);
    if (t == TaskKind::eff_irrational_agent) {
      if (auto g = group(eval::kEfficiencyTasks)) out.emplace_back("Eff. Action Average", g);
    }
    if (t == TaskKind::inst_blocking_barrier) {
      if (auto g = group(eval::kInstrumentalTasks)) out.emplace_back("Inst. Action Average", g);
    }
  }
  return out;
}

inline std::string cell(const eval::SeedSpread& s, std::size_t n) {
  if (std::isnan(s.mean)) return "n/a";
  return n > 1 ? fixed1(s.mean) + " ± " + fixed1(s.max_dev) : fixed1(s.mean);
}

inline std::string markdown_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  os << "|";
  for (const auto& h : header) os << " " << h << " |";
  os << "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) os << (i == 0 ? " --- |" : " ---: |");
  os << "\n";
  for (const auto& r : rows) {
    os << "|";
    for (const auto& c : r) os << " " << c << " |";
    os << "\n";
  }
  return os.str();
}

/// Per-seed score columns -> rows of spreads.
struct ScoreGrid {
  std::vector<std::string> columns;
  std::vector<std::string> rows = eval::report_row_names();
  std::vector<std::vector<std::vector<double>>> values;  // [column][row][seed]

  std::vector<std::vector<eval::SeedSpread>> spreads() const {
    std::vector<std::vector<eval::SeedSpread>> out;
    for (const auto& col : values) {
      std::vector<eval::SeedSpread> c;
      for (const auto& xs : col) c.push_back(eval::spread(xs));
      out.push_back(std::move(c));
    }
    return out;
  }

  std::string wide_csv() const {
    const auto sp = spreads();
    std::ostringstream os;
    os << "row";
    for (const auto& c : columns) os << "," << c;
    os << "\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
      os << rows[r];
      for (std::size_t c = 0; c < columns.size(); ++c) os << "," << num(sp[c][r].mean);
      os << "\n";
    }
    return os.str();
  }

  std::string markdown() const {
    const auto sp = spreads();
    std::vector<std::vector<std::string>> body;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::vector<std::string> line{rows[r]};
      for (std::size_t c = 0; c < columns.size(); ++c) line.push_back(cell(sp[c][r], values[c][r].size()));
      body.push_back(std::move(line));
    }
    std::vector<std::string> header{"Task"};
    header.insert(header.end(), columns.begin(), columns.end());
    return markdown_table(header, body);
  }
};

/// Report layout: one column per mode, mean ± max deviation across predictors.
/// `table` is [mode][task] -> accuracies, one per predictor in a fixed order.
inline std::string voe_markdown(const std::map<std::string, std::map<TaskKind, std::vector<double>>>& table,
                                std::size_t n_predictors) {
  std::vector<std::string> header{"Task"};
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> columns;
  for (const auto& [mode, by_task] : table) {
    header.push_back("VoE (" + mode + ")");
    std::vector<std::vector<std::pair<std::string, std::optional<double>>>> per_pred;
    for (std::size_t p = 0; p < n_predictors; ++p) {
      std::map<TaskKind, double> acc;
      for (const auto& [t, xs] : by_task) acc[t] = xs[p];
      per_pred.push_back(report_rows(acc));
    }
    std::vector<std::string> col;
    names.clear();
    for (std::size_t r = 0; r < per_pred.front().size(); ++r) {
      names.push_back(per_pred.front()[r].first);
      std::vector<double> xs;
      for (const auto& rows : per_pred) xs.push_back(*rows[r].second);
      col.push_back(cell(eval::spread(xs), xs.size()));
    }
    columns.push_back(std::move(col));
  }
  std::vector<std::vector<std::string>> body;
  for (std::size_t r = 0; r < names.size(); ++r) {
    std::vector<std::string> line{names[r]};
    for (const auto& c : columns) line.push_back(c[r]);
    body.push_back(std::move(line));
  }
  std::string md = "# VoE accuracy\n\n";
  if (n_predictors > 1) md += "Mean ± max deviation over " + std::to_string(n_predictors) + " checkpoints.\n\n";
  return md + markdown_table(header, body);
}

// ---------------------------------------------------------------------------------------------
// commands

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::mutex mu;
  void log(const std::string& line) {
    std::lock_guard<std::mutex> lock(mu);
    out << line << std::endl;
  }
};

struct RunRecord {
  json config = json::object();
  json seeds = json::array();
  json inputs = json::array();
  json outputs = json::array();
  fs::path manifest_dir;
};

struct GenOptions {
  std::string tasks = "all";
  int n = 0;
  std::uint64_t seed = 0;
  std::string out = "data";
  bool dump_graphs = false;
  std::string relations = "all";
  DataOptions grid;
};

inline RunRecord cmd_gen(const GenOptions& o, Context& ctx) {
  RunRecord rec;
  const auto tasks = parse_tasks(o.tasks);
  const auto gen = o.grid.generator();
  const fs::path out = o.out;
  fs::create_directories(out);
  const auto mask = graph::RelationMask::parse(o.relations);
  if (!mask) throw UsageError("relations must be all, local or remote");
  std::map<std::string, int> counts;
  for (auto t : tasks) {
    const bool training = gridworld::is_training_task(t);
    const int n = o.n > 0 ? o.n : (training ? 200 : 50);
    for (int i = 0; i < n; ++i) {
      const std::uint64_t s = o.seed * kSeedStride + static_cast<std::uint64_t>(i);
      char name[128];
      std::snprintf(name, sizeof name, "%s_%04d.json", std::string(gridworld::to_string(t)).c_str(), i);
      json doc;
      const gridworld::Trial* test = nullptr;
      gridworld::Episode ep;
      gridworld::EpisodePair pair;
      if (training) {
        ep = gridworld::generate_training_episode(t, s, gen);
        doc = gridworld::serialize_episode(ep);
        test = &ep.test;
      } else {
        pair = gridworld::generate_eval_pair(t, s, gen);
        doc = gridworld::serialize_pair(pair);
        test = &pair.expected.test;
      }
      write_text(out / name, doc.dump() + "\n", rec.outputs);
      if (o.dump_graphs) {
        json graphs = json::array();
        for (const auto& f : test->frames) graphs.push_back(graph::graph_to_json(graph::build_graph(f, *mask)));
        write_text(out / "graphs" / name, graphs.dump() + "\n", rec.outputs);
      }
    }
    counts[std::string(gridworld::to_string(t))] = n;
    ctx.log("generated " + std::to_string(n) + " " + std::string(training ? "episodes" : "pairs") + " for " +
            std::string(gridworld::to_string(t)));
  }
  rec.config = {{"tasks", task_names(tasks)}, {"counts", counts}, {"seed", o.seed}, {"seed_stride", kSeedStride},
                {"grid", {o.grid.width, o.grid.height, o.grid.spacing}}, {"dump_graphs", o.dump_graphs},
                {"relations", o.relations}};
  rec.seeds.push_back(o.seed);
  rec.manifest_dir = out;
  return rec;
}

struct TrainCmdOptions {
  DataOptions data;
  ModelOptions model;
  TrainOptions train;
  std::string out = "run";
  int jobs = 1;
};

inline json checkpoint_meta(std::uint64_t seed, const training::TrainConfig& cfg, const json& data) {
  return {{"seed", seed}, {"train", cfg.to_json()}, {"data", data}};
}

/// Trains one model and writes checkpoint.irn, metrics.csv and metrics.json into `dir`.
inline training::TrainResult train_into(const std::vector<gridworld::Episode>& episodes, training::TrainConfig cfg,
                                        const model::ModelConfig& mcfg, std::uint64_t seed, const fs::path& dir,
                                        const json& data, const std::string& tag, Context& ctx, json& outputs) {
  cfg.seed = seed;
  const int total = cfg.epochs;
  auto res = training::train(episodes, cfg, mcfg, [&](const training::EpochMetrics& e) {
    ctx.log("[" + tag + "] epoch " + std::to_string(e.epoch + 1) + "/" + std::to_string(total) +
            " train_mse=" + num(e.train_mse) + " val_mse=" + num(e.val_mse));
  });
  std::lock_guard<std::mutex> lock(ctx.mu);
  write_text(dir / "checkpoint.irn", training::encode_model(res.model, checkpoint_meta(seed, cfg, data)), outputs);
  write_text(dir / "metrics.csv", res.metrics.to_csv(), outputs);
  write_text(dir / "metrics.json", res.metrics.to_json().dump(2) + "\n", outputs);
  return res;
}

inline RunRecord cmd_train(const TrainCmdOptions& o, Context& ctx) {
  RunRecord rec;
  const auto cfg = o.train.build();
  const auto mcfg = o.model.build();
  const auto episodes = load_training(o.data, cfg.task_subset);
  const fs::path out = o.out;
  const auto& seeds = o.train.seeds;
  util::parallel_for(seeds.size(), o.jobs, [&](std::size_t i) {
    const fs::path dir = seeds.size() > 1 ? out / ("seed_" + std::to_string(seeds[i])) : out;
    train_into(episodes, cfg, mcfg, seeds[i], dir, o.data.training_json(), "seed " + std::to_string(seeds[i]), ctx,
               rec.outputs);
  });
  rec.config = {{"train", cfg.to_json()}, {"model", mcfg.to_json()}, {"data", o.data.training_json()}, {"jobs", o.jobs}};
  for (auto s : seeds) rec.seeds.push_back(s);
  if (!o.data.data_dir.empty()) rec.inputs.push_back(o.data.data_dir);
  rec.manifest_dir = out;
  return rec;
}

struct EvalCmdOptions {
  DataOptions data;
  std::vector<std::string> checkpoints;
  bool oracle = false;
  std::int64_t random_seed = -1;
  ModelOptions model;
  std::string mode = "max";
  std::string tasks = "eval";
  std::string out = "eval";
  int jobs = 1;
};

/// Checkpoint files named directly or found as **/checkpoint.irn under a directory.
inline std::vector<fs::path> expand_checkpoints(const std::vector<std::string>& items) {
  std::vector<fs::path> out;
  for (const auto& item : items) {
    if (fs::is_directory(item)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(item))
        if (e.is_regular_file() && e.path().filename() == "checkpoint.irn") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      if (found.empty()) throw CheckpointError("no checkpoint.irn under " + item);
      out.insert(out.end(), found.begin(), found.end());
    } else {
      if (!fs::exists(item)) throw CheckpointError("checkpoint " + item + " does not exist");
      out.emplace_back(item);
    }
  }
  return out;
}

struct LoadedPredictor {
  std::string hash;
  std::string seed;
  std::unique_ptr<model::IreneModel> model;
  std::unique_ptr<eval::Predictor> predictor;
};

inline RunRecord cmd_eval(const EvalCmdOptions& o, Context& ctx) {
  RunRecord rec;
  const auto tasks = only(parse_tasks(o.tasks), false);
  if (tasks.empty()) throw UsageError("--tasks selects no evaluation task");
  const auto modes = parse_modes(o.mode);
  const int sources = (o.oracle ? 1 : 0) + (o.random_seed >= 0 ? 1 : 0) + (o.checkpoints.empty() ? 0 : 1);
  if (sources != 1) throw UsageError("give exactly one of --ckpt, --oracle or --random-seed");

  std::vector<LoadedPredictor> preds;
  if (o.oracle) {
    LoadedPredictor p;
    p.hash = "oracle";
    p.predictor = std::make_unique<eval::ExpectationOracle>();
    preds.push_back(std::move(p));
  } else if (o.random_seed >= 0) {
    LoadedPredictor p;
    p.model = std::make_unique<model::IreneModel>(o.model.build(), static_cast<std::uint64_t>(o.random_seed));
    p.hash = "random:" + training::config_hash(training::TrainConfig{}, p.model->config()) + ":" + std::to_string(o.random_seed);
    p.seed = std::to_string(o.random_seed);
    p.predictor = std::make_unique<eval::ModelPredictor>(*p.model);
    preds.push_back(std::move(p));
  } else {
    for (const auto& path : expand_checkpoints(o.checkpoints)) {
      const std::string bytes = util::read_file(path);
      LoadedPredictor p;
      p.hash = util::hex64(util::fnv1a64(bytes));
      const auto meta = nn::decode_checkpoint(bytes).meta;
      if (meta.contains("seed")) p.seed = meta.at("seed").dump();
      p.model = std::make_unique<model::IreneModel>(training::decode_model(bytes));
      rec.inputs.push_back(path.string());
      p.predictor = std::make_unique<eval::ModelPredictor>(*p.model);
      preds.push_back(std::move(p));
    }
  }

  const auto sets = load_eval(o.data, tasks);
  if (!o.data.eval_dir.empty()) rec.inputs.push_back(o.data.eval_dir);

  std::ostringstream csv, pairs_csv;
  csv << "task,n_pairs,accuracy,mode,seed,checkpoint_hash\n";
  pairs_csv << "checkpoint_hash,mode,task,pair,expected_error,unexpected_error,success\n";
  // [mode][task][predictor]
  std::map<std::string, std::map<TaskKind, std::vector<double>>> table;
  for (const auto& p : preds) {
    for (auto t : tasks) {
      const auto errs = eval::pair_errors(*p.predictor, sets.at(t), o.jobs);
      for (auto mode : modes) {
        const auto r = eval::score_pairs(t, errs, mode);
        csv << gridworld::to_string(t) << "," << r.n_pairs << "," << num(r.accuracy) << "," << eval::to_string(mode)
            << "," << p.seed << "," << p.hash << "\n";
        for (std::size_t i = 0; i < r.pairs.size(); ++i)
          pairs_csv << p.hash << "," << eval::to_string(mode) << "," << gridworld::to_string(t) << "," << i << ","
                    << num(r.pairs[i].expected_error) << "," << num(r.pairs[i].unexpected_error) << ","
                    << (r.pairs[i].success ? 1 : 0) << "\n";
        table[eval::to_string(mode)][t].push_back(r.accuracy);
        ctx.log(std::string(gridworld::to_string(t)) + " [" + eval::to_string(mode) + "] " + p.hash + ": " +
                fixed1(r.accuracy));
      }
    }
  }
  const fs::path out = o.out;
  write_text(out / "voe.csv", csv.str(), rec.outputs);
  write_text(out / "voe_pairs.csv", pairs_csv.str(), rec.outputs);
  write_text(out / "voe.md", voe_markdown(table, preds.size()), rec.outputs);

  json modes_json = json::array();
  for (auto m : modes) modes_json.push_back(eval::to_string(m));
  rec.config = {{"tasks", task_names(tasks)}, {"modes", modes_json}, {"data", o.data.eval_json()},
                {"oracle", o.oracle}, {"random_seed", o.random_seed}, {"jobs", o.jobs}};
  if (o.random_seed >= 0) rec.config["model"] = o.model.build().to_json();
  for (const auto& p : preds)
    if (!p.seed.empty()) rec.seeds.push_back(p.seed);
  rec.manifest_dir = out;
  return rec;
}

// ---------------------------------------------------------------------------------------------
// ablations

struct Variant {
  std::string name;
  model::ModelConfig config;
};

/// The four ablations plus the full model, all derived from `base`.
inline std::vector<Variant> ablation_variants(const model::ModelConfig& base) {
  std::vector<Variant> out;
  auto v = base;
  v.use_lstm_context = true;
  out.push_back({"LSTM", v});
  v = base;
  v.use_gcn = true;
  out.push_back({"GCN", v});
  v = base;
  v.relations = graph::RelationMask::local();
  out.push_back({"Local", v});
  v = base;
  v.relations = graph::RelationMask::remote();
  out.push_back({"Remote", v});
  out.push_back({"IRENE", base});
  return out;
}

/// Graph statistics behind the local/remote ablation: how often the agent is left without
/// edges, and whether local-only edge sets are strict subsets of full ones.
inline json structure_report(const std::vector<gridworld::Episode>& training, const eval::EvalSets& sets,
                             const model::ModelConfig& mcfg) {
  graph::GraphOptions opts;
  opts.include_boundary_walls = mcfg.include_boundary_walls;
  std::size_t frames = 0, isolated_local = 0, isolated_full = 0, nonadjacent = 0, not_subset = 0, not_fewer = 0;
  auto visit = [&](const gridworld::Frame& f) {
    ++frames;
    const auto full = graph::build_graph(f, graph::RelationMask::all(), opts);
    const auto local = graph::build_graph(f, graph::RelationMask::local(), opts);
    auto agent_isolated = [](const graph::FrameGraph& g) {
      const auto iso = g.isolated_nodes();
      for (int i : iso)
        if (g.entities[static_cast<std::size_t>(i)].kind == gridworld::EntityKind::agent) return true;
      return false;
    };
    isolated_local += agent_isolated(local);
    isolated_full += agent_isolated(full);
    auto a = local.edges, b = full.edges;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (!std::includes(b.begin(), b.end(), a.begin(), a.end())) ++not_subset;
    bool far = false;
    for (std::size_t i = 0; i < full.entities.size() && !far; ++i)
      for (std::size_t j = i + 1; j < full.entities.size() && !far; ++j)
        far = gridworld::chebyshev(full.entities[i].pos, full.entities[j].pos) > f.grid.spacing;
    if (far) {
      ++nonadjacent;
      if (a.size() >= b.size()) ++not_fewer;
    }
  };
  auto visit_episode = [&](const gridworld::Episode& e, bool familiarisation) {
    if (familiarisation)
      for (const auto& t : e.familiarisation)
        for (const auto& f : t.frames) visit(f);
    for (const auto& f : e.test.frames) visit(f);
  };
  for (const auto& e : training) visit_episode(e, true);
  for (const auto& [task, pairs] : sets)
    for (const auto& p : pairs) {
      visit_episode(p.expected, true);
      visit_episode(p.unexpected, false);
    }
  return {{"frames", frames},
          {"frames_with_isolated_agent_local", isolated_local},
          {"frames_with_isolated_agent_full", isolated_full},
          {"frames_with_nonadjacent_entities", nonadjacent},
          {"local_not_subset_of_full", not_subset},
          {"local_not_fewer_edges_on_nonadjacent_frames", not_fewer}};
}

struct AblateCmdOptions {
  DataOptions data;
  ModelOptions model;
  TrainOptions train;
  std::string mode = "max";
  std::string out = "ablation";
  int jobs = 1;
};

inline RunRecord cmd_ablate(const AblateCmdOptions& o, Context& ctx) {
  RunRecord rec;
  const auto cfg = o.train.build();
  const auto base = o.model.build();
  const auto mode = eval::parse_mode(o.mode);
  const auto episodes = load_training(o.data, cfg.task_subset);
  const std::vector<TaskKind> eval_tasks(gridworld::kEvaluationTasks.begin(), gridworld::kEvaluationTasks.end());
  const auto sets = load_eval(o.data, eval_tasks);
  const auto variants = ablation_variants(base);
  const auto& seeds = o.train.seeds;
  const fs::path out = o.out;

  std::vector<std::vector<eval::SuiteResult>> suites(variants.size(), std::vector<eval::SuiteResult>(seeds.size()));
  util::parallel_for(variants.size() * seeds.size(), o.jobs, [&](std::size_t k) {
    const std::size_t v = k / seeds.size(), s = k % seeds.size();
    const fs::path dir = out / variants[v].name / ("seed_" + std::to_string(seeds[s]));
    const auto res = train_into(episodes, cfg, variants[v].config, seeds[s], dir, o.data.training_json(),
                                variants[v].name + " seed " + std::to_string(seeds[s]), ctx, rec.outputs);
    suites[v][s] = eval::run_task_suite(eval::ModelPredictor(res.model), sets, mode);
    ctx.log("[" + variants[v].name + " seed " + std::to_string(seeds[s]) + "] eff=" + fixed1(suites[v][s].eff_average) +
            " inst=" + fixed1(suites[v][s].inst_average));
  });

  ScoreGrid grid;
  std::ostringstream long_csv;
  long_csv << "variant,seed,row,accuracy\n";
  for (std::size_t v = 0; v < variants.size(); ++v) {
    grid.columns.push_back(variants[v].name);
    std::vector<std::vector<double>> col(eval::kReportRows);
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const auto rows = suites[v][s].rows();
      for (std::size_t r = 0; r < rows.size(); ++r) {
        col[r].push_back(rows[r].second);
        long_csv << variants[v].name << "," << seeds[s] << "," << rows[r].first << "," << num(rows[r].second) << "\n";
      }
    }
    grid.values.push_back(std::move(col));
  }
  write_text(out / "ablation.csv", grid.wide_csv(), rec.outputs);
  write_text(out / "ablation_long.csv", long_csv.str(), rec.outputs);
  std::string md = "# Ablations\n\nVoE accuracy (" + eval::to_string(mode) + " expectedness)";
  if (seeds.size() > 1) md += ", mean ± max deviation over " + std::to_string(seeds.size()) + " seeds";
  write_text(out / "ablation.md", md + ".\n\n" + grid.markdown(), rec.outputs);
  const json structure = structure_report(episodes, sets, base);
  write_text(out / "structure.json", structure.dump(2) + "\n", rec.outputs);
  ctx.log("local-only graphs leave the agent isolated on " +
          std::to_string(structure.at("frames_with_isolated_agent_local").get<std::size_t>()) + " of " +
          std::to_string(structure.at("frames").get<std::size_t>()) + " frames");

  json vs = json::object();
  for (const auto& v : variants) vs[v.name] = v.config.to_json();
  rec.config = {{"train", cfg.to_json()}, {"variants", vs}, {"mode", eval::to_string(mode)},
                {"data", o.data.training_json()}, {"eval_data", o.data.eval_json()}, {"jobs", o.jobs}};
  for (auto s : seeds) rec.seeds.push_back(s);
  if (!o.data.data_dir.empty()) rec.inputs.push_back(o.data.data_dir);
  if (!o.data.eval_dir.empty()) rec.inputs.push_back(o.data.eval_dir);
  rec.manifest_dir = out;
  return rec;
}

// ---------------------------------------------------------------------------------------------
// combination study

struct CombosCmdOptions {
  DataOptions data;
  ModelOptions model;
  TrainOptions train;
  std::string mode = "max";
  std::string out = "combos";
  int jobs = 1;
};

inline RunRecord cmd_combos(const CombosCmdOptions& o, Context& ctx) {
  RunRecord rec;
  auto cfg = o.train.build();
  const auto mcfg = o.model.build();
  const auto mode = eval::parse_mode(o.mode);
  const std::vector<TaskKind> all_training(gridworld::kTrainingTasks.begin(), gridworld::kTrainingTasks.end());
  const auto episodes = load_training(o.data, all_training);
  const std::vector<TaskKind> eval_tasks(gridworld::kEvaluationTasks.begin(), gridworld::kEvaluationTasks.end());
  const auto sets = load_eval(o.data, eval_tasks);

  // --out names either a directory or the main CSV file
  fs::path dir = o.out, stem = "study";
  if (fs::path(o.out).extension() == ".csv") {
    dir = fs::path(o.out).parent_path();
    stem = fs::path(o.out).stem();
  }
  if (dir.empty()) dir = ".";
  auto file = [&](const std::string& suffix, const std::string& ext) { return dir / (stem.string() + suffix + ext); };

  const auto study = eval::run_combination_study(
      episodes, sets, cfg, mcfg, o.train.seeds, mode, o.jobs,
      [&](const std::string& subset, std::uint64_t seed, const training::TrainResult& r) {
        ctx.log("[" + subset + " seed " + std::to_string(seed) + "] best_val_mse=" + num(r.metrics.best_val_mse));
      });

  ScoreGrid grid;
  grid.columns = study.subsets;
  std::ostringstream rel, long_csv;
  rel << "row";
  for (const auto& s : study.subsets) rel << "," << s;
  rel << "\n";
  long_csv << "subset,seed,row,accuracy\n";
  for (std::size_t s = 0; s < study.subsets.size(); ++s) {
    std::vector<std::vector<double>> col(eval::kReportRows);
    for (std::size_t r = 0; r < study.seeds.size(); ++r) {
      const auto rows = study.runs[s][r].rows();
      for (std::size_t k = 0; k < rows.size(); ++k) {
        col[k].push_back(rows[k].second);
        long_csv << study.subsets[s] << "," << study.seeds[r] << "," << rows[k].first << "," << num(rows[k].second) << "\n";
      }
    }
    grid.values.push_back(std::move(col));
  }
  std::vector<std::vector<std::string>> rel_rows;
  const auto names = eval::report_row_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    rel << names[k];
    std::vector<std::string> line{names[k]};
    for (std::size_t s = 0; s < study.subsets.size(); ++s) {
      rel << "," << num(study.relative[s][k]);
      line.push_back(std::isnan(study.relative[s][k]) ? "n/a" : fixed1(study.relative[s][k]));
    }
    rel << "\n";
    rel_rows.push_back(std::move(line));
  }
  std::vector<std::string> header{"Task"};
  header.insert(header.end(), study.subsets.begin(), study.subsets.end());

  write_text(file("", ".csv"), grid.wide_csv(), rec.outputs);
  write_text(file("_relative", ".csv"), rel.str(), rec.outputs);
  write_text(file("_long", ".csv"), long_csv.str(), rec.outputs);
  std::string md = "# Training-task combinations\n\nVoE accuracy (" + eval::to_string(mode) +
                   " expectedness) per training subset (S single-object, P no-navigation preference, M multi-agent, "
                   "I agent-blocked instrumental).\n\n" +
                   grid.markdown() + "\n## Relative difference to IMPS (%)\n\n" + markdown_table(header, rel_rows);
  write_text(file("", ".md"), md, rec.outputs);

  cfg.task_subset = all_training;
  rec.config = {{"train", cfg.to_json()}, {"model", mcfg.to_json()}, {"mode", eval::to_string(mode)},
                {"subsets", study.subsets}, {"data", o.data.training_json()}, {"eval_data", o.data.eval_json()},
                {"jobs", o.jobs}};
  for (auto s : study.seeds) rec.seeds.push_back(s);
  if (!o.data.data_dir.empty()) rec.inputs.push_back(o.data.data_dir);
  if (!o.data.eval_dir.empty()) rec.inputs.push_back(o.data.eval_dir);
  rec.manifest_dir = dir;
  return rec;
}

// ---------------------------------------------------------------------------------------------
// report

using CsvRows = std::vector<std::vector<std::string>>;

inline CsvRows read_csv(const std::string& text) {
  CsvRows rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string c;
    std::istringstream ls(line);
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline double parse_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw SchemaError("bad number \"" + s + "\"");
    return v;
  } catch (const std::logic_error&) {
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    throw SchemaError("bad number \"" + s + "\"");
  }
}

/// voe.csv -> report in canonical row order.
inline std::string report_voe(const CsvRows& rows, const std::string& format) {
  // [mode][checkpoint][task]
  std::map<std::string, std::map<std::string, std::map<TaskKind, double>>> by;
  std::vector<std::string> ckpt_order;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 6) throw SchemaError("voe.csv row " + std::to_string(i) + " has " + std::to_string(r.size()) + " columns");
    const auto t = gridworld::parse_task(r[0]);
    if (!t) throw SchemaError("unknown task \"" + r[0] + "\"");
    by[r[3]][r[5]][*t] = parse_double(r[2]);
    if (std::find(ckpt_order.begin(), ckpt_order.end(), r[5]) == ckpt_order.end()) ckpt_order.push_back(r[5]);
  }
  std::map<std::string, std::map<TaskKind, std::vector<double>>> table;
  for (const auto& [mode, by_ckpt] : by)
    for (const auto& c : ckpt_order) {
      auto it = by_ckpt.find(c);
      if (it == by_ckpt.end()) throw SchemaError("checkpoint " + c + " lacks mode " + mode);
      for (const auto& [t, a] : it->second) table[mode][t].push_back(a);
    }
  if (format == "md") return voe_markdown(table, ckpt_order.size());
  std::ostringstream os;
  os << "row,mode,mean,max_dev,n\n";
  for (const auto& [mode, by_task] : table) {
    std::vector<std::vector<std::pair<std::string, std::optional<double>>>> per;
    for (std::size_t p = 0; p < ckpt_order.size(); ++p) {
      std::map<TaskKind, double> acc;
      for (const auto& [t, xs] : by_task) acc[t] = xs.at(p);
      per.push_back(report_rows(acc));
    }
    for (std::size_t r = 0; r < per.front().size(); ++r) {
      std::vector<double> xs;
      for (const auto& rs : per) xs.push_back(*rs[r].second);
      const auto sp = eval::spread(xs);
      os << per.front()[r].first << "," << mode << "," << num(sp.mean) << "," << num(sp.max_dev) << "," << xs.size() << "\n";
    }
  }
  return os.str();
}

/// Wide row-label tables (study, ablation, metrics).
inline std::string report_wide(const CsvRows& rows, const std::string& format) {
  if (format == "md") {
    std::vector<std::vector<std::string>> body;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      std::vector<std::string> line{rows[i].front()};
      for (std::size_t c = 1; c < rows[i].size(); ++c) {
        const double v = parse_double(rows[i][c]);
        line.push_back(std::isnan(v) ? "n/a" : (rows[0][0] == "epoch" ? num(v) : fixed1(v)));
      }
      body.push_back(std::move(line));
    }
    auto header = rows[0];
    if (header[0] == "row") header[0] = "Task";
    return markdown_table(header, body);
  }
  std::ostringstream os;
  os << rows[0][0] << ",column,value\n";
  for (std::size_t i = 1; i < rows.size(); ++i)
    for (std::size_t c = 1; c < rows[i].size() && c < rows[0].size(); ++c)
      os << rows[i][0] << "," << rows[0][c] << "," << rows[i][c] << "\n";
  return os.str();
}

/// Long tables (`*_long.csv`): mean over seeds per (group, row).
inline std::string report_long(const CsvRows& rows, const std::string& format) {
  std::vector<std::string> groups;
  std::map<std::string, std::map<std::string, std::vector<double>>> vals;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 4) throw SchemaError("long table rows need 4 columns");
    if (std::find(groups.begin(), groups.end(), rows[i][0]) == groups.end()) groups.push_back(rows[i][0]);
    vals[rows[i][0]][rows[i][2]].push_back(parse_double(rows[i][3]));
  }
  ScoreGrid grid;
  grid.columns = groups;
  for (const auto& g : groups) {
    std::vector<std::vector<double>> col;
    for (const auto& r : grid.rows) {
      auto it = vals[g].find(r);
      if (it == vals[g].end()) throw SchemaError("group " + g + " lacks row " + r);
      col.push_back(it->second);
    }
    grid.values.push_back(std::move(col));
  }
  return format == "md" ? grid.markdown() : report_wide(read_csv(grid.wide_csv()), "csv");
}

inline std::string render_report(const std::string& csv_text, const std::string& format) {
  if (format != "md" && format != "csv") throw UsageError("--format must be md or csv");
  const auto rows = read_csv(csv_text);
  if (rows.empty()) throw SchemaError("empty CSV");
  const auto& h = rows[0];
  if (h == std::vector<std::string>{"task", "n_pairs", "accuracy", "mode", "seed", "checkpoint_hash"})
    return report_voe(rows, format);
  if (h.size() == 4 && h[1] == "seed" && h[2] == "row" && h[3] == "accuracy") return report_long(rows, format);
  if (h[0] == "row" || h == std::vector<std::string>{"epoch", "train_mse", "val_mse"}) return report_wide(rows, format);
  throw SchemaError("unrecognised CSV header \"" + h[0] + "...\"");
}

struct ReportCmdOptions {
  std::string in;
  std::string format = "md";
  std::string out;
};

inline RunRecord cmd_report(const ReportCmdOptions& o, Context& ctx) {
  RunRecord rec;
  const std::string text = render_report(util::read_file(o.in), o.format);
  rec.inputs.push_back(o.in);
  rec.config = {{"in", o.in}, {"format", o.format}, {"out", o.out}};
  if (o.out.empty()) {
    ctx.out << text;
  } else {
    write_text(o.out, text, rec.outputs);
    rec.manifest_dir = fs::path(o.out).parent_path();
    if (rec.manifest_dir.empty()) rec.manifest_dir = ".";
  }
  return rec;
}

// ---------------------------------------------------------------------------------------------
// dispatch

inline void print_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

/// Parses argv, runs the subcommand and records it in the output directory's manifest.
/// Returns 0 on success, 1 on a pipeline error and 2 on a usage error.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Context ctx{out, err, {}};
  CLI::App app{"IRENE: graph-based observer models for grid-world violation-of-expectation tasks", "irene"};
  app.set_config("--config", "", "TOML or INI file with option values (command-line flags take precedence)");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1, 1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate episodes and evaluation pairs as JSON");
  gen_cmd->add_option("--task", gen.tasks, "Tasks: names, S/P/M/I codes, all, training or eval")->capture_default_str();
  gen_cmd->add_option("--n", gen.n, "Items per task (default 200 training episodes / 50 evaluation pairs)");
  gen_cmd->add_option("--seed", gen.seed, "Data seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->capture_default_str();
  gen_cmd->add_flag("--dump-graphs", gen.dump_graphs, "Also write the test trial's frame graphs under graphs/");
  gen_cmd->add_option("--relations", gen.relations, "Relation mask for --dump-graphs")->capture_default_str();
  add_grid_options(gen_cmd, gen.grid);

  TrainCmdOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train on the training tasks");
  add_training_data_options(train_cmd, train.data);
  add_grid_options(train_cmd, train.data);
  add_train_options(train_cmd, train.train);
  add_model_options(train_cmd, train.model);
  train_cmd->add_option("--out", train.out, "Output directory")->capture_default_str();
  train_cmd->add_option("--jobs", train.jobs, "Seeds trained concurrently")->capture_default_str();

  EvalCmdOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score checkpoints on the evaluation tasks");
  eval_cmd->add_option("--ckpt", ev.checkpoints, "Checkpoint files or directories")->delimiter(',');
  eval_cmd->add_flag("--oracle", ev.oracle, "Score the ground-truth expectation oracle instead");
  eval_cmd->add_option("--random-seed", ev.random_seed, "Score a freshly initialised model with this seed");
  add_model_options(eval_cmd, ev.model);
  eval_cmd->add_option("--mode", ev.mode, "Expectedness: max, mean or both")->capture_default_str();
  eval_cmd->add_option("--tasks", ev.tasks, "Evaluation tasks or eval/all")->capture_default_str();
  add_eval_data_options(eval_cmd, ev.data);
  add_grid_options(eval_cmd, ev.data);
  eval_cmd->add_option("--out", ev.out, "Output directory")->capture_default_str();
  eval_cmd->add_option("--jobs", ev.jobs, "Worker threads for pair evaluation")->capture_default_str();

  AblateCmdOptions ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and score the LSTM, GCN, Local and Remote ablations and the full model");
  add_training_data_options(ablate_cmd, ab.data);
  add_eval_data_options(ablate_cmd, ab.data);
  add_grid_options(ablate_cmd, ab.data);
  add_train_options(ablate_cmd, ab.train);
  add_model_options(ablate_cmd, ab.model);
  ablate_cmd->add_option("--mode", ab.mode, "Expectedness: max or mean")->capture_default_str();
  ablate_cmd->add_option("--out", ab.out, "Output directory")->capture_default_str();
  ablate_cmd->add_option("--jobs", ab.jobs, "Runs trained concurrently")->capture_default_str();

  CombosCmdOptions co;
  auto* combos_cmd = app.add_subcommand("combos", "Train on all 15 training-task subsets and compare with IMPS");
  add_training_data_options(combos_cmd, co.data);
  add_eval_data_options(combos_cmd, co.data);
  add_grid_options(combos_cmd, co.data);
  add_train_options(combos_cmd, co.train, false);
  add_model_options(combos_cmd, co.model);
  combos_cmd->add_option("--mode", co.mode, "Expectedness: max or mean")->capture_default_str();
  combos_cmd->add_option("--out", co.out, "Output directory or study CSV path")->capture_default_str();
  combos_cmd->add_option("--jobs", co.jobs, "Runs trained concurrently")->capture_default_str();

  ReportCmdOptions rep;
  auto* report_cmd = app.add_subcommand("report", "Render voe, ablation, study or metrics CSVs");
  report_cmd->add_option("--in", rep.in, "Input CSV")->required();
  report_cmd->add_option("--format", rep.format, "md or csv")->capture_default_str();
  report_cmd->add_option("--out", rep.out, "Output file (stdout when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    print_error(err, "UsageError", e.what());
    err << app.help();
    return 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string started = utc_now();
  try {
    RunRecord rec;
    if (cmd == gen_cmd) rec = cmd_gen(gen, ctx);
    else if (cmd == train_cmd) rec = cmd_train(train, ctx);
    else if (cmd == eval_cmd) rec = cmd_eval(ev, ctx);
    else if (cmd == ablate_cmd) rec = cmd_ablate(ab, ctx);
    else if (cmd == combos_cmd) rec = cmd_combos(co, ctx);
    else rec = cmd_report(rep, ctx);
    if (!rec.manifest_dir.empty()) {
      json argv_json = json::array();
      for (int i = 0; i < argc; ++i) argv_json.push_back(argv[i]);
      json outputs = rec.outputs;
      std::sort(outputs.begin(), outputs.end());
      append_manifest(rec.manifest_dir, {{"command", cmd->get_name()},
                                         {"argv", argv_json},
                                         {"config", rec.config},
                                         {"options", cmd->config_to_str(true, false)},
                                         {"seeds", rec.seeds},
                                         {"build", build_info()},
                                         {"inputs", rec.inputs},
                                         {"outputs", outputs},
                                         {"started", started},
                                         {"finished", utc_now()}});
    }
    return 0;
  } catch (const UsageError& e) {
    print_error(err, e.kind(), e.what());
    err << cmd->help();
    return 2;
  } catch (const Error& e) {
    print_error(err, e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error(err, "InternalError", e.what());
    return 1;
  }
}

/// Convenience overload for tests: `args` excludes the program name.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"irene"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace irene::cli
