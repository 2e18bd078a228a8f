#include "ganf/cli/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "ganf/core/errors.hpp"
#include "ganf/dag/dag.hpp"
#include "ganf/data/data.hpp"
#include "ganf/eval/eval.hpp"
#include "ganf/model/model.hpp"
#include "ganf/training/training.hpp"

namespace ganf::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json default_run_config() {
  return {{"data", ""},
          {"window_len", 20},
          {"stride", 0},
          {"eval_stride", 1},
          {"train_fraction", 0.6},
          {"validation_fraction", 0.2},
          {"max_gap", 5},
          {"mode", "graph"},
          {"flow_kind", "maf"},
          {"hidden_dim", 32},
          {"flow_hidden", 32},
          {"flow_blocks", 6},
          {"adjacency_norm", "raw"},
          {"adjacency_init", 0.1},
          {"scale_clamp", 5.0},
          {"lr", 1e-3},
          {"lr_decay", 0.1},
          {"grad_clip", 1.0},
          {"clip_mode", "global"},
          {"batch_size", 32},
          {"inner_epochs", 10},
          {"max_outer_iters", 20},
          {"plateau_patience", 3},
          {"min_lr", 1e-5},
          {"h_tol", 1e-8},
          {"eta", 10.0},
          {"gamma", 0.5},
          {"seed", 0},
          {"epsilon", 0.01},
          {"sigma", 6.0}};
}

json read_json_file(const std::string& path, const std::string& flag) {
  std::ifstream in(path);
  if (!in) throw UsageError(flag + ": cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(flag, flag + ": '" + path + "' is not valid JSON: " + e.what());
  }
}

void overlay(json& base, const json& extra) {
  if (!extra.is_object()) throw ConfigError("config", "config file must hold a JSON object");
  for (const auto& [key, value] : extra.items()) {
    if (!base.contains(key)) throw ConfigError(key, "unknown config field '" + key + "'");
    if (base[key].is_number() != value.is_number() || base[key].is_string() != value.is_string()) {
      throw ConfigError(key, "config field '" + key + "' has the wrong type");
    }
    base[key] = value;
  }
}

template <typename T>
T get(const json& j, const std::string& key) {
  try {
    const json& v = j.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(key, "config field '" + key + "' must be true or false");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) {
        throw ConfigError(key, "config field '" + key + "' must be a non-negative integer");
      }
    }
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key, "config field '" + key + "' is missing or has the wrong type");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw UsageError("missing required flag --out");
  fs::create_directories(out);
  return out;
}

std::string require_path(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError("missing required flag " + flag);
  if (!fs::exists(value)) throw UsageError(flag + ": file not found '" + value + "'");
  return value;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

model::ModelConfig model_config(const json& cfg, const data::SeriesTable& table) {
  model::ModelConfig m;
  m.nodes = table.nodes();
  m.attrs = table.attrs;
  m.hidden = get<std::size_t>(cfg, "hidden_dim");
  m.flow_hidden = get<std::size_t>(cfg, "flow_hidden");
  m.flow_blocks = get<std::size_t>(cfg, "flow_blocks");
  m.flow_kind = flow::block_kind_from_string(get<std::string>(cfg, "flow_kind"));
  m.mode = model::mode_from_string(get<std::string>(cfg, "mode"));
  const auto norm = get<std::string>(cfg, "adjacency_norm");
  if (norm != "raw" && norm != "row") throw ConfigError("adjacency_norm", "adjacency_norm must be raw or row");
  m.adjacency_norm = norm == "row" ? encoder::AdjacencyNorm::kRow : encoder::AdjacencyNorm::kRaw;
  m.adjacency_init = get<double>(cfg, "adjacency_init");
  m.scale_clamp = get<double>(cfg, "scale_clamp");
  m.seed = get<std::uint64_t>(cfg, "seed");
  m.entities = table.entities;
  return m;
}

training::TrainConfig train_config(const json& cfg) {
  training::TrainConfig t;
  t.lr = get<double>(cfg, "lr");
  t.lr_decay = get<double>(cfg, "lr_decay");
  t.grad_clip = get<double>(cfg, "grad_clip");
  const auto clip = get<std::string>(cfg, "clip_mode");
  if (clip != "global" && clip != "elementwise") throw ConfigError("clip_mode", "clip_mode must be global or elementwise");
  t.clip_mode = clip == "global" ? training::ClipMode::kGlobalNorm : training::ClipMode::kElementwise;
  t.batch_size = get<std::size_t>(cfg, "batch_size");
  t.inner_epochs = get<std::size_t>(cfg, "inner_epochs");
  t.max_outer_iters = get<std::size_t>(cfg, "max_outer_iters");
  t.plateau_patience = get<std::size_t>(cfg, "plateau_patience");
  t.min_lr = get<double>(cfg, "min_lr");
  t.h_tol = get<double>(cfg, "h_tol");
  t.eta = get<double>(cfg, "eta");
  t.gamma = get<double>(cfg, "gamma");
  t.seed = get<std::uint64_t>(cfg, "seed");
  training::validate(t);
  return t;
}

data::SplitFractions fractions(const json& cfg) {
  return {get<double>(cfg, "train_fraction"), get<double>(cfg, "validation_fraction")};
}

std::size_t window_len(const json& cfg) {
  const auto t = get<std::size_t>(cfg, "window_len");
  if (t == 0) throw ConfigError("window_len", "window_len must be positive");
  return t;
}

int cmd_synth(const json& spec_json, const fs::path& out_dir, std::ostream& out) {
  const data::SynthSpec spec = data::synth_spec_from_json(spec_json.dump());
  const auto result = data::synth_generate(spec, spec.length, spec.seed);
  data::write_csv(out_dir / "data.csv", result.series);
  data::write_labels(out_dir / "labels.csv", result.labels);
  write_text(out_dir / "graph.json", data::ground_truth_json(result, spec) + "\n");
  const std::string resolved = data::synth_spec_to_json(spec);
  write_text(out_dir / "config.json", resolved + "\n");
  json manifest{{"seed", spec.seed},
                {"spec", json::parse(resolved)},
                {"files", {"data.csv", "labels.csv", "graph.json"}},
                {"nodes", spec.nodes},
                {"length", spec.length}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  std::size_t anomalies = 0;
  for (const auto& l : result.labels) anomalies += static_cast<std::size_t>(l.label);
  out << "wrote " << spec.nodes << " series x " << spec.length << " steps, " << anomalies
      << " anomalous windows, to " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const json& cfg, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  const std::string data_path = require_path(get<std::string>(cfg, "data"), "--data");
  data::CsvSchema schema;
  schema.max_gap = get<std::size_t>(cfg, "max_gap");
  const data::SeriesTable table = data::load_csv(data_path, schema);
  const std::size_t steps = window_len(cfg);
  std::size_t stride = get<std::size_t>(cfg, "stride");
  if (stride == 0) stride = steps;
  const auto split = data::normalize(
      data::chronological_split(table, steps, stride, get<std::size_t>(cfg, "eval_stride"), fractions(cfg)));
  for (const auto& [i, a] : split.stats.flagged) {
    err << "warning: series '" << table.entities[i] << "' attribute " << a + 1 << " is constant in the train split\n";
  }

  const model::ModelConfig mc = model_config(cfg, table);
  training::TrainConfig tc = train_config(cfg);
  tc.checkpoint_dir = out_dir;
  write_text(out_dir / "config.json", cfg.dump(2) + "\n");

  model::GanfModel m(mc);
  std::ofstream history(out_dir / "history.jsonl");
  const auto result = training::train(m, split.train, split.validation, tc, [&](const training::HistoryRecord& r) {
    history << training::to_json_line(r) << "\n";
    history.flush();
  });

  training::CheckpointMeta meta;
  meta.window_len = steps;
  meta.stats = split.stats;
  meta.lagrangian = result.lagrangian;
  meta.run_config = cfg.dump();
  training::save_checkpoint(out_dir / "model.ckpt", m, meta);

  const auto graph = dag::threshold_dag(dag::to_matrix(m.adjacency()), get<double>(cfg, "epsilon"));
  json summary{{"converged", result.converged},
               {"warning", result.warning},
               {"final_h", result.final_h},
               {"outer_iterations", result.outer_iterations},
               {"best_val_log_density", result.best_val_log_density},
               {"acyclic", graph.acyclic},
               {"edges", graph.edges.size()}};
  if (result.warning) summary["warning_message"] = "outer budget exhausted before |h(A)| < h_tol";
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  if (result.warning) err << "warning: |h(A)| = " << result.final_h << " after " << result.outer_iterations
                          << " outer iterations\n";
  out << "trained " << result.outer_iterations << " outer iterations, |h(A)| = " << std::abs(result.final_h)
      << ", best validation log-density " << result.best_val_log_density << "\n";
  return kExitOk;
}

std::vector<data::MultiSeriesWindow> select_windows(const data::SeriesTable& table, std::size_t steps,
                                                    std::size_t stride, const std::string& which,
                                                    const data::SplitFractions& fr) {
  if (which == "all") return data::make_windows(table, steps, stride);
  const auto split = data::chronological_split(table, steps, stride, stride, fr);
  if (which == "train") return split.train;
  if (which == "validation") return split.validation;
  if (which == "test") return split.test;
  throw ConfigError("split", "--split must be all, train, validation or test");
}

int cmd_score(const std::string& ckpt_path, const json& flags, const fs::path& out_dir, std::ostream& out) {
  auto ckpt = training::load_checkpoint(require_path(ckpt_path, "--checkpoint"));
  const auto& mc = ckpt.model->config();
  const std::string data_path = require_path(flags.value("data", std::string()), "--data");
  json run = json::parse(ckpt.meta.run_config);
  data::CsvSchema schema;
  if (run.contains("max_gap")) schema.max_gap = run["max_gap"].get<std::size_t>();
  const auto table = data::load_csv(data_path, schema);
  if (table.nodes() != mc.nodes) {
    throw DimensionError("data has n=" + std::to_string(table.nodes()) + " series, checkpoint expects n=" +
                         std::to_string(mc.nodes));
  }
  if (table.attrs != mc.attrs) {
    throw DimensionError("data has D=" + std::to_string(table.attrs) + " attributes, checkpoint expects D=" +
                         std::to_string(mc.attrs));
  }
  for (std::size_t i = 0; i < mc.nodes; ++i) {
    if (table.entities[i] != mc.entities[i]) {
      throw DimensionError("data series " + std::to_string(i) + " is '" + table.entities[i] + "', checkpoint expects '" +
                           mc.entities[i] + "'");
    }
  }
  const std::size_t steps = ckpt.meta.window_len;
  if (flags.contains("window_len") && flags["window_len"].get<std::size_t>() != steps) {
    throw DimensionError("window length T=" + std::to_string(flags["window_len"].get<std::size_t>()) +
                         " differs from the checkpoint's T=" + std::to_string(steps));
  }
  const std::size_t stride = flags.value("stride", std::size_t{1});
  if (stride == 0) throw ConfigError("stride", "--stride must be positive");
  data::SplitFractions fr;
  if (run.contains("train_fraction")) fr = fractions(run);
  auto windows = select_windows(table, steps, stride, flags.value("split", std::string("all")), fr);
  if (ckpt.meta.stats)
    for (auto& w : windows) ckpt.meta.stats->apply(w);

  const auto reports = ckpt.model->log_density(windows);
  std::ofstream csv(out_dir / "scores.csv");
  if (!csv) throw FormatError("cannot write scores.csv");
  csv << "window_start,score";
  if (mc.mode == model::Mode::kFullChain) {
    csv << ",score_chain";
  } else {
    for (const auto& e : mc.entities) csv << ",score_" << e;
  }
  csv << "\n";
  for (std::size_t k = 0; k < windows.size(); ++k) {
    csv << windows[k].start_index << ',' << fmt(-reports[k].total);
    for (double s : reports[k].per_series) csv << ',' << fmt(-s);
    csv << "\n";
  }
  json resolved = flags;
  resolved["checkpoint"] = ckpt_path;
  resolved["window_len"] = steps;
  resolved["stride"] = stride;
  write_text(out_dir / "config.json", resolved.dump(2) + "\n");
  out << "scored " << windows.size() << " windows\n";
  return kExitOk;
}

struct ScoreRow {
  std::size_t start;
  double score;
};

std::vector<ScoreRow> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scores file " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("window_start,score", 0) != 0) {
    throw FormatError(path + ": header must start with window_start,score");
  }
  std::vector<ScoreRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string a;
    std::string b;
    std::getline(is, a, ',');
    std::getline(is, b, ',');
    try {
      rows.push_back({static_cast<std::size_t>(std::stoull(a)), std::stod(b)});
    } catch (const std::exception&) {
      throw FormatError(path + ": malformed row '" + line + "'");
    }
  }
  return rows;
}

int cmd_eval(const json& flags, const fs::path& out_dir, std::ostream& out) {
  const auto scores = read_scores(require_path(flags.value("scores", std::string()), "--scores"));
  const auto labels = data::load_labels(require_path(flags.value("labels", std::string()), "--labels"));
  const std::string mode = flags.value("label_mode", std::string("hard"));
  const double sigma = flags.value("sigma", 6.0);

  std::vector<double> s;
  std::vector<double> p;
  for (const auto& r : scores) s.push_back(r.score);
  if (mode == "hard") {
    std::map<std::size_t, int> by_start;
    for (const auto& l : labels) by_start[l.window_start] = l.label;
    std::size_t missing = 0;
    for (const auto& r : scores) {
      auto it = by_start.find(r.start);
      if (it == by_start.end()) {
        ++missing;
        continue;
      }
      p.push_back(it->second);
    }
    if (missing > 0) {
      throw DimensionError("scores and labels are misaligned: " + std::to_string(scores.size()) + " score rows, " +
                           std::to_string(labels.size()) + " label rows, " + std::to_string(missing) +
                           " score windows without a label");
    }
  } else if (mode == "smoothed") {
    eval::LabelTrack track;
    track.sigma = sigma;
    for (const auto& l : labels)
      if (l.label) track.anomaly_times.push_back(static_cast<double>(l.window_start));
    std::vector<double> times;
    for (const auto& r : scores) times.push_back(static_cast<double>(r.start));
    p = eval::smooth_labels(times, track);
  } else {
    throw ConfigError("label_mode", "--label-mode must be hard or smoothed");
  }

  const auto roc = eval::roc_auc(s, p);
  std::vector<double> log_density;
  for (double v : s) log_density.push_back(-v);
  const auto hist = eval::density_histogram(log_density, flags.value("bins", std::size_t{50}));
  write_text(out_dir / "histogram.csv", eval::histogram_csv(hist));

  json points = json::array();
  for (std::size_t k = 0; k < roc.tpr.size(); ++k) {
    json thr = std::isfinite(roc.thresholds[k]) ? json(roc.thresholds[k]) : json(nullptr);
    points.push_back({{"threshold", thr}, {"fpr", roc.fpr[k]}, {"tpr", roc.tpr[k]}});
  }
  json metrics{{"auc", roc.auc},       {"label_mode", mode},          {"windows", scores.size()},
               {"roc", points},        {"histogram", "histogram.csv"}};
  if (mode == "smoothed") metrics["sigma"] = sigma;
  write_text(out_dir / "metrics.json", metrics.dump(2) + "\n");
  write_text(out_dir / "config.json", flags.dump(2) + "\n");
  out << "AUC " << roc.auc << " over " << scores.size() << " windows\n";
  return kExitOk;
}

int cmd_export_graph(const std::vector<std::string>& ckpts, double eps, const fs::path& out_dir, std::ostream& out) {
  if (ckpts.empty()) throw UsageError("missing required flag --checkpoint");
  std::vector<dag::Matrix> mats;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < ckpts.size(); ++k) {
    auto ckpt = training::load_checkpoint(require_path(ckpts[k], "--checkpoint"));
    const auto& mc = ckpt.model->config();
    if (k == 0) names = mc.entities;
    if (mc.entities != names) throw DimensionError("checkpoint " + ckpts[k] + " has a different set of series");
    const dag::Matrix a = dag::to_matrix(ckpt.model->adjacency());
    const auto g = dag::threshold_dag(a, eps);
    const std::string stem = ckpts.size() == 1 ? "graph" : "graph_" + std::to_string(k);
    write_text(out_dir / (stem + ".dot"), dag::to_dot(g, names));
    write_text(out_dir / (stem + ".json"), dag::to_json(g, names, eps) + "\n");
    out << ckpts[k] << ": " << g.edges.size() << " edges, " << (g.acyclic ? "acyclic" : "cyclic") << "\n";
    mats.push_back(a);
  }
  if (ckpts.size() > 1) {
    std::ofstream csv(out_dir / "edge_weights.csv");
    csv << "checkpoint";
    const auto n = mats.front().rows();
    if (n != static_cast<Eigen::Index>(names.size())) names.assign(static_cast<std::size_t>(n), "chain");
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) csv << ',' << names[static_cast<std::size_t>(j)] << "->" << names[static_cast<std::size_t>(i)];
    csv << "\n";
    for (std::size_t k = 0; k < mats.size(); ++k) {
      csv << ckpts[k];
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          if (i != j) csv << ',' << fmt(mats[k](i, j));
      csv << "\n";
    }
  }
  json resolved{{"checkpoints", ckpts}, {"epsilon", eps}};
  write_text(out_dir / "config.json", resolved.dump(2) + "\n");
  return kExitOk;
}

int cmd_bench(const json& grid, const fs::path& out_dir, std::ostream& out) {
  json cfg{{"nodes", {8}},      {"steps", {20}},     {"batch", 8},       {"attrs", 1},
           {"hidden", 4},       {"flow_hidden", 4},  {"flow_blocks", 1}, {"iterations", 5},
           {"repeats", 3},      {"seed", 0}};
  for (const auto& [key, value] : grid.items()) {
    if (!cfg.contains(key)) throw ConfigError(key, "unknown bench field '" + key + "'");
    cfg[key] = value;
  }
  std::vector<std::size_t> nodes;
  std::vector<std::size_t> steps;
  try {
    nodes = cfg.at("nodes").get<std::vector<std::size_t>>();
    steps = cfg.at("steps").get<std::vector<std::size_t>>();
  } catch (const json::exception&) {
    throw ConfigError("nodes", "bench nodes and steps must be integer lists");
  }
  std::ofstream csv(out_dir / "bench.csv");
  csv << "n,T,B,D,seconds_per_iter\n";
  for (std::size_t n : nodes)
    for (std::size_t t : steps) {
      BenchCase c;
      c.nodes = n;
      c.steps = t;
      c.batch = get<std::size_t>(cfg, "batch");
      c.attrs = get<std::size_t>(cfg, "attrs");
      c.hidden = get<std::size_t>(cfg, "hidden");
      c.flow_hidden = get<std::size_t>(cfg, "flow_hidden");
      c.flow_blocks = get<std::size_t>(cfg, "flow_blocks");
      c.iterations = get<std::size_t>(cfg, "iterations");
      c.repeats = get<std::size_t>(cfg, "repeats");
      c.seed = get<std::uint64_t>(cfg, "seed");
      const double sec = seconds_per_iteration(c);
      csv << n << ',' << t << ',' << c.batch << ',' << c.attrs << ',' << fmt(sec) << "\n";
      out << "n=" << n << " T=" << t << ": " << sec << " s/iter\n";
    }
  write_text(out_dir / "config.json", cfg.dump(2) + "\n");
  return kExitOk;
}

}  // namespace

double seconds_per_iteration(const BenchCase& c) {
  if (c.iterations == 0 || c.repeats == 0) throw ConfigError("iterations", "bench needs at least one iteration");
  model::ModelConfig mc;
  mc.nodes = c.nodes;
  mc.attrs = c.attrs;
  mc.hidden = c.hidden;
  mc.flow_hidden = c.flow_hidden;
  mc.flow_blocks = c.flow_blocks;
  mc.seed = c.seed;
  model::GanfModel m(mc);

  core::Rng rng(c.seed + 1);
  encoder::SeriesBatch batch;
  batch.batch = c.batch;
  batch.nodes = c.nodes;
  batch.steps = c.steps;
  batch.attrs = c.attrs;
  batch.values.resize(c.batch * c.nodes * c.steps * c.attrs);
  for (double& v : batch.values) v = rng.normal();

  const auto params = m.trainable();
  training::Adam adam(params, 1e-3);
  const dag::LagrangianState state{0.5, 1.0, 0, 0.0};
  auto iteration = [&] {
    for (auto p : params) p.tensor.zero_grad();
    core::Tape tape;
    {
      core::TapeGuard guard(tape);
      const auto loss = dag::augmented_lagrangian(m.batch_nll(batch), dag::acyclicity(m.adjacency()), state);
      tape.backward(loss);
    }
    std::vector<std::vector<double>> grads;
    for (const auto& p : params) {
      if (p.tensor.has_grad()) {
        grads.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
      } else {
        grads.emplace_back(p.tensor.numel(), 0.0);
      }
    }
    training::clip_gradients(grads, 1.0, training::ClipMode::kGlobalNorm);
    adam.step(grads);
    m.remask_adjacency();
  };

  iteration();
  std::vector<double> times;
  for (std::size_t r = 0; r < c.repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < c.iterations; ++k) iteration();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(c.iterations));
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Density-based anomaly detection for multiple time series", "ganf"};
  app.require_subcommand(1);

  std::string config;
  std::string data_path;
  std::string labels;
  std::string scores;
  std::vector<std::string> checkpoints;
  std::string out_dir;
  std::string mode;
  std::string split = "all";
  std::string label_mode = "hard";
  std::size_t window = 0;
  std::size_t stride = 0;
  std::size_t bins = 50;
  double epsilon = 0.01;
  double sigma = 6.0;
  std::uint64_t seed = 0;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with a known DAG");
  auto* train = app.add_subcommand("train", "fit a model by augmented-Lagrangian training");
  auto* score = app.add_subcommand("score", "write per-window anomaly scores");
  auto* evaluate = app.add_subcommand("eval", "ROC/AUC and density histogram from scores and labels");
  auto* export_graph = app.add_subcommand("export-graph", "threshold the learned adjacency into DOT and JSON");
  auto* bench = app.add_subcommand("bench", "time training iterations over an (n, T) grid");

  std::map<std::string, CLI::Option*> opt;
  for (auto* sub : {synth, train, score, evaluate, export_graph, bench}) {
    sub->add_option("--out", out_dir, "output directory");
  }
  opt["synth.config"] = synth->add_option("--config", config, "synthetic spec JSON");
  opt["synth.seed"] = synth->add_option("--seed", seed);
  opt["synth.window"] = synth->add_option("--window-len", window, "label window length");

  opt["train.config"] = train->add_option("--config", config, "run config JSON");
  opt["train.data"] = train->add_option("--data", data_path, "series CSV");
  opt["train.mode"] = train->add_option("--mode", mode, "graph, no-graph or full-chain");
  opt["train.window"] = train->add_option("--window-len", window);
  opt["train.stride"] = train->add_option("--stride", stride, "training window stride");
  opt["train.seed"] = train->add_option("--seed", seed);
  opt["train.epsilon"] = train->add_option("--epsilon", epsilon, "edge threshold for the summary");

  score->add_option("--checkpoint", checkpoints, "model checkpoint")->expected(1);
  opt["score.data"] = score->add_option("--data", data_path, "series CSV");
  opt["score.window"] = score->add_option("--window-len", window);
  opt["score.stride"] = score->add_option("--stride", stride, "scoring stride (default 1)");
  opt["score.split"] = score->add_option("--split", split, "all, train, validation or test");

  evaluate->add_option("--scores", scores, "scores CSV");
  evaluate->add_option("--labels", labels, "labels CSV");
  evaluate->add_option("--label-mode", label_mode, "hard or smoothed");
  opt["eval.sigma"] = evaluate->add_option("--sigma", sigma, "label smoothing width in steps");
  evaluate->add_option("--bins", bins, "histogram bins");

  export_graph->add_option("--checkpoint", checkpoints, "one or more checkpoints");
  export_graph->add_option("--epsilon", epsilon, "edge threshold");

  opt["bench.config"] = bench->add_option("--config", config, "bench grid JSON");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  auto given = [&](const std::string& key) { return opt.count(key) && opt[key]->count() > 0; };
  try {
    if (synth->parsed()) {
      json spec = json::parse(data::synth_spec_to_json({}));
      if (given("synth.config")) {
        const json file = read_json_file(config, "--config");
        spec = json::parse(data::synth_spec_to_json(data::synth_spec_from_json(file.dump())));
      }
      if (given("synth.seed")) spec["seed"] = seed;
      if (given("synth.window")) spec["window"] = window;
      return cmd_synth(spec, prepare_out(out_dir), out);
    }
    if (train->parsed()) {
      json cfg = default_run_config();
      if (given("train.config")) overlay(cfg, read_json_file(config, "--config"));
      if (given("train.data")) cfg["data"] = data_path;
      if (given("train.mode")) cfg["mode"] = mode;
      if (given("train.window")) cfg["window_len"] = window;
      if (given("train.stride")) cfg["stride"] = stride;
      if (given("train.seed")) cfg["seed"] = seed;
      if (given("train.epsilon")) cfg["epsilon"] = epsilon;
      if (get<std::string>(cfg, "data").empty()) throw UsageError("missing required flag --data");
      require_path(get<std::string>(cfg, "data"), "--data");
      model::mode_from_string(get<std::string>(cfg, "mode"));
      return cmd_train(cfg, prepare_out(out_dir), out, err);
    }
    if (score->parsed()) {
      json flags{{"data", data_path}, {"split", split}};
      if (given("score.window")) flags["window_len"] = window;
      if (given("score.stride")) flags["stride"] = stride;
      if (checkpoints.empty()) throw UsageError("missing required flag --checkpoint");
      require_path(checkpoints.front(), "--checkpoint");
      require_path(data_path, "--data");
      return cmd_score(checkpoints.front(), flags, prepare_out(out_dir), out);
    }
    if (evaluate->parsed()) {
      json flags{{"scores", scores}, {"labels", labels}, {"label_mode", label_mode}, {"bins", bins}};
      if (given("eval.sigma") || label_mode == "smoothed") flags["sigma"] = sigma;
      if (given("eval.sigma") && label_mode == "hard") flags["label_mode"] = "smoothed";
      require_path(scores, "--scores");
      require_path(labels, "--labels");
      return cmd_eval(flags, prepare_out(out_dir), out);
    }
    if (export_graph->parsed()) {
      if (checkpoints.empty()) throw UsageError("missing required flag --checkpoint");
      for (const auto& c : checkpoints) require_path(c, "--checkpoint");
      const fs::path dir = prepare_out(out_dir);
      return cmd_export_graph(checkpoints, epsilon, dir, out);
    }
    if (bench->parsed()) {
      const json grid = given("bench.config") ? read_json_file(config, "--config") : json::object();
      return cmd_bench(grid, prepare_out(out_dir), out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: config field '" << e.field() << "': " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace ganf::cli
