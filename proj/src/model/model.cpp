#include "ganf/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <json.hpp>
#include <thread>

#include "ganf/core/errors.hpp"

namespace ganf::model {

namespace {

constexpr std::size_t kScoreChunk = 32;

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kGraph:
      return "graph";
    case Mode::kNoGraph:
      return "no-graph";
    case Mode::kFullChain:
      return "full-chain";
  }
  return "graph";
}

Mode mode_from_string(const std::string& s) {
  if (s == "graph") return Mode::kGraph;
  if (s == "no-graph") return Mode::kNoGraph;
  if (s == "full-chain") return Mode::kFullChain;
  throw ConfigError("mode", "mode must be graph, no-graph or full-chain, got '" + s + "'");
}

std::string config_to_json(const ModelConfig& cfg) {
  nlohmann::json j{{"nodes", cfg.nodes},
                   {"attrs", cfg.attrs},
                   {"hidden", cfg.hidden},
                   {"flow_hidden", cfg.flow_hidden},
                   {"flow_blocks", cfg.flow_blocks},
                   {"flow_kind", flow::to_string(cfg.flow_kind)},
                   {"mode", to_string(cfg.mode)},
                   {"adjacency_norm", cfg.adjacency_norm == encoder::AdjacencyNorm::kRow ? "row" : "raw"},
                   {"scale_clamp", cfg.scale_clamp},
                   {"adjacency_init", cfg.adjacency_init},
                   {"identity_init", cfg.identity_init},
                   {"seed", cfg.seed},
                   {"entities", cfg.entities}};
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.nodes = j.at("nodes").get<std::size_t>();
    cfg.attrs = j.at("attrs").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.flow_hidden = j.at("flow_hidden").get<std::size_t>();
    cfg.flow_blocks = j.at("flow_blocks").get<std::size_t>();
    cfg.flow_kind = flow::block_kind_from_string(j.at("flow_kind").get<std::string>());
    cfg.mode = mode_from_string(j.at("mode").get<std::string>());
    const auto norm = j.at("adjacency_norm").get<std::string>();
    if (norm != "raw" && norm != "row") throw ConfigError("adjacency_norm", "adjacency_norm must be raw or row");
    cfg.adjacency_norm = norm == "row" ? encoder::AdjacencyNorm::kRow : encoder::AdjacencyNorm::kRaw;
    cfg.scale_clamp = j.at("scale_clamp").get<double>();
    cfg.adjacency_init = j.at("adjacency_init").get<double>();
    cfg.identity_init = j.at("identity_init").get<bool>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.entities = j.at("entities").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config is incomplete: ") + e.what());
  }
  return cfg;
}

flow::FlowConfig GanfModel::flow_config(const ModelConfig& cfg) {
  flow::FlowConfig f;
  f.kind = cfg.flow_kind;
  f.dim = cfg.mode == Mode::kFullChain ? cfg.nodes * cfg.attrs : cfg.attrs;
  f.cond_dim = cfg.hidden;
  f.hidden = cfg.flow_hidden;
  f.blocks = cfg.flow_blocks;
  f.scale_clamp = cfg.scale_clamp;
  f.identity_init = cfg.identity_init;
  return f;
}

namespace {

const ModelConfig& validated(const ModelConfig& cfg) {
  if (cfg.nodes == 0) throw ConfigError("nodes", "model needs at least one series");
  if (cfg.attrs == 0) throw ConfigError("attrs", "model needs at least one attribute");
  if (cfg.hidden == 0) throw ConfigError("hidden_dim", "hidden_dim must be positive");
  if (!cfg.entities.empty() && cfg.entities.size() != cfg.nodes) {
    throw ConfigError("entities", "entity list has " + std::to_string(cfg.entities.size()) + " names for " +
                                      std::to_string(cfg.nodes) + " series");
  }
  return cfg;
}

}  // namespace

GanfModel::GanfModel(ModelConfig cfg)
    : cfg_(validated(cfg)),
      inner_nodes_(cfg_.mode == Mode::kFullChain ? 1 : cfg_.nodes),
      inner_attrs_(cfg_.mode == Mode::kFullChain ? cfg_.nodes * cfg_.attrs : cfg_.attrs),
      rng_(cfg_.seed),
      cell_(inner_attrs_, cfg_.hidden, rng_),
      encoder_(cfg_.hidden, rng_, cfg_.adjacency_norm),
      flow_(flow_config(cfg_), rng_),
      adjacency_(Tensor::zeros({inner_nodes_, inner_nodes_})) {
  if (cfg_.entities.empty())
    for (std::size_t i = 0; i < cfg_.nodes; ++i) cfg_.entities.push_back("s" + std::to_string(i));
  if (adjacency_trainable()) {
    auto v = adjacency_.mutable_values();
    for (std::size_t i = 0; i < inner_nodes_; ++i)
      for (std::size_t j = 0; j < inner_nodes_; ++j)
        if (i != j) v[i * inner_nodes_ + j] = rng_.uniform(-cfg_.adjacency_init, cfg_.adjacency_init);
    adjacency_.set_requires_grad(true);
  }
}

void GanfModel::remask_adjacency() {
  auto v = adjacency_.mutable_values();
  for (std::size_t i = 0; i < inner_nodes_; ++i) v[i * inner_nodes_ + i] = 0.0;
  if (!adjacency_trainable()) std::fill(v.begin(), v.end(), 0.0);
}

std::vector<NamedTensor> GanfModel::parameters() const {
  std::vector<NamedTensor> out{{"A", adjacency_}};
  cell_.collect(out);
  encoder_.collect(out);
  for (auto& p : flow_.parameters()) out.push_back(std::move(p));
  return out;
}

std::vector<NamedTensor> GanfModel::trainable() const {
  auto all = parameters();
  if (!adjacency_trainable()) all.erase(all.begin());
  return all;
}

encoder::SeriesBatch GanfModel::internal_batch(const encoder::SeriesBatch& x) const {
  if (x.nodes != cfg_.nodes || x.attrs != cfg_.attrs) {
    throw DimensionError("batch has n=" + std::to_string(x.nodes) + ", D=" + std::to_string(x.attrs) +
                         "; model expects n=" + std::to_string(cfg_.nodes) + ", D=" + std::to_string(cfg_.attrs));
  }
  if (cfg_.mode != Mode::kFullChain) return x;
  encoder::SeriesBatch out;
  out.batch = x.batch;
  out.nodes = 1;
  out.steps = x.steps;
  out.attrs = x.nodes * x.attrs;
  out.values.resize(x.values.size());
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t i = 0; i < x.nodes; ++i)
      for (std::size_t t = 0; t < x.steps; ++t)
        for (std::size_t a = 0; a < x.attrs; ++a)
          out.values[(b * x.steps + t) * out.attrs + i * x.attrs + a] = x.at(b, i, t, a);
  return out;
}

Tensor GanfModel::step_log_prob(const encoder::SeriesBatch& batch) const {
  const encoder::SeriesBatch x = internal_batch(batch);
  const encoder::HiddenStates h = encoder::encode_hidden(cell_, x);
  const Tensor a = adjacency_trainable() ? encoder::masked_diag(adjacency_) : adjacency_;
  const Tensor deps = encoder::encode_dependencies(encoder_, h, a);
  return flow_.log_prob(x.rows(), deps);
}

Tensor GanfModel::batch_nll(const encoder::SeriesBatch& x) const {
  return core::scale(core::sum(step_log_prob(x)), -1.0 / static_cast<double>(x.batch));
}

void GanfModel::check_window(const data::MultiSeriesWindow& w) const {
  if (w.nodes != cfg_.nodes || w.attrs != cfg_.attrs) {
    throw DimensionError("window has n=" + std::to_string(w.nodes) + ", D=" + std::to_string(w.attrs) +
                         "; model expects n=" + std::to_string(cfg_.nodes) + ", D=" + std::to_string(cfg_.attrs));
  }
  if (w.steps == 0 || w.values.size() != w.nodes * w.steps * w.attrs) {
    throw DimensionError("window starting at " + std::to_string(w.start_index) + " has malformed values");
  }
  for (std::size_t i = 0; i < w.nodes; ++i)
    for (std::size_t t = 0; t < w.steps; ++t)
      for (std::size_t a = 0; a < w.attrs; ++a)
        if (!std::isfinite(w.at(i, t, a))) {
          throw NumericError("non-finite input in window " + std::to_string(w.start_index) + " at series " +
                             std::to_string(i) + ", step " + std::to_string(t));
        }
}

std::vector<DensityReport> GanfModel::score_chunk(const std::vector<data::MultiSeriesWindow>& windows,
                                                  std::size_t begin, std::size_t end) const {
  core::NoTapeGuard no_tape;
  for (std::size_t k = begin; k < end; ++k) check_window(windows[k]);
  const encoder::SeriesBatch x = make_batch(windows, begin, end);
  const Tensor lp = step_log_prob(x);
  const auto v = lp.values();
  const std::size_t nodes = inner_nodes_;
  std::vector<DensityReport> out(end - begin);
  for (std::size_t b = 0; b < out.size(); ++b) {
    DensityReport& r = out[b];
    r.per_step.assign(nodes, std::vector<double>(x.steps));
    r.per_series.assign(nodes, 0.0);
    for (std::size_t i = 0; i < nodes; ++i) {
      for (std::size_t t = 0; t < x.steps; ++t) {
        const double s = v[(t * x.batch + b) * nodes + i];
        if (!std::isfinite(s)) {
          throw NumericError("non-finite log-density in window " + std::to_string(windows[begin + b].start_index) +
                             " at series " + std::to_string(i) + ", step " + std::to_string(t));
        }
        r.per_step[i][t] = s;
        r.per_series[i] += s;
      }
      r.total += r.per_series[i];
    }
  }
  return out;
}

DensityReport GanfModel::log_density(const data::MultiSeriesWindow& w) const {
  const std::vector<data::MultiSeriesWindow> one{w};
  return score_chunk(one, 0, 1).front();
}

std::vector<DensityReport> GanfModel::log_density(const std::vector<data::MultiSeriesWindow>& windows,
                                                  unsigned threads) const {
  const std::size_t chunks = (windows.size() + kScoreChunk - 1) / kScoreChunk;
  std::vector<DensityReport> out(windows.size());
  const unsigned workers = std::min<std::size_t>(worker_count(threads), std::max<std::size_t>(chunks, 1));
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](unsigned worker) {
    try {
      for (std::size_t c = worker; c < chunks; c += workers) {
        const std::size_t begin = c * kScoreChunk;
        const std::size_t end = std::min(windows.size(), begin + kScoreChunk);
        auto part = score_chunk(windows, begin, end);
        std::move(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

double GanfModel::anomaly_score(const data::MultiSeriesWindow& w) const { return -log_density(w).total; }

std::vector<double> GanfModel::per_series_scores(const data::MultiSeriesWindow& w) const {
  auto r = log_density(w);
  for (double& s : r.per_series) s = -s;
  return r.per_series;
}

encoder::SeriesBatch make_batch(const std::vector<const data::MultiSeriesWindow*>& windows) {
  if (windows.empty()) throw ContractError("cannot build an empty batch");
  const auto& first = *windows.front();
  encoder::SeriesBatch x;
  x.batch = windows.size();
  x.nodes = first.nodes;
  x.steps = first.steps;
  x.attrs = first.attrs;
  x.values.reserve(x.batch * first.values.size());
  for (const auto* w : windows) {
    if (w->nodes != x.nodes || w->steps != x.steps || w->attrs != x.attrs) {
      throw DimensionError("windows in a batch must share (n, T, D)");
    }
    x.values.insert(x.values.end(), w->values.begin(), w->values.end());
  }
  return x;
}

encoder::SeriesBatch make_batch(const std::vector<data::MultiSeriesWindow>& windows, std::size_t begin,
                                std::size_t end) {
  std::vector<const data::MultiSeriesWindow*> ptrs;
  for (std::size_t k = begin; k < end; ++k) ptrs.push_back(&windows[k]);
  return make_batch(ptrs);
}

unsigned worker_count(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("GANF_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace ganf::model
