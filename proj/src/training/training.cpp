#include "ganf/training/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numeric>

#include "ganf/core/errors.hpp"
#include "ganf/core/random.hpp"
#include "ganf/encoder/encoder.hpp"

namespace ganf::training {

using core::Tensor;

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("lr", "lr must be positive");
  if (!(cfg.lr_decay > 0.0) || cfg.lr_decay > 1.0) throw ConfigError("lr_decay", "lr_decay must lie in (0, 1]");
  if (!(cfg.grad_clip > 0.0)) throw ConfigError("grad_clip", "grad_clip must be positive");
  if (cfg.batch_size == 0) throw ConfigError("batch_size", "batch_size must be positive");
  if (cfg.inner_epochs == 0) throw ConfigError("inner_epochs", "inner_epochs must be positive");
  if (cfg.max_outer_iters == 0) throw ConfigError("max_outer_iters", "max_outer_iters must be positive");
  if (!(cfg.h_tol > 0.0)) throw ConfigError("h_tol", "h_tol must be positive");
  if (!(cfg.eta > 1.0)) throw ConfigError("eta", "eta must exceed 1");
  if (!(cfg.gamma > 0.0) || !(cfg.gamma < 1.0)) throw ConfigError("gamma", "gamma must lie in (0, 1)");
  if (!(cfg.min_lr > 0.0) || cfg.min_lr > cfg.lr) throw ConfigError("min_lr", "min_lr must lie in (0, lr]");
  if (cfg.plateau_patience == 0) throw ConfigError("plateau_patience", "plateau_patience must be positive");
}

Adam::Adam(std::vector<NamedTensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step(const std::vector<std::vector<double>>& grads) {
  if (grads.size() != params_.size()) throw DimensionError("gradient list does not match the parameter list");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k].tensor.mutable_values();
    const auto& g = grads[k];
    if (g.size() != w.size()) throw DimensionError("gradient of '" + params_[k].name + "' has the wrong size");
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

double clip_gradients(std::vector<std::vector<double>>& grads, double clip, ClipMode mode) {
  if (mode == ClipMode::kElementwise) {
    for (auto& g : grads)
      for (double& x : g) x = std::clamp(x, -clip, clip);
    return 1.0;
  }
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (!(norm > clip)) return 1.0;
  const double s = clip / norm;
  for (auto& g : grads)
    for (double& x : g) x *= s;
  return s;
}

std::string to_json_line(const HistoryRecord& r) {
  nlohmann::json j{{"kind", r.kind},   {"outer", r.outer},   {"epoch", r.epoch},
                   {"train_nll", r.train_nll}, {"train_loss", r.train_loss},
                   {"val_log_density", r.val_log_density}, {"h", r.h},
                   {"lambda", r.lambda}, {"c", r.penalty},   {"lr", r.lr}};
  return j.dump();
}

double mean_log_density(const model::GanfModel& m, const std::vector<data::MultiSeriesWindow>& windows) {
  if (windows.empty()) throw ContractError("no windows to evaluate");
  const auto reports = m.log_density(windows);
  double total = 0.0;
  for (const auto& r : reports) total += r.total;
  return total / static_cast<double>(reports.size());
}

namespace {

using Snapshot = std::vector<std::vector<double>>;

Snapshot take(const std::vector<NamedTensor>& params) {
  Snapshot s;
  for (const auto& p : params) s.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return s;
}

void restore(const std::vector<NamedTensor>& params, const Snapshot& s) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].tensor;
    std::copy(s[k].begin(), s[k].end(), dst.mutable_values().begin());
  }
}

double current_h(const model::GanfModel& m) {
  if (!m.adjacency_trainable()) return 0.0;
  return dag::acyclicity(dag::to_matrix(m.adjacency()));
}

}  // namespace

TrainResult train(model::GanfModel& m, const std::vector<data::MultiSeriesWindow>& train_windows,
                  const std::vector<data::MultiSeriesWindow>& val_windows, const TrainConfig& cfg,
                  const HistorySink& sink) {
  validate(cfg);
  if (train_windows.empty()) throw ContractError("training needs at least one window");
  if (val_windows.empty()) throw ContractError("training needs at least one validation window");

  core::Rng rng(cfg.seed);
  const bool graph = m.adjacency_trainable();
  const dag::LagrangianSchedule schedule{cfg.eta, cfg.gamma, 1.0};
  TrainResult result;
  dag::LagrangianState& state = result.lagrangian;
  if (graph) state.lambda = rng.uniform(0.0, 1.0);

  const auto all = m.parameters();
  const auto params = m.trainable();
  Adam adam(params, cfg.lr);

  auto emit = [&](HistoryRecord r) {
    if (sink) sink(r);
    result.history.push_back(std::move(r));
  };

  Snapshot best = take(all);
  double best_val = -std::numeric_limits<double>::infinity();
  bool best_feasible = false;
  Snapshot last_good = best;

  auto diverged = [&](std::size_t outer, std::size_t epoch, const std::string& why) {
    restore(all, last_good);
    std::string where = "training diverged at outer iteration " + std::to_string(outer) + ", epoch " +
                        std::to_string(epoch) + " (" + why + ")";
    if (!cfg.checkpoint_dir.empty()) {
      const auto path = cfg.checkpoint_dir / "last_good.ckpt";
      CheckpointMeta meta;
      meta.window_len = train_windows.front().steps;
      meta.lagrangian = state;
      save_checkpoint(path, m, meta);
      where += "; last good parameters saved to " + path.string();
    }
    throw NumericError(where);
  };

  std::vector<std::size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t epoch_counter = 0;

  for (std::size_t outer = 0; outer < cfg.max_outer_iters; ++outer) {
    double plateau_best = -std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    for (std::size_t e = 0; e < cfg.inner_epochs; ++e, ++epoch_counter) {
      std::shuffle(order.begin(), order.end(), rng.engine());
      double nll_sum = 0.0;
      double loss_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
        std::vector<const data::MultiSeriesWindow*> members;
        for (std::size_t k = begin; k < end; ++k) members.push_back(&train_windows[order[k]]);
        const encoder::SeriesBatch batch = model::make_batch(members);

        for (auto p : params) p.tensor.zero_grad();
        core::Tape tape;
        double nll_value = 0.0;
        double loss_value = 0.0;
        try {
          core::TapeGuard guard(tape);
          const Tensor nll = m.batch_nll(batch);
          Tensor loss = nll;
          if (graph) loss = dag::augmented_lagrangian(nll, dag::acyclicity(m.adjacency()), state);
          nll_value = nll.item();
          loss_value = loss.item();
          if (!std::isfinite(loss_value)) diverged(outer, e, "non-finite loss");
          tape.backward(loss);
        } catch (const NumericError& err) {
          if (std::string(err.what()).starts_with("training diverged")) throw;
          diverged(outer, e, err.what());
        }

        std::vector<std::vector<double>> grads;
        for (const auto& p : params) {
          if (p.tensor.has_grad()) {
            grads.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
          } else {
            grads.emplace_back(p.tensor.numel(), 0.0);
          }
          for (double g : grads.back())
            if (!std::isfinite(g)) diverged(outer, e, "non-finite gradient in " + p.name);
        }
        clip_gradients(grads, cfg.grad_clip, cfg.clip_mode);
        last_good = take(all);
        adam.step(grads);
        m.remask_adjacency();
        nll_sum += nll_value;
        loss_sum += loss_value;
        ++batches;
      }

      const double val = mean_log_density(m, val_windows);
      const double h = current_h(m);
      HistoryRecord rec{"epoch",          outer, epoch_counter, nll_sum / static_cast<double>(batches),
                        loss_sum / static_cast<double>(batches), val, h, state.lambda, state.penalty,
                        adam.lr()};
      emit(rec);

      const bool feasible = !graph || std::abs(h) < cfg.h_tol;
      if ((feasible && !best_feasible) || (feasible == best_feasible && val > best_val)) {
        best = take(all);
        best_val = val;
        best_feasible = feasible;
      }

      if (val > plateau_best) {
        plateau_best = val;
        stale = 0;
      } else if (++stale >= cfg.plateau_patience && adam.lr() > cfg.min_lr) {
        adam.set_lr(std::max(cfg.min_lr, adam.lr() * cfg.lr_decay));
        stale = 0;
        rec.kind = "lr_decay";
        rec.lr = adam.lr();
        emit(rec);
      }
    }

    const double h = current_h(m);
    result.final_h = h;
    result.outer_iterations = outer + 1;
    const bool done = std::abs(h) < cfg.h_tol;
    state = dag::dual_penalty_update(state, h, schedule);
    HistoryRecord rec;
    rec.kind = "outer";
    rec.outer = outer;
    rec.epoch = epoch_counter;
    rec.h = h;
    rec.lambda = state.lambda;
    rec.penalty = state.penalty;
    rec.lr = adam.lr();
    rec.val_log_density = result.history.back().val_log_density;
    emit(rec);
    if (done) {
      result.converged = true;
      break;
    }
  }

  restore(all, best);
  result.best_val_log_density = best_val;
  result.final_h = current_h(m);
  result.warning = !result.converged || std::abs(result.final_h) >= cfg.h_tol;
  return result;
}

namespace {

constexpr char kMagic[8] = {'G', 'A', 'N', 'F', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& str() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int k = 0; k < n; ++k) buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint " + path_ + " is truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int k = 0; k < n; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

nlohmann::json stats_to_json(const data::NormalizationStats& s) {
  nlohmann::json flagged = nlohmann::json::array();
  for (const auto& [i, a] : s.flagged) flagged.push_back({i, a});
  return {{"nodes", s.nodes}, {"attrs", s.attrs}, {"mean", s.mean},
          {"std", s.std},     {"flagged", flagged}, {"source", s.source}};
}

data::NormalizationStats stats_from_json(const nlohmann::json& j) {
  data::NormalizationStats s;
  s.nodes = j.at("nodes").get<std::size_t>();
  s.attrs = j.at("attrs").get<std::size_t>();
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  for (const auto& f : j.at("flagged")) s.flagged.emplace_back(f.at(0).get<std::size_t>(), f.at(1).get<std::size_t>());
  s.source = j.at("source").get<std::string>();
  return s;
}

struct RawArray {
  std::string name;
  core::Shape shape;
  std::vector<double> values;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const model::GanfModel& m, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["model"] = nlohmann::json::parse(model::config_to_json(m.config()));
  header["window_len"] = meta.window_len;
  header["lagrangian"] = {{"lambda", meta.lagrangian.lambda},
                          {"c", meta.lagrangian.penalty},
                          {"iteration", meta.lagrangian.iteration},
                          {"h_prev", meta.lagrangian.h_prev}};
  if (meta.stats) header["normalization"] = stats_to_json(*meta.stats);
  header["run_config"] = nlohmann::json::parse(meta.run_config.empty() ? "{}" : meta.run_config);
  const std::string text = header.dump();

  Writer w;
  w.bytes(std::string_view(kMagic, sizeof(kMagic)));
  w.u32(kCheckpointVersion);
  w.u64(fnv1a(text));
  w.u64(text.size());
  w.bytes(text);
  const auto params = m.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.u64(d);
  }
  for (const auto& p : params)
    for (double v : p.tensor.values()) w.f64(v);

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint " + path.string());
    out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
    if (!out) throw FormatError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const model::ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());

  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw FormatError(path.string() + " is not a checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t hash = r.u64();
  const std::uint64_t len = r.u64();
  const std::string text = r.bytes(len);
  if (fnv1a(text) != hash) throw FormatError("checkpoint " + path.string() + " header is corrupt");

  std::vector<RawArray> arrays(r.u32());
  for (auto& a : arrays) {
    a.name = r.bytes(r.u32());
    a.shape.resize(r.u32());
    for (auto& d : a.shape) d = r.u64();
  }
  for (auto& a : arrays) {
    a.values.resize(core::shape_numel(a.shape));
    for (double& v : a.values) v = r.f64();
  }
  if (!r.at_end()) throw FormatError("checkpoint " + path.string() + " has trailing bytes");

  LoadedCheckpoint out;
  nlohmann::json header;
  model::ModelConfig cfg;
  try {
    header = nlohmann::json::parse(text);
    cfg = model::config_from_json(header.at("model").dump());
    out.meta.window_len = header.at("window_len").get<std::size_t>();
    const auto& lg = header.at("lagrangian");
    out.meta.lagrangian.lambda = lg.at("lambda").get<double>();
    out.meta.lagrangian.penalty = lg.at("c").get<double>();
    out.meta.lagrangian.iteration = lg.at("iteration").get<std::size_t>();
    out.meta.lagrangian.h_prev = lg.at("h_prev").get<double>();
    if (header.contains("normalization")) out.meta.stats = stats_from_json(header.at("normalization"));
    out.meta.run_config = header.at("run_config").dump();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + path.string() + " header is malformed: " + e.what());
  }

  auto check_shapes = [&](const std::vector<NamedTensor>& params) {
    if (params.size() != arrays.size()) {
      throw DimensionError("checkpoint holds " + std::to_string(arrays.size()) + " arrays, model expects " +
                           std::to_string(params.size()));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (arrays[k].name != params[k].name) {
        throw DimensionError("checkpoint array " + std::to_string(k) + " is '" + arrays[k].name + "', expected '" +
                             params[k].name + "'");
      }
      if (arrays[k].shape != params[k].tensor.shape()) {
        throw DimensionError("checkpoint array '" + arrays[k].name + "' has shape " +
                             core::shape_string(arrays[k].shape) + ", expected " +
                             core::shape_string(params[k].tensor.shape()));
      }
    }
  };

  if (expected) {
    model::ModelConfig probe = *expected;
    probe.entities.clear();
    check_shapes(model::GanfModel(probe).parameters());
  }
  auto m = std::make_unique<model::GanfModel>(cfg);
  const auto params = m->parameters();
  check_shapes(params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto t = params[k].tensor;
    std::copy(arrays[k].values.begin(), arrays[k].values.end(), t.mutable_values().begin());
  }
  out.model = std::move(m);
  return out;
}

}  // namespace ganf::training
