#pragma once

#include <string>
#include <vector>

#include "ganf/data/data.hpp"
#include "ganf/encoder/encoder.hpp"
#include "ganf/flow/flow.hpp"

namespace ganf::model {

using core::Tensor;

/// graph: learned DAG. no-graph: A frozen at zero, series independent.
/// full-chain: one flow over the n*D concatenated attributes, no A.
enum class Mode { kGraph, kNoGraph, kFullChain };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& s);

struct ModelConfig {
  std::size_t nodes = 1;
  std::size_t attrs = 1;
  /// d: LSTM state, dependency vector and flow condition width.
  std::size_t hidden = 32;
  /// Width of the shift/log-scale networks inside each flow block.
  std::size_t flow_hidden = 32;
  std::size_t flow_blocks = 6;
  flow::BlockKind flow_kind = flow::BlockKind::kMaf;
  Mode mode = Mode::kGraph;
  encoder::AdjacencyNorm adjacency_norm = encoder::AdjacencyNorm::kRaw;
  double scale_clamp = 5.0;
  /// Off-diagonal entries of A start at U(-adjacency_init, adjacency_init).
  double adjacency_init = 0.1;
  bool identity_init = true;
  std::uint64_t seed = 0;
  std::vector<std::string> entities;
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

struct DensityReport {
  double total = 0.0;
  std::vector<double> per_series;
  /// [series][step]
  std::vector<std::vector<double>> per_step;
};

class GanfModel {
 public:
  explicit GanfModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  Mode mode() const { return cfg_.mode; }

  /// log p(x_t^i | d_t^i) for every (t, b, i) in time-major row order.
  Tensor step_log_prob(const encoder::SeriesBatch& x) const;
  /// Mean negative log-density per window.
  Tensor batch_nll(const encoder::SeriesBatch& x) const;

  DensityReport log_density(const data::MultiSeriesWindow& w) const;
  /// Scores windows in fixed-size chunks, in parallel up to `threads` workers
  /// (0 reads GANF_THREADS, falling back to hardware concurrency).
  std::vector<DensityReport> log_density(const std::vector<data::MultiSeriesWindow>& windows,
                                         unsigned threads = 0) const;
  double anomaly_score(const data::MultiSeriesWindow& w) const;
  std::vector<double> per_series_scores(const data::MultiSeriesWindow& w) const;

  /// A with its diagonal held at zero (all zeros outside graph mode).
  const Tensor& adjacency() const { return adjacency_; }
  /// Zeroes diag(A); called after every optimizer step.
  void remask_adjacency();
  bool adjacency_trainable() const { return cfg_.mode == Mode::kGraph; }

  /// Every array, "A" first; the order defines the checkpoint layout.
  std::vector<NamedTensor> parameters() const;
  /// Parameters updated by the optimizer (omits A when it is frozen).
  std::vector<NamedTensor> trainable() const;

  const flow::FlowStack& flow() const { return flow_; }
  const encoder::LstmCell& cell() const { return cell_; }
  const encoder::DependencyEncoder& dependency_encoder() const { return encoder_; }

 private:
  static flow::FlowConfig flow_config(const ModelConfig& cfg);
  encoder::SeriesBatch internal_batch(const encoder::SeriesBatch& x) const;
  void check_window(const data::MultiSeriesWindow& w) const;
  std::vector<DensityReport> score_chunk(const std::vector<data::MultiSeriesWindow>& windows, std::size_t begin,
                                         std::size_t end) const;

  ModelConfig cfg_;
  std::size_t inner_nodes_;
  std::size_t inner_attrs_;
  core::Rng rng_;
  encoder::LstmCell cell_;
  encoder::DependencyEncoder encoder_;
  flow::FlowStack flow_;
  Tensor adjacency_;
};

/// Packs windows into a batch; all windows must share (n, T, D).
encoder::SeriesBatch make_batch(const std::vector<data::MultiSeriesWindow>& windows, std::size_t begin,
                                std::size_t end);
encoder::SeriesBatch make_batch(const std::vector<const data::MultiSeriesWindow*>& windows);

/// Worker count from GANF_THREADS, else hardware concurrency, at least 1.
unsigned worker_count(unsigned requested = 0);

}  // namespace ganf::model
