#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ganf::data {

/// Dense multi-entity series: values laid out [entity][step][attr].
struct SeriesTable {
  std::vector<std::string> entities;
  std::size_t length = 0;
  std::size_t attrs = 0;
  std::vector<double> values;
  double start_time = 0.0;
  double interval = 1.0;
  /// Number of readings filled forward during ingestion.
  std::size_t imputed = 0;

  std::size_t nodes() const { return entities.size(); }
  double& at(std::size_t i, std::size_t t, std::size_t a) { return values[(i * length + t) * attrs + a]; }
  double at(std::size_t i, std::size_t t, std::size_t a) const { return values[(i * length + t) * attrs + a]; }
};

/// One instance: n constituent series of T steps with D attributes, [node][step][attr].
struct MultiSeriesWindow {
  std::size_t nodes = 0;
  std::size_t steps = 0;
  std::size_t attrs = 0;
  std::vector<double> values;
  std::size_t start_index = 0;
  std::vector<std::string> entity_ids;

  double& at(std::size_t i, std::size_t t, std::size_t a) { return values[(i * steps + t) * attrs + a]; }
  double at(std::size_t i, std::size_t t, std::size_t a) const { return values[(i * steps + t) * attrs + a]; }
};

struct CsvSchema {
  /// 0 accepts any count.
  std::size_t expected_entities = 0;
  std::size_t expected_attrs = 0;
  /// Longest run of missing steps that is forward-filled.
  std::size_t max_gap = 5;
};

/// Reads long-format `timestamp,entity,attr_1,...,attr_D` CSV into a dense table.
SeriesTable load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
void write_csv(const std::filesystem::path& path, const SeriesTable& table);

/// floor((L - T) / stride) + 1 windows; window k starts at k * stride.
std::vector<MultiSeriesWindow> make_windows(const SeriesTable& table, std::size_t steps, std::size_t stride,
                                            std::size_t begin = 0, std::size_t end = SIZE_MAX);

/// Per-entity, per-attribute z-score statistics.
struct NormalizationStats {
  std::size_t nodes = 0;
  std::size_t attrs = 0;
  std::vector<double> mean;
  std::vector<double> std;
  /// (node, attr) pairs whose variance fell below the floor.
  std::vector<std::pair<std::size_t, std::size_t>> flagged;
  /// Split the statistics were computed on.
  std::string source = "train";

  void apply(MultiSeriesWindow& w) const;
};

inline constexpr double kStdFloor = 1e-6;

NormalizationStats compute_stats(const std::vector<MultiSeriesWindow>& windows, const std::string& source);

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
};

struct DatasetSplit {
  std::vector<MultiSeriesWindow> train;
  std::vector<MultiSeriesWindow> validation;
  std::vector<MultiSeriesWindow> test;
  NormalizationStats stats;
  bool normalized = false;
  /// Time index where each segment begins: train, validation, test, end.
  std::size_t boundaries[4] = {0, 0, 0, 0};
};

/// Chronological split of the timeline, windowed per segment.
DatasetSplit chronological_split(const SeriesTable& table, std::size_t steps, std::size_t train_stride,
                                 std::size_t eval_stride, const SplitFractions& fractions = {});

/// z-scores every split with statistics from the train windows only.
DatasetSplit normalize(DatasetSplit split);

enum class AnomalyKind { kSpike, kLevelShift };
std::string to_string(AnomalyKind kind);
AnomalyKind anomaly_kind_from_string(const std::string& s);

struct SynthEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  double weight = 0.0;
};

struct SynthSpec {
  std::size_t nodes = 5;
  std::size_t attrs = 1;
  std::size_t length = 10000;
  /// Label granularity: anomalies are labeled on disjoint windows of this many steps.
  std::size_t window = 20;
  double edge_prob = 0.5;
  double weight_min = 0.8;
  double weight_max = 0.95;
  double ar = 0.5;
  double noise_std = 1.0;
  double anomaly_rate = 0.0;
  double anomaly_magnitude = 10.0;
  AnomalyKind anomaly_kind = AnomalyKind::kSpike;
  /// Explicit graph; when empty a random DAG is drawn from `edge_prob`.
  std::vector<SynthEdge> edges;
  std::uint64_t seed = 0;
};

struct WindowLabel {
  std::size_t window_start = 0;
  int label = 0;
};

struct SynthResult {
  SeriesTable series;
  std::vector<WindowLabel> labels;
  /// A(i, j) = weight of parent j in the equation of node i.
  Eigen::MatrixXd ground_truth;
};

/// Linear-Gaussian SEM with an AR(1) term, optionally with labeled anomalies.
SynthResult synth_generate(const SynthSpec& spec, std::size_t length, std::uint64_t seed);

struct InjectionResult {
  std::vector<MultiSeriesWindow> windows;
  std::vector<int> labels;
  /// Node perturbed in each window, -1 when untouched.
  std::vector<int> nodes;
};

/// Perturbs exactly floor(rate * count) windows, each in one random node.
InjectionResult inject_anomalies(std::vector<MultiSeriesWindow> windows, const SynthSpec& spec, std::uint64_t seed);

/// Labels CSV `window_start,label`.
void write_labels(const std::filesystem::path& path, const std::vector<WindowLabel>& labels);
std::vector<WindowLabel> load_labels(const std::filesystem::path& path);

std::string ground_truth_json(const SynthResult& result, const SynthSpec& spec);
SynthSpec synth_spec_from_json(const std::string& text);
std::string synth_spec_to_json(const SynthSpec& spec);

}  // namespace ganf::data
