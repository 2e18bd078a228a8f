#pragma once

#include <string>
#include <vector>

#include "ganf/dag/dag.hpp"

namespace ganf::eval {

enum class LabelMode { kHard, kSmoothed };

/// Anomaly start times and the Gaussian label kernel around them.
struct LabelTrack {
  std::vector<double> anomaly_times;
  double sigma = 6.0;
  LabelMode mode = LabelMode::kSmoothed;
};

/// p(t) = max_i exp(-(t - t_i)^2 / sigma^2); hard mode gives 1 exactly at some t_i.
std::vector<double> smooth_labels(const std::vector<double>& times, const LabelTrack& track);

struct RocResult {
  /// Descending; the first point (threshold +inf) is the origin.
  std::vector<double> thresholds;
  std::vector<double> tpr;
  std::vector<double> fpr;
  double auc = 0.0;
};

/// ROC with probabilistic confusion sums. Tied scores form a single threshold.
/// Throws DomainError when the positive or negative label mass is zero.
RocResult roc_auc(const std::vector<double>& scores, const std::vector<double>& labels);

/// Structural Hamming distance; a reversed edge counts once.
std::size_t shd(std::size_t nodes, const std::vector<dag::Edge>& predicted, const std::vector<dag::Edge>& truth);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
};

/// Equal-width bins over [min, max]; the last bin is closed.
Histogram density_histogram(const std::vector<double>& values, std::size_t bins);
std::string histogram_csv(const Histogram& h);

}  // namespace ganf::eval
