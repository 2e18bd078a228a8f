#include "ganf/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "ganf/core/errors.hpp"

namespace ganf::eval {

std::vector<double> smooth_labels(const std::vector<double>& times, const LabelTrack& track) {
  if (track.mode == LabelMode::kSmoothed && !(track.sigma > 0.0)) {
    throw DomainError("label smoothing sigma must be positive");
  }
  const double s2 = track.sigma * track.sigma;
  std::vector<double> p(times.size(), 0.0);
  for (std::size_t k = 0; k < times.size(); ++k) {
    for (double ti : track.anomaly_times) {
      const double d = times[k] - ti;
      const double v = track.mode == LabelMode::kHard ? (d == 0.0 ? 1.0 : 0.0) : std::exp(-d * d / s2);
      p[k] = std::max(p[k], v);
    }
  }
  return p;
}

RocResult roc_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("roc_auc got " + std::to_string(scores.size()) + " scores and " +
                         std::to_string(labels.size()) + " labels");
  }
  double pos = 0.0;
  double neg = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (!std::isfinite(scores[k])) throw DomainError("score " + std::to_string(k) + " is not finite");
    if (!(labels[k] >= 0.0 && labels[k] <= 1.0)) throw DomainError("label " + std::to_string(k) + " is outside [0, 1]");
    pos += labels[k];
    neg += 1.0 - labels[k];
  }
  if (!(pos > 0.0) || !(neg > 0.0)) {
    throw DomainError("AUC is undefined: all label mass is " + std::string(pos > 0.0 ? "positive" : "negative"));
  }

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult r;
  r.thresholds.push_back(std::numeric_limits<double>::infinity());
  r.tpr.push_back(0.0);
  r.fpr.push_back(0.0);
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t k = 0; k < idx.size();) {
    const double theta = scores[idx[k]];
    for (; k < idx.size() && scores[idx[k]] == theta; ++k) {
      tp += labels[idx[k]];
      fp += 1.0 - labels[idx[k]];
    }
    r.thresholds.push_back(theta);
    r.tpr.push_back(tp / pos);
    r.fpr.push_back(fp / neg);
  }
  for (std::size_t k = 1; k < r.tpr.size(); ++k) {
    r.auc += 0.5 * (r.fpr[k] - r.fpr[k - 1]) * (r.tpr[k] + r.tpr[k - 1]);
  }
  return r;
}

std::size_t shd(std::size_t nodes, const std::vector<dag::Edge>& predicted, const std::vector<dag::Edge>& truth) {
  auto to_set = [nodes](const std::vector<dag::Edge>& edges) {
    std::set<std::pair<std::size_t, std::size_t>> s;
    for (const auto& e : edges) {
      if (e.from >= nodes || e.to >= nodes) throw DimensionError("edge refers to a node outside the graph");
      s.emplace(e.from, e.to);
    }
    return s;
  };
  const auto p = to_set(predicted);
  const auto t = to_set(truth);
  std::size_t d = 0;
  for (std::size_t u = 0; u < nodes; ++u)
    for (std::size_t v = u + 1; v < nodes; ++v) {
      const bool p_uv = p.count({u, v}) > 0;
      const bool p_vu = p.count({v, u}) > 0;
      const bool t_uv = t.count({u, v}) > 0;
      const bool t_vu = t.count({v, u}) > 0;
      if (p_uv != t_uv || p_vu != t_vu) ++d;
    }
  return d;
}

Histogram density_histogram(const std::vector<double>& values, std::size_t bins) {
  if (bins == 0) throw DomainError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  if (values.empty()) {
    for (std::size_t k = 0; k <= bins; ++k) h.edges.push_back(static_cast<double>(k) / static_cast<double>(bins));
    return h;
  }
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t k = 0; k <= bins; ++k) h.edges.push_back(lo + width * static_cast<double>(k));
  h.edges.back() = hi;
  for (double v : values) {
    auto k = static_cast<std::size_t>((v - lo) / width);
    h.counts[std::min(k, bins - 1)]++;
  }
  return h;
}

std::string histogram_csv(const Histogram& h) {
  std::ostringstream os;
  os << "bin_lo,bin_hi,count\n";
  char buf[96];
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu\n", h.edges[k], h.edges[k + 1], h.counts[k]);
    os << buf;
  }
  return os.str();
}

}  // namespace ganf::eval
