#include "ganf/data/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <sstream>

#include "ganf/core/errors.hpp"
#include "ganf/core/random.hpp"

namespace ganf::data {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

double parse_number(const std::string& s, const std::string& what, std::size_t line) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) {
    throw FormatError("line " + std::to_string(line) + ": cannot parse " + what + " '" + s + "'");
  }
  return v;
}

std::string format_number(double v) {
  char buf[64];
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    std::snprintf(buf, sizeof(buf), "%.0f", v);
  } else {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
  }
  return buf;
}

struct Reading {
  double time;
  std::vector<double> values;
};

}  // namespace

SeriesTable load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open data file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  const auto header = split_fields(strip_cr(line));
  if (header.size() < 3 || header[0] != "timestamp" || header[1] != "entity") {
    throw FormatError(path.string() + ": header must be timestamp,entity,attr_1,...,attr_D");
  }
  const std::size_t attrs = header.size() - 2;
  for (std::size_t a = 0; a < attrs; ++a) {
    if (header[a + 2] != "attr_" + std::to_string(a + 1)) {
      throw FormatError(path.string() + ": header column " + std::to_string(a + 3) + " must be attr_" +
                        std::to_string(a + 1) + ", got '" + header[a + 2] + "'");
    }
  }
  if (schema.expected_attrs && schema.expected_attrs != attrs) {
    throw FormatError(path.string() + ": expected " + std::to_string(schema.expected_attrs) + " attributes, found " +
                      std::to_string(attrs));
  }

  std::vector<std::string> order;
  std::map<std::string, std::vector<Reading>> readings;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != header.size()) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                        " fields, expected " + std::to_string(header.size()));
    }
    Reading r{parse_number(f[0], "timestamp", line_no), {}};
    for (std::size_t a = 0; a < attrs; ++a) r.values.push_back(parse_number(f[a + 2], "value", line_no));
    auto [it, inserted] = readings.try_emplace(f[1]);
    if (inserted) order.push_back(f[1]);
    auto& list = it->second;
    if (!list.empty() && !(r.time > list.back().time)) {
      throw FormatError(path.string() + ": timestamps of entity '" + f[1] + "' are not strictly increasing at line " +
                        std::to_string(line_no));
    }
    list.push_back(std::move(r));
  }
  if (order.empty()) throw FormatError(path.string() + ": no data rows");
  if (schema.expected_entities && schema.expected_entities != order.size()) {
    throw FormatError(path.string() + ": expected " + std::to_string(schema.expected_entities) +
                      " entities, found " + std::to_string(order.size()));
  }

  double t0 = readings[order[0]].front().time;
  double t1 = t0;
  double interval = 0.0;
  for (const auto& name : order) {
    const auto& list = readings[name];
    t0 = std::min(t0, list.front().time);
    t1 = std::max(t1, list.back().time);
    for (std::size_t k = 1; k < list.size(); ++k) {
      const double dt = list[k].time - list[k - 1].time;
      if (interval == 0.0 || dt < interval) interval = dt;
    }
  }
  if (interval == 0.0) interval = 1.0;

  SeriesTable table;
  table.entities = order;
  table.attrs = attrs;
  table.start_time = t0;
  table.interval = interval;
  table.length = static_cast<std::size_t>(std::llround((t1 - t0) / interval)) + 1;
  table.values.assign(table.entities.size() * table.length * attrs, 0.0);

  auto step_of = [&](double t, const std::string& name) {
    const double pos = (t - t0) / interval;
    const double rounded = std::round(pos);
    if (std::abs(pos - rounded) > 1e-6) {
      throw FormatError(path.string() + ": entity '" + name + "' has a reading off the uniform sampling grid");
    }
    return static_cast<std::size_t>(rounded);
  };

  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& list = readings[order[i]];
    std::size_t expected = 0;
    for (std::size_t k = 0; k <= list.size(); ++k) {
      const std::size_t step = k < list.size() ? step_of(list[k].time, order[i]) : table.length;
      if (k == 0 && step > 0) {
        throw FormatError(path.string() + ": entity '" + order[i] + "' is missing its first " + std::to_string(step) +
                          " readings");
      }
      const std::size_t gap = step - expected;
      if (gap > schema.max_gap) {
        throw FormatError(path.string() + ": entity '" + order[i] + "' has a gap of " + std::to_string(gap) +
                          " steps (limit " + std::to_string(schema.max_gap) + ")");
      }
      for (std::size_t t = expected; t < step; ++t) {
        for (std::size_t a = 0; a < attrs; ++a) table.at(i, t, a) = table.at(i, t - 1, a);
        ++table.imputed;
      }
      if (k == list.size()) break;
      for (std::size_t a = 0; a < attrs; ++a) table.at(i, step, a) = list[k].values[a];
      expected = step + 1;
    }
  }
  return table;
}

void write_csv(const std::filesystem::path& path, const SeriesTable& table) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "timestamp,entity";
  for (std::size_t a = 0; a < table.attrs; ++a) out << ",attr_" << a + 1;
  out << '\n';
  char buf[64];
  for (std::size_t t = 0; t < table.length; ++t) {
    const std::string ts = format_number(table.start_time + static_cast<double>(t) * table.interval);
    for (std::size_t i = 0; i < table.nodes(); ++i) {
      out << ts << ',' << table.entities[i];
      for (std::size_t a = 0; a < table.attrs; ++a) {
        std::snprintf(buf, sizeof(buf), "%.17g", table.at(i, t, a));
        out << ',' << buf;
      }
      out << '\n';
    }
  }
}

std::vector<MultiSeriesWindow> make_windows(const SeriesTable& table, std::size_t steps, std::size_t stride,
                                            std::size_t begin, std::size_t end) {
  end = std::min(end, table.length);
  if (steps == 0 || stride == 0) throw ContractError("window length and stride must be positive");
  if (begin > end || end - begin < steps) {
    throw ContractError("series segment of length " + std::to_string(end - begin) + " is shorter than window " +
                        std::to_string(steps));
  }
  const std::size_t count = (end - begin - steps) / stride + 1;
  std::vector<MultiSeriesWindow> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    MultiSeriesWindow w;
    w.nodes = table.nodes();
    w.steps = steps;
    w.attrs = table.attrs;
    w.start_index = begin + k * stride;
    w.entity_ids = table.entities;
    w.values.resize(w.nodes * steps * w.attrs);
    for (std::size_t i = 0; i < w.nodes; ++i)
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t a = 0; a < w.attrs; ++a) w.at(i, t, a) = table.at(i, w.start_index + t, a);
    out.push_back(std::move(w));
  }
  return out;
}

void NormalizationStats::apply(MultiSeriesWindow& w) const {
  if (w.nodes != nodes || w.attrs != attrs) {
    throw DimensionError("normalization statistics are for " + std::to_string(nodes) + " series x " +
                         std::to_string(attrs) + " attributes, window has " + std::to_string(w.nodes) + " x " +
                         std::to_string(w.attrs));
  }
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t a = 0; a < attrs; ++a) {
      const double m = mean[i * attrs + a];
      const double s = std[i * attrs + a];
      for (std::size_t t = 0; t < w.steps; ++t) w.at(i, t, a) = (w.at(i, t, a) - m) / s;
    }
}

NormalizationStats compute_stats(const std::vector<MultiSeriesWindow>& windows, const std::string& source) {
  if (windows.empty()) throw ContractError("cannot compute statistics without windows");
  NormalizationStats s;
  s.nodes = windows[0].nodes;
  s.attrs = windows[0].attrs;
  s.source = source;
  s.mean.assign(s.nodes * s.attrs, 0.0);
  s.std.assign(s.nodes * s.attrs, 0.0);
  const double count = static_cast<double>(windows.size() * windows[0].steps);
  for (const auto& w : windows)
    for (std::size_t i = 0; i < s.nodes; ++i)
      for (std::size_t t = 0; t < w.steps; ++t)
        for (std::size_t a = 0; a < s.attrs; ++a) s.mean[i * s.attrs + a] += w.at(i, t, a);
  for (double& m : s.mean) m /= count;
  for (const auto& w : windows)
    for (std::size_t i = 0; i < s.nodes; ++i)
      for (std::size_t t = 0; t < w.steps; ++t)
        for (std::size_t a = 0; a < s.attrs; ++a) {
          const double d = w.at(i, t, a) - s.mean[i * s.attrs + a];
          s.std[i * s.attrs + a] += d * d;
        }
  for (std::size_t k = 0; k < s.std.size(); ++k) {
    s.std[k] = std::sqrt(s.std[k] / count);
    if (s.std[k] < kStdFloor) {
      s.std[k] = kStdFloor;
      s.flagged.emplace_back(k / s.attrs, k % s.attrs);
    }
  }
  return s;
}

DatasetSplit chronological_split(const SeriesTable& table, std::size_t steps, std::size_t train_stride,
                                 std::size_t eval_stride, const SplitFractions& fractions) {
  if (!(fractions.train > 0.0) || !(fractions.validation > 0.0) || fractions.train + fractions.validation >= 1.0) {
    throw ContractError("split fractions must be positive and leave room for a test segment");
  }
  DatasetSplit split;
  const auto len = static_cast<double>(table.length);
  split.boundaries[0] = 0;
  split.boundaries[1] = static_cast<std::size_t>(std::floor(len * fractions.train));
  split.boundaries[2] = static_cast<std::size_t>(std::floor(len * (fractions.train + fractions.validation)));
  split.boundaries[3] = table.length;
  split.train = make_windows(table, steps, train_stride, split.boundaries[0], split.boundaries[1]);
  split.validation = make_windows(table, steps, train_stride, split.boundaries[1], split.boundaries[2]);
  split.test = make_windows(table, steps, eval_stride, split.boundaries[2], split.boundaries[3]);
  return split;
}

DatasetSplit normalize(DatasetSplit split) {
  split.stats = compute_stats(split.train, "train");
  for (auto* part : {&split.train, &split.validation, &split.test})
    for (auto& w : *part) split.stats.apply(w);
  split.normalized = true;
  return split;
}

std::string to_string(AnomalyKind kind) { return kind == AnomalyKind::kSpike ? "spike" : "level-shift"; }

AnomalyKind anomaly_kind_from_string(const std::string& s) {
  if (s == "spike") return AnomalyKind::kSpike;
  if (s == "level-shift" || s == "level_shift") return AnomalyKind::kLevelShift;
  throw ConfigError("anomaly_kind", "unknown anomaly kind '" + s + "'");
}

namespace {

std::size_t anomaly_count(double rate, std::size_t windows) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(windows) + 1e-9));
}

std::vector<SynthEdge> draw_graph(const SynthSpec& spec, core::Rng& rng) {
  std::vector<std::size_t> order(spec.nodes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<SynthEdge> edges;
  for (std::size_t q = 0; q < spec.nodes; ++q)
    for (std::size_t p = 0; p < q; ++p)
      if (rng.uniform(0.0, 1.0) < spec.edge_prob) {
        const double mag = rng.uniform(spec.weight_min, spec.weight_max);
        edges.push_back({order[p], order[q], rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag});
      }
  return edges;
}

std::vector<std::size_t> validate_graph(const SynthSpec& spec, const std::vector<SynthEdge>& edges) {
  std::vector<std::size_t> indegree(spec.nodes, 0);
  std::vector<std::vector<std::size_t>> children(spec.nodes);
  for (const auto& e : edges) {
    if (e.from >= spec.nodes || e.to >= spec.nodes) throw ContractError("graph edge refers to a missing node");
    if (e.from == e.to) throw ContractError("graph spec contains a self-loop on node " + std::to_string(e.from));
    children[e.from].push_back(e.to);
    ++indegree[e.to];
  }
  std::vector<std::size_t> ready;
  for (std::size_t i = spec.nodes; i-- > 0;)
    if (indegree[i] == 0) ready.push_back(i);
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t v = ready.back();
    ready.pop_back();
    order.push_back(v);
    for (std::size_t c : children[v])
      if (--indegree[c] == 0) ready.push_back(c);
  }
  if (order.size() != spec.nodes) throw ContractError("graph spec is cyclic");
  return order;
}

}  // namespace

SynthResult synth_generate(const SynthSpec& spec, std::size_t length, std::uint64_t seed) {
  if (spec.nodes == 0 || spec.attrs == 0) throw ContractError("synthetic spec needs at least one node and attribute");
  if (!(spec.noise_std > 0.0)) throw ContractError("noise_std must be positive");
  if (spec.anomaly_rate < 0.0 || spec.anomaly_rate >= 1.0) throw ContractError("anomaly_rate must lie in [0, 1)");
  if (spec.window == 0 || length < spec.window) throw ContractError("length must cover at least one window");

  core::Rng rng(seed);
  const std::vector<SynthEdge> edges = spec.edges.empty() ? draw_graph(spec, rng) : spec.edges;
  const std::vector<std::size_t> order = validate_graph(spec, edges);

  SynthResult result;
  result.ground_truth = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.nodes),
                                              static_cast<Eigen::Index>(spec.nodes));
  for (const auto& e : edges) result.ground_truth(static_cast<Eigen::Index>(e.to), static_cast<Eigen::Index>(e.from)) = e.weight;

  SeriesTable& table = result.series;
  for (std::size_t i = 0; i < spec.nodes; ++i) table.entities.push_back("s" + std::to_string(i));
  table.length = length;
  table.attrs = spec.attrs;
  table.values.assign(spec.nodes * length * spec.attrs, 0.0);

  constexpr std::size_t kBurnIn = 200;
  std::vector<double> prev(spec.nodes * spec.attrs, 0.0);
  std::vector<double> cur(spec.nodes * spec.attrs, 0.0);
  for (std::size_t t = 0; t < length + kBurnIn; ++t) {
    for (std::size_t i : order) {
      for (std::size_t a = 0; a < spec.attrs; ++a) {
        double v = spec.ar * prev[i * spec.attrs + a] + rng.normal(0.0, spec.noise_std);
        for (const auto& e : edges)
          if (e.to == i) v += e.weight * cur[e.from * spec.attrs + a];
        cur[i * spec.attrs + a] = v;
      }
    }
    if (t >= kBurnIn)
      for (std::size_t i = 0; i < spec.nodes; ++i)
        for (std::size_t a = 0; a < spec.attrs; ++a) table.at(i, t - kBurnIn, a) = cur[i * spec.attrs + a];
    prev = cur;
  }

  auto windows = make_windows(table, spec.window, spec.window);
  InjectionResult injected = inject_anomalies(std::move(windows), spec, rng.next());
  for (std::size_t k = 0; k < injected.windows.size(); ++k) {
    const auto& w = injected.windows[k];
    result.labels.push_back({w.start_index, injected.labels[k]});
    if (!injected.labels[k]) continue;
    for (std::size_t i = 0; i < w.nodes; ++i)
      for (std::size_t t = 0; t < w.steps; ++t)
        for (std::size_t a = 0; a < w.attrs; ++a) table.at(i, w.start_index + t, a) = w.at(i, t, a);
  }
  return result;
}

InjectionResult inject_anomalies(std::vector<MultiSeriesWindow> windows, const SynthSpec& spec, std::uint64_t seed) {
  if (spec.anomaly_rate < 0.0 || spec.anomaly_rate >= 1.0) throw ContractError("anomaly_rate must lie in [0, 1)");
  InjectionResult out;
  out.labels.assign(windows.size(), 0);
  out.nodes.assign(windows.size(), -1);
  const std::size_t count = anomaly_count(spec.anomaly_rate, windows.size());
  if (count > 0) {
    core::Rng rng(seed);
    std::vector<std::size_t> idx(windows.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    const double shift = spec.anomaly_magnitude * spec.noise_std;
    for (std::size_t k : idx) {
      auto& w = windows[k];
      const std::size_t node = rng.index(w.nodes);
      const std::size_t step = rng.index(w.steps);
      for (std::size_t t = 0; t < w.steps; ++t) {
        if (spec.anomaly_kind == AnomalyKind::kSpike && t != step) continue;
        for (std::size_t a = 0; a < w.attrs; ++a) w.at(node, t, a) += shift;
      }
      out.labels[k] = 1;
      out.nodes[k] = static_cast<int>(node);
    }
  }
  out.windows = std::move(windows);
  return out;
}

void write_labels(const std::filesystem::path& path, const std::vector<WindowLabel>& labels) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "window_start,label\n";
  for (const auto& l : labels) out << l.window_start << ',' << l.label << '\n';
}

std::vector<WindowLabel> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open labels file " + path.string());
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "window_start,label") {
    throw FormatError(path.string() + ": header must be window_start,label");
  }
  std::vector<WindowLabel> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 2) throw FormatError(path.string() + ": line " + std::to_string(line_no) + " needs 2 fields");
    const double start = parse_number(f[0], "window_start", line_no);
    const double label = parse_number(f[1], "label", line_no);
    if (label != 0.0 && label != 1.0) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + " label must be 0 or 1");
    }
    out.push_back({static_cast<std::size_t>(start), static_cast<int>(label)});
  }
  return out;
}

std::string ground_truth_json(const SynthResult& result, const SynthSpec& spec) {
  nlohmann::json j;
  j["nodes"] = result.series.entities;
  j["edges"] = nlohmann::json::array();
  const auto& a = result.ground_truth;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index jdx = 0; jdx < a.cols(); ++jdx)
      if (a(i, jdx) != 0.0) {
        j["edges"].push_back({{"from", result.series.entities[static_cast<std::size_t>(jdx)]},
                              {"to", result.series.entities[static_cast<std::size_t>(i)]},
                              {"weight", a(i, jdx)}});
      }
  j["ar"] = spec.ar;
  j["noise_std"] = spec.noise_std;
  return j.dump(2);
}

SynthSpec synth_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  SynthSpec s;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key, std::string("synthetic spec field '") + key + "' has the wrong type");
    }
  };
  get("nodes", s.nodes);
  get("attrs", s.attrs);
  get("length", s.length);
  get("window", s.window);
  get("edge_prob", s.edge_prob);
  get("weight_min", s.weight_min);
  get("weight_max", s.weight_max);
  get("ar", s.ar);
  get("noise_std", s.noise_std);
  get("anomaly_rate", s.anomaly_rate);
  get("anomaly_magnitude", s.anomaly_magnitude);
  get("seed", s.seed);
  if (j.contains("anomaly_kind")) s.anomaly_kind = anomaly_kind_from_string(j.at("anomaly_kind").get<std::string>());
  if (j.contains("edges")) {
    for (const auto& e : j.at("edges")) {
      s.edges.push_back({e.at("from").get<std::size_t>(), e.at("to").get<std::size_t>(), e.at("weight").get<double>()});
    }
  }
  return s;
}

std::string synth_spec_to_json(const SynthSpec& s) {
  nlohmann::json j{{"nodes", s.nodes},
                   {"attrs", s.attrs},
                   {"length", s.length},
                   {"window", s.window},
                   {"edge_prob", s.edge_prob},
                   {"weight_min", s.weight_min},
                   {"weight_max", s.weight_max},
                   {"ar", s.ar},
                   {"noise_std", s.noise_std},
                   {"anomaly_rate", s.anomaly_rate},
                   {"anomaly_magnitude", s.anomaly_magnitude},
                   {"anomaly_kind", to_string(s.anomaly_kind)},
                   {"seed", s.seed}};
  j["edges"] = nlohmann::json::array();
  for (const auto& e : s.edges) j["edges"].push_back({{"from", e.from}, {"to", e.to}, {"weight", e.weight}});
  return j.dump(2);
}

}  // namespace ganf::data
