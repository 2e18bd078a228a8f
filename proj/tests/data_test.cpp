#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ganf/core/errors.hpp"
#include "ganf/core/random.hpp"
#include "ganf/dag/dag.hpp"
#include "ganf/data/data.hpp"

using namespace ganf;
using namespace ganf::data;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path dir = fs::temp_directory_path() / "ganf_data_test";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

SeriesTable ramp(std::size_t n, std::size_t length, std::size_t attrs) {
  SeriesTable t;
  for (std::size_t i = 0; i < n; ++i) t.entities.push_back("e" + std::to_string(i));
  t.length = length;
  t.attrs = attrs;
  t.values.resize(n * length * attrs);
  for (std::size_t k = 0; k < t.values.size(); ++k) t.values[k] = static_cast<double>(k);
  return t;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("long-format CSV becomes a dense table") {
    std::string text = "timestamp,entity,attr_1,attr_2\n";
    for (int t = 0; t < 4; ++t)
      for (const char* e : {"a", "b", "c"})
        text += std::to_string(10 + 5 * t) + "," + e + "," + std::to_string(t) + ".5," + std::to_string(-t) + "\n";
    const SeriesTable table = load_csv(write_file("dense.csv", text));
    CHECK(table.nodes() == 3);
    CHECK(table.length == 4);
    CHECK(table.attrs == 2);
    CHECK(table.entities == std::vector<std::string>{"a", "b", "c"});
    CHECK(table.interval == 5.0);
    CHECK(table.at(1, 2, 0) == 2.5);
    CHECK(table.at(2, 3, 1) == -3.0);
    CHECK(table.imputed == 0);

    const fs::path copy = write_file("copy.csv", "");
    write_csv(copy, table);
    const SeriesTable back = load_csv(copy);
    CHECK(back.values == table.values);
  }

  TEST_CASE("short gaps are filled forward") {
    const std::string text =
        "timestamp,entity,attr_1\n0,a,1\n0,b,7\n1,a,2\n1,b,8\n2,b,9\n3,b,10\n4,a,5\n4,b,11\n";
    const SeriesTable table = load_csv(write_file("gap.csv", text));
    CHECK(table.length == 5);
    CHECK(table.at(0, 2, 0) == 2.0);
    CHECK(table.at(0, 3, 0) == 2.0);
    CHECK(table.at(0, 4, 0) == 5.0);
    CHECK(table.imputed == 2);
    CsvSchema strict;
    strict.max_gap = 1;
    CHECK_THROWS_WITH_AS(load_csv(write_file("gap.csv", text), strict), doctest::Contains("entity 'a' has a gap"),
                         FormatError);
  }

  TEST_CASE("malformed CSV is reported with its location") {
    CHECK_THROWS_WITH_AS(load_csv(write_file("order.csv", "timestamp,entity,attr_1\n0,a,1\n2,a,1\n1,a,3\n")),
                         doctest::Contains("entity 'a' are not strictly increasing"), FormatError);
    CHECK_THROWS_AS(load_csv(write_file("header.csv", "time,id,x\n0,a,1\n")), FormatError);
    CHECK_THROWS_WITH_AS(load_csv(write_file("value.csv", "timestamp,entity,attr_1\n0,a,abc\n")),
                         doctest::Contains("line 2"), FormatError);
    CsvSchema two;
    two.expected_entities = 2;
    CHECK_THROWS_AS(load_csv(write_file("one.csv", "timestamp,entity,attr_1\n0,a,1\n1,a,2\n"), two), FormatError);
    CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), FormatError);
  }

  TEST_CASE("window counts") {
    const SeriesTable t = ramp(2, 10, 1);
    CHECK(make_windows(t, 5, 5).size() == 2);
    CHECK(make_windows(t, 5, 1).size() == 6);
    CHECK(make_windows(t, 4, 3).size() == 3);
    CHECK(make_windows(t, 10, 1).size() == 1);
    CHECK_THROWS_AS(make_windows(t, 11, 1), ContractError);
    CHECK_THROWS_AS(make_windows(t, 5, 0), ContractError);
  }

  TEST_CASE("windows copy the table without loss") {
    const SeriesTable t = ramp(3, 23, 2);
    for (std::size_t stride : {1u, 4u, 7u}) {
      for (const auto& w : make_windows(t, 6, stride)) {
        CHECK(w.start_index % stride == 0);
        CHECK(w.entity_ids == t.entities);
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t s = 0; s < 6; ++s)
            for (std::size_t a = 0; a < 2; ++a) CHECK(w.at(i, s, a) == t.at(i, w.start_index + s, a));
      }
    }
  }

  TEST_CASE("normalization statistics") {
    core::Rng rng(1);
    SeriesTable t = ramp(3, 200, 2);
    for (double& v : t.values) v = rng.normal(4.0, 3.0);
    for (std::size_t s = 0; s < 200; ++s) t.at(1, s, 1) = 2.0;
    const auto windows = make_windows(t, 20, 20);
    const NormalizationStats stats = compute_stats(windows, "train");
    CHECK(stats.source == "train");
    REQUIRE(stats.flagged.size() == 1);
    CHECK(stats.flagged[0] == std::pair<std::size_t, std::size_t>{1, 1});
    CHECK(stats.std[1 * 2 + 1] == kStdFloor);

    auto normalized = windows;
    for (auto& w : normalized) stats.apply(w);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t a = 0; a < 2; ++a) {
        if (i == 1 && a == 1) continue;
        double sum = 0.0;
        double sq = 0.0;
        for (const auto& w : normalized)
          for (std::size_t s = 0; s < 20; ++s) {
            sum += w.at(i, s, a);
            sq += w.at(i, s, a) * w.at(i, s, a);
          }
        CHECK(std::abs(sum / 200.0) < 1e-10);
        CHECK(std::abs(sq / 200.0 - 1.0) < 1e-10);
      }

    NormalizationStats unit;
    unit.nodes = 3;
    unit.attrs = 2;
    unit.mean.assign(6, 0.0);
    unit.std.assign(6, 1.0);
    auto same = windows[0];
    unit.apply(same);
    CHECK(same.values == windows[0].values);
    auto wrong = make_windows(ramp(2, 20, 2), 20, 20)[0];
    CHECK_THROWS_AS(unit.apply(wrong), DimensionError);
  }

  TEST_CASE("chronological split uses train statistics only") {
    SeriesTable t = ramp(2, 100, 1);
    const DatasetSplit split = normalize(chronological_split(t, 10, 10, 1));
    CHECK(split.boundaries[1] == 60);
    CHECK(split.boundaries[2] == 80);
    CHECK(split.train.size() == 6);
    CHECK(split.validation.size() == 2);
    CHECK(split.test.size() == 11);
    CHECK(split.test.front().start_index == 80);
    CHECK(split.stats.source == "train");
    CHECK(split.stats.mean[0] == doctest::Approx(29.5));
    CHECK_THROWS_AS(chronological_split(t, 10, 10, 1, {0.7, 0.3}), ContractError);
  }

  TEST_CASE("independent series have the stationary AR(1) spread") {
    SynthSpec spec;
    spec.nodes = 3;
    spec.edge_prob = 0.0;
    const auto r = synth_generate(spec, 20000, 5);
    CHECK(r.ground_truth.cwiseAbs().maxCoeff() == 0.0);
    const double expected = 1.0 / std::sqrt(1.0 - spec.ar * spec.ar);
    for (std::size_t i = 0; i < 3; ++i) {
      double sum = 0.0;
      double sq = 0.0;
      for (std::size_t t = 0; t < 20000; ++t) {
        sum += r.series.at(i, t, 0);
        sq += r.series.at(i, t, 0) * r.series.at(i, t, 0);
      }
      const double mean = sum / 20000.0;
      const double std = std::sqrt(sq / 20000.0 - mean * mean);
      CHECK(std::abs(std / expected - 1.0) < 0.05);
    }
  }

  TEST_CASE("least squares recovers the structural weights") {
    SynthSpec spec;
    spec.nodes = 5;
    const auto r = synth_generate(spec, 20000, 0);
    const auto& truth = r.ground_truth;
    CHECK(std::abs(dag::acyclicity(truth)) < 1e-12);
    const std::size_t n = 5;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> parents;
      for (std::size_t j = 0; j < n; ++j)
        if (truth(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) != 0.0) parents.push_back(j);
      const auto rows = static_cast<Eigen::Index>(19999);
      Eigen::MatrixXd x(rows, static_cast<Eigen::Index>(parents.size() + 1));
      Eigen::VectorXd y(rows);
      for (Eigen::Index t = 0; t < rows; ++t) {
        const auto s = static_cast<std::size_t>(t + 1);
        y(t) = r.series.at(i, s, 0);
        x(t, 0) = r.series.at(i, s - 1, 0);
        for (std::size_t p = 0; p < parents.size(); ++p)
          x(t, static_cast<Eigen::Index>(p + 1)) = r.series.at(parents[p], s, 0);
      }
      const Eigen::VectorXd beta = x.colPivHouseholderQr().solve(y);
      CHECK(std::abs(beta(0) - spec.ar) < 0.05);
      for (std::size_t p = 0; p < parents.size(); ++p)
        CHECK(std::abs(beta(static_cast<Eigen::Index>(p + 1)) -
                       truth(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(parents[p]))) < 0.05);
    }
  }

  TEST_CASE("anomaly labels") {
    SynthSpec spec;
    spec.nodes = 4;
    spec.anomaly_rate = 0.05;
    const auto r = synth_generate(spec, 20000, 2);
    REQUIRE(r.labels.size() == 1000);
    std::size_t positives = 0;
    for (std::size_t k = 0; k < r.labels.size(); ++k) {
      CHECK(r.labels[k].window_start == k * spec.window);
      positives += static_cast<std::size_t>(r.labels[k].label);
    }
    CHECK(positives == 50);

    spec.anomaly_rate = 0.0;
    std::size_t none = 0;
    for (const auto& l : synth_generate(spec, 20000, 2).labels) none += static_cast<std::size_t>(l.label);
    CHECK(none == 0);

    spec.anomaly_rate = 1.0;
    CHECK_THROWS_AS(synth_generate(spec, 2000, 2), ContractError);
  }

  TEST_CASE("injection perturbs one node of each chosen window") {
    SynthSpec spec;
    spec.nodes = 4;
    spec.anomaly_rate = 0.1;
    auto clean = make_windows(synth_generate(spec, 4000, 3).series, 20, 20);
    for (auto kind : {AnomalyKind::kSpike, AnomalyKind::kLevelShift}) {
      spec.anomaly_kind = kind;
      const auto r = inject_anomalies(clean, spec, 9);
      std::size_t count = 0;
      for (std::size_t k = 0; k < clean.size(); ++k) {
        std::size_t changed_steps = 0;
        for (std::size_t i = 0; i < 4; ++i)
          for (std::size_t t = 0; t < 20; ++t) {
            const double delta = r.windows[k].at(i, t, 0) - clean[k].at(i, t, 0);
            if (delta == 0.0) continue;
            CHECK(static_cast<int>(i) == r.nodes[k]);
            CHECK(delta == doctest::Approx(10.0));
            ++changed_steps;
          }
        if (r.labels[k]) {
          ++count;
          CHECK(changed_steps == (kind == AnomalyKind::kSpike ? 1u : 20u));
        } else {
          CHECK(changed_steps == 0);
          CHECK(r.nodes[k] == -1);
        }
      }
      CHECK(count == 20);
    }
  }

  TEST_CASE("generation is deterministic") {
    SynthSpec spec;
    spec.anomaly_rate = 0.05;
    const auto a = synth_generate(spec, 3000, 4);
    const auto b = synth_generate(spec, 3000, 4);
    const auto c = synth_generate(spec, 3000, 5);
    CHECK(a.series.values == b.series.values);
    CHECK(a.ground_truth == b.ground_truth);
    CHECK(a.series.values != c.series.values);
  }

  TEST_CASE("explicit graphs are validated") {
    SynthSpec spec;
    spec.nodes = 3;
    spec.edges = {{0, 1, 0.9}, {1, 2, -0.8}};
    const auto r = synth_generate(spec, 500, 0);
    CHECK(r.ground_truth(1, 0) == 0.9);
    CHECK(r.ground_truth(2, 1) == -0.8);
    spec.edges.push_back({2, 0, 0.5});
    CHECK_THROWS_WITH_AS(synth_generate(spec, 500, 0), "graph spec is cyclic", ContractError);
    spec.edges = {{1, 1, 0.5}};
    CHECK_THROWS_AS(synth_generate(spec, 500, 0), ContractError);
  }

  TEST_CASE("spec and labels round-trip") {
    SynthSpec spec;
    spec.nodes = 7;
    spec.anomaly_kind = AnomalyKind::kLevelShift;
    spec.edges = {{0, 3, 0.85}};
    const SynthSpec back = synth_spec_from_json(synth_spec_to_json(spec));
    CHECK(back.nodes == 7);
    CHECK(back.anomaly_kind == AnomalyKind::kLevelShift);
    REQUIRE(back.edges.size() == 1);
    CHECK(back.edges[0].to == 3);
    CHECK_THROWS_AS(synth_spec_from_json("{\"nodes\": \"five\"}"), ConfigError);
    CHECK_THROWS_AS(synth_spec_from_json("{"), FormatError);

    const std::vector<WindowLabel> labels{{0, 0}, {20, 1}, {40, 0}};
    const fs::path p = write_file("labels.csv", "");
    write_labels(p, labels);
    const auto read = load_labels(p);
    REQUIRE(read.size() == 3);
    CHECK(read[1].window_start == 20);
    CHECK(read[1].label == 1);
    CHECK_THROWS_AS(load_labels(write_file("bad_labels.csv", "window_start,label\n0,2\n")), FormatError);
  }
}
