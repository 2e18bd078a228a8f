#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ganf/core/errors.hpp"
#include "ganf/core/ops.hpp"
#include "ganf/model/model.hpp"
#include "support.hpp"

using namespace ganf;
using namespace ganf::model;
using core::Tensor;

namespace {

data::MultiSeriesWindow random_window(std::size_t n, std::size_t steps, std::size_t attrs, core::Rng& rng,
                                      std::size_t start = 0) {
  data::MultiSeriesWindow w;
  w.nodes = n;
  w.steps = steps;
  w.attrs = attrs;
  w.start_index = start;
  w.values.resize(n * steps * attrs);
  for (double& v : w.values) v = rng.normal();
  return w;
}

ModelConfig tiny(std::size_t n, std::size_t attrs, Mode mode, std::uint64_t seed = 1) {
  ModelConfig c;
  c.nodes = n;
  c.attrs = attrs;
  c.hidden = 8;
  c.flow_hidden = 8;
  c.flow_blocks = 2;
  c.mode = mode;
  c.identity_init = false;
  c.seed = seed;
  return c;
}

void set_adjacency(GanfModel& m, std::initializer_list<double> values) {
  Tensor a = m.adjacency();
  std::copy(values.begin(), values.end(), a.mutable_values().begin());
}

// Copies every array except A from `from` into `to` (matching names and sizes).
void copy_shared(const GanfModel& from, GanfModel& to) {
  const auto src = from.parameters();
  for (auto& p : to.parameters()) {
    if (p.name == "A") continue;
    for (const auto& q : src)
      if (q.name == p.name) std::copy(q.tensor.values().begin(), q.tensor.values().end(), p.tensor.mutable_values().begin());
  }
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("single step through an identity flow is the base log-pdf") {
    ModelConfig c;
    c.nodes = 1;
    c.attrs = 1;
    const GanfModel m(c);
    data::MultiSeriesWindow w;
    w.nodes = 1;
    w.steps = 1;
    w.attrs = 1;
    w.values = {0.0};
    CHECK(m.log_density(w).total == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
  }

  TEST_CASE("total matches a step-by-step reference") {
    core::Rng rng(2);
    GanfModel m(tiny(3, 2, Mode::kGraph));
    set_adjacency(m, {0, 0.4, -0.3, 0.8, 0, 0.2, -0.6, 0.5, 0});
    const auto w = random_window(3, 4, 2, rng);
    const auto ref = ganf::testing::reference_encoding(
        m.cell(), m.dependency_encoder(), 3, 4, 2, [&](std::size_t i, std::size_t t, std::size_t q) { return w.at(i, t, q); },
        ganf::testing::as_matrix(m.adjacency()));
    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t t = 0; t < 4; ++t) {
        const Tensor x({1, 2}, std::vector<double>{w.at(i, t, 0), w.at(i, t, 1)});
        const Eigen::VectorXd& d = ref.d[i][t];
        const Tensor cond({1, 8}, std::vector<double>(d.data(), d.data() + 8));
        total += m.flow().log_prob(x, cond).item();
      }
    CHECK(std::abs(m.log_density(w).total - total) < 1e-10);
  }

  TEST_CASE("report is additive") {
    core::Rng rng(3);
    GanfModel m(tiny(4, 2, Mode::kGraph));
    const auto r = m.log_density(random_window(4, 6, 2, rng));
    double series = 0.0;
    double steps = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      series += r.per_series[i];
      double row = 0.0;
      for (double v : r.per_step[i]) row += v;
      CHECK(std::abs(row - r.per_series[i]) < 1e-10);
      steps += row;
    }
    CHECK(std::abs(series - r.total) < 1e-10);
    CHECK(std::abs(steps - r.total) < 1e-10);
  }

  TEST_CASE("no-graph density factorizes over series") {
    core::Rng rng(4);
    const GanfModel pair(tiny(2, 1, Mode::kNoGraph));
    GanfModel single(tiny(1, 1, Mode::kNoGraph, 99));
    copy_shared(pair, single);
    const auto w = random_window(2, 5, 1, rng);
    double separate = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      auto one = random_window(1, 5, 1, rng);
      for (std::size_t t = 0; t < 5; ++t) one.at(0, t, 0) = w.at(i, t, 0);
      separate += single.log_density(one).total;
    }
    CHECK(std::abs(pair.log_density(w).total - separate) < 1e-12);
  }

  TEST_CASE("no-graph report of a node ignores the other series") {
    core::Rng rng(5);
    const GanfModel m(tiny(3, 1, Mode::kNoGraph));
    const auto w = random_window(3, 5, 1, rng);
    auto shuffled = w;
    for (std::size_t t = 0; t < 5; ++t) {
      shuffled.at(1, t, 0) = w.at(2, 4 - t, 0);
      shuffled.at(2, t, 0) = w.at(1, t, 0) * 3.0;
    }
    CHECK(m.log_density(w).per_series[0] == m.log_density(shuffled).per_series[0]);
  }

  TEST_CASE("graph mode with A = 0 equals no-graph mode") {
    core::Rng rng(6);
    GanfModel graph(tiny(3, 2, Mode::kGraph));
    GanfModel free(tiny(3, 2, Mode::kNoGraph, 123));
    set_adjacency(graph, {0, 0, 0, 0, 0, 0, 0, 0, 0});
    copy_shared(graph, free);
    const auto w = random_window(3, 4, 2, rng);
    const auto a = graph.log_density(w);
    const auto b = free.log_density(w);
    CHECK(a.total == b.total);
    CHECK(a.per_series == b.per_series);
  }

  TEST_CASE("batched scoring equals one-at-a-time scoring") {
    core::Rng rng(7);
    const GanfModel m(tiny(3, 1, Mode::kGraph));
    std::vector<data::MultiSeriesWindow> ws;
    for (std::size_t k = 0; k < 70; ++k) ws.push_back(random_window(3, 5, 1, rng, k));
    for (unsigned threads : {1u, 3u}) {
      const auto batch = m.log_density(ws, threads);
      for (std::size_t k = 0; k < ws.size(); ++k) CHECK(std::abs(batch[k].total - m.log_density(ws[k]).total) < 1e-10);
    }
  }

  TEST_CASE("scores are negated densities") {
    core::Rng rng(8);
    const GanfModel m(tiny(3, 2, Mode::kGraph));
    const auto w = random_window(3, 4, 2, rng);
    const auto r = m.log_density(w);
    CHECK(m.anomaly_score(w) == -r.total);
    const auto per = m.per_series_scores(w);
    double sum = 0.0;
    for (double s : per) sum += s;
    CHECK(std::abs(sum - m.anomaly_score(w)) < 1e-10);

    const GanfModel one(tiny(1, 2, Mode::kGraph));
    const auto w1 = random_window(1, 4, 2, rng);
    REQUIRE(one.per_series_scores(w1).size() == 1);
    CHECK(one.per_series_scores(w1)[0] == one.anomaly_score(w1));
  }

  TEST_CASE("full-chain mode runs one flow over the concatenated attributes") {
    core::Rng rng(9);
    const GanfModel m(tiny(3, 2, Mode::kFullChain));
    CHECK(m.flow().config().dim == 6);
    CHECK(m.adjacency().numel() == 1);
    CHECK_FALSE(m.adjacency_trainable());
    const auto r = m.log_density(random_window(3, 4, 2, rng));
    REQUIRE(r.per_series.size() == 1);
    CHECK(r.per_series[0] == r.total);
  }

  TEST_CASE("adjacency initialization and parameter listing") {
    const GanfModel g(tiny(4, 1, Mode::kGraph));
    const auto params = g.parameters();
    CHECK(params.front().name == "A");
    CHECK(g.trainable().front().name == "A");
    for (std::size_t i = 0; i < 4; ++i) CHECK(g.adjacency().values()[i * 4 + i] == 0.0);
    for (std::size_t k = 0; k < 16; ++k) CHECK(std::abs(g.adjacency().values()[k]) <= 0.1);
    CHECK(g.adjacency().requires_grad());

    const GanfModel free(tiny(4, 1, Mode::kNoGraph));
    for (double v : free.adjacency().values()) CHECK(v == 0.0);
    CHECK(free.trainable().front().name != "A");
    CHECK(free.trainable().size() + 1 == free.parameters().size());
  }

  TEST_CASE("remask keeps the diagonal at zero") {
    GanfModel g(tiny(3, 1, Mode::kGraph));
    set_adjacency(g, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    g.remask_adjacency();
    const auto v = g.adjacency().values();
    CHECK(v[0] == 0.0);
    CHECK(v[4] == 0.0);
    CHECK(v[8] == 0.0);
    CHECK(v[1] == 2.0);
  }

  TEST_CASE("input errors name the problem") {
    core::Rng rng(10);
    const GanfModel m(tiny(3, 1, Mode::kGraph));
    CHECK_THROWS_AS(m.log_density(random_window(4, 3, 1, rng)), DimensionError);
    CHECK_THROWS_AS(m.log_density(random_window(3, 3, 2, rng)), DimensionError);
    auto w = random_window(3, 3, 1, rng, 17);
    w.at(2, 1, 0) = INFINITY;
    CHECK_THROWS_WITH_AS(m.log_density(w), "non-finite input in window 17 at series 2, step 1", NumericError);
    CHECK_THROWS_AS(mode_from_string("dense"), ConfigError);
  }

  TEST_CASE("config round-trips through JSON") {
    ModelConfig c = tiny(3, 2, Mode::kFullChain, 42);
    c.entities = {"x", "y", "z"};
    c.flow_kind = flow::BlockKind::kCoupling;
    const ModelConfig back = config_from_json(config_to_json(c));
    CHECK(back.nodes == 3);
    CHECK(back.attrs == 2);
    CHECK(back.mode == Mode::kFullChain);
    CHECK(back.flow_kind == flow::BlockKind::kCoupling);
    CHECK(back.seed == 42);
    CHECK(back.entities == c.entities);
    CHECK_THROWS_AS(config_from_json("{\"nodes\": 2}"), FormatError);
  }

  TEST_CASE("batch NLL gradient with respect to A matches finite differences") {
    core::Rng rng(11);
    GanfModel m(tiny(3, 1, Mode::kGraph));
    std::vector<data::MultiSeriesWindow> ws{random_window(3, 4, 1, rng), random_window(3, 4, 1, rng)};
    const auto batch = make_batch(ws, 0, 2);
    Tensor a = m.adjacency();
    core::Tape tape;
    Tensor loss;
    {
      core::TapeGuard guard(tape);
      loss = m.batch_nll(batch);
    }
    tape.backward(loss);
    const std::vector<double> analytic(a.grad().begin(), a.grad().end());
    core::NoTapeGuard off;
    const auto numeric = ganf::testing::numeric_grad(a, [&] { return m.batch_nll(batch).item(); });
    CHECK(ganf::testing::rel_err(analytic, numeric) < 1e-4);
    for (std::size_t i = 0; i < 3; ++i) CHECK(analytic[i * 3 + i] == 0.0);
  }
}
