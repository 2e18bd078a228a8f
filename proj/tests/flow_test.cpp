#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "ganf/core/errors.hpp"
#include "ganf/core/ops.hpp"
#include "ganf/flow/flow.hpp"

using namespace ganf;
using namespace ganf::flow;
using core::Tensor;

namespace {

FlowConfig config(BlockKind kind, std::size_t dim, std::size_t blocks, bool identity) {
  FlowConfig c;
  c.kind = kind;
  c.dim = dim;
  c.cond_dim = 3;
  c.hidden = 16;
  c.blocks = blocks;
  c.identity_init = identity;
  return c;
}

Tensor random_rows(std::size_t rows, std::size_t cols, core::Rng& rng, double spread = 1.5) {
  Tensor t({rows, cols});
  for (double& v : t.mutable_values()) v = rng.normal(0.0, spread);
  return t;
}

Tensor param(const FlowStack& s, const std::string& name) {
  for (const auto& p : s.parameters())
    if (p.name == name) return p.tensor;
  FAIL("no parameter " << name);
  return {};
}

// log|det J| of x -> z at one row via central differences.
double dense_logdet(const FlowStack& s, std::vector<double> x, const std::vector<double>& cond) {
  const std::size_t dim = x.size();
  const Tensor c({1, cond.size()}, cond);
  Eigen::MatrixXd jac(dim, dim);
  const double step = 1e-6;
  for (std::size_t j = 0; j < dim; ++j) {
    auto up = x;
    auto down = x;
    up[j] += step;
    down[j] -= step;
    const Tensor zu = s.forward(Tensor({1, dim}, up), c).z;
    const Tensor zd = s.forward(Tensor({1, dim}, down), c).z;
    for (std::size_t i = 0; i < dim; ++i) jac(i, j) = (zu.values()[i] - zd.values()[i]) / (2.0 * step);
  }
  return std::log(std::abs(jac.determinant()));
}

}  // namespace

TEST_SUITE("flow") {
  TEST_CASE("identity-initialized blocks leave x unchanged") {
    core::Rng rng(1);
    for (auto kind : {BlockKind::kMaf, BlockKind::kCoupling}) {
      const FlowStack s(config(kind, 4, 1, true), rng);
      const Tensor x = random_rows(5, 4, rng);
      const Tensor c = random_rows(5, 3, rng);
      const FlowOutput out = s.forward(x, c);
      for (std::size_t k = 0; k < x.numel(); ++k) CHECK(out.z.values()[k] == x.values()[k]);
      for (double l : out.logdet.values()) CHECK(l == 0.0);
      const Tensor back = s.inverse(x, c);
      for (std::size_t k = 0; k < x.numel(); ++k) CHECK(back.values()[k] == x.values()[k]);
    }
  }

  TEST_CASE("worked MAF example: mu = 1, alpha = ln 2") {
    core::Rng rng(2);
    FlowConfig cfg = config(BlockKind::kMaf, 1, 1, true);
    const FlowStack s(cfg, rng);
    // Output layer is zero-initialized, so its bias alone sets (mu, raw alpha).
    auto bias = param(s, "flow.block0.out.bias").mutable_values();
    bias[0] = 1.0;
    bias[1] = cfg.scale_clamp * std::atanh(std::log(2.0) / cfg.scale_clamp);
    const Tensor c({1, 3}, std::vector<double>{0.3, -0.2, 0.9});
    const FlowOutput out = s.forward(Tensor({1, 1}, std::vector<double>{3.0}), c);
    CHECK(out.z.item() == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(out.logdet.item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(s.inverse(Tensor({1, 1}, std::vector<double>{4.0}), c).item() == doctest::Approx(3.0).epsilon(1e-14));
  }

  TEST_CASE("identity stack log-density is the standard normal") {
    core::Rng rng(3);
    const FlowStack one(config(BlockKind::kMaf, 1, 6, true), rng);
    const Tensor c1({1, 3});
    CHECK(one.log_prob(Tensor({1, 1}), c1).item() == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)));
    const FlowStack two(config(BlockKind::kMaf, 2, 6, true), rng);
    CHECK(two.log_prob(Tensor({1, 2}), c1).item() == doctest::Approx(-std::log(2.0 * std::numbers::pi)));
  }

  TEST_CASE("six-block round trip on random inputs") {
    core::Rng rng(4);
    for (auto kind : {BlockKind::kMaf, BlockKind::kCoupling}) {
      for (std::size_t dim : {1u, 2u, 5u, 8u}) {
        const FlowStack s(config(kind, dim, 6, false), rng);
        const Tensor x = random_rows(100, dim, rng);
        const Tensor c = random_rows(100, 3, rng);
        const Tensor back = s.inverse(s.forward(x, c).z, c);
        double worst = 0.0;
        for (std::size_t k = 0; k < x.numel(); ++k) worst = std::max(worst, std::abs(back.values()[k] - x.values()[k]));
        CHECK_MESSAGE(worst < 1e-6, to_string(kind) << " D=" << dim);
      }
    }
  }

  TEST_CASE("log-determinant matches the dense Jacobian") {
    core::Rng rng(5);
    for (auto kind : {BlockKind::kMaf, BlockKind::kCoupling}) {
      for (std::size_t dim : {1u, 2u, 3u, 4u}) {
        const FlowStack s(config(kind, dim, 6, false), rng);
        for (int trial = 0; trial < 5; ++trial) {
          std::vector<double> x(dim);
          std::vector<double> c(3);
          for (double& v : x) v = rng.normal();
          for (double& v : c) v = rng.normal();
          const double analytic = s.forward(Tensor({1, dim}, x), Tensor({1, 3}, c)).logdet.item();
          CHECK(std::abs(analytic - dense_logdet(s, x, c)) < 1e-4);
        }
      }
    }
  }

  TEST_CASE("stack log-det is the sum of block log-dets") {
    core::Rng rng(6);
    const FlowStack s(config(BlockKind::kCoupling, 3, 4, false), rng);
    const Tensor x = random_rows(7, 3, rng);
    const Tensor c = random_rows(7, 3, rng);
    Tensor h = x;
    std::vector<double> total(7, 0.0);
    for (std::size_t b = 0; b < s.num_blocks(); ++b) {
      const FlowOutput o = s.block(b).forward(h, c);
      for (std::size_t r = 0; r < 7; ++r) total[r] += o.logdet.values()[r];
      h = o.z;
    }
    const FlowOutput all = s.forward(x, c);
    for (std::size_t r = 0; r < 7; ++r) CHECK(all.logdet.values()[r] == doctest::Approx(total[r]).epsilon(1e-12));
  }

  TEST_CASE("coupling block passes frozen coordinates through exactly") {
    core::Rng rng(7);
    const FlowStack s(config(BlockKind::kCoupling, 5, 2, false), rng);
    const auto& block = dynamic_cast<const CouplingBlock&>(s.block(0));
    const Tensor x = random_rows(20, 5, rng);
    const Tensor c = random_rows(20, 3, rng);
    const Tensor z = block.forward(x, c).z;
    for (std::size_t r = 0; r < 20; ++r)
      for (std::size_t j = 0; j < 5; ++j)
        if (block.frozen()[j] == 1.0) CHECK(z.values()[r * 5 + j] == x.values()[r * 5 + j]);
    const auto& next = dynamic_cast<const CouplingBlock&>(s.block(1));
    for (std::size_t j = 0; j < 5; ++j) CHECK(next.frozen()[j] != block.frozen()[j]);
  }

  TEST_CASE("MAF output i ignores x_j for j >= i") {
    core::Rng rng(8);
    const FlowStack s(config(BlockKind::kMaf, 4, 1, false), rng);
    const Tensor c = random_rows(1, 3, rng);
    const Tensor x = random_rows(1, 4, rng);
    const Tensor z = s.forward(x, c).z;
    for (std::size_t j = 0; j < 4; ++j) {
      Tensor moved = x.clone();
      moved.mutable_values()[j] += 0.75;
      const Tensor zm = s.forward(moved, c).z;
      for (std::size_t i = 0; i < j; ++i) CHECK(zm.values()[i] == z.values()[i]);
      CHECK(zm.values()[j] != z.values()[j]);
    }
  }

  TEST_CASE("condition changes the output") {
    core::Rng rng(9);
    for (auto kind : {BlockKind::kMaf, BlockKind::kCoupling}) {
      const FlowStack s(config(kind, 2, 2, false), rng);
      const Tensor x = random_rows(1, 2, rng);
      const Tensor c({1, 3}, std::vector<double>{0.5, -1.0, 2.0});
      const Tensor p({1, 3}, std::vector<double>{2.0, 0.5, -1.0});
      CHECK(s.log_prob(x, c).item() != s.log_prob(x, p).item());
    }
  }

  TEST_CASE("identity stack samples are standard normal and reproducible") {
    core::Rng rng(10);
    const FlowStack s(config(BlockKind::kMaf, 2, 6, true), rng);
    const std::vector<double> cond{0.1, 0.2, 0.3};
    const Tensor a = s.sample(10000, cond, 77);
    const Tensor b = s.sample(10000, cond, 77);
    double mean = 0.0;
    for (std::size_t k = 0; k < a.numel(); ++k) {
      CHECK(a.values()[k] == b.values()[k]);
      mean += a.values()[k];
    }
    CHECK(std::abs(mean / static_cast<double>(a.numel())) < 0.1);
  }

  TEST_CASE("log-density of samples is finite") {
    core::Rng rng(11);
    const FlowStack s(config(BlockKind::kMaf, 3, 6, false), rng);
    const std::vector<double> cond{0.4, -0.1, 1.2};
    const Tensor x = s.sample(10000, cond, 5);
    std::vector<double> rep;
    for (int r = 0; r < 10000; ++r) rep.insert(rep.end(), cond.begin(), cond.end());
    CHECK(s.log_prob(x, Tensor({10000, 3}, rep)).all_finite());
  }

  TEST_CASE("random one-dimensional flow integrates to one") {
    core::Rng rng(12);
    for (auto kind : {BlockKind::kMaf, BlockKind::kCoupling}) {
      const FlowStack s(config(kind, 1, 6, false), rng);
      const std::size_t points = 40001;
      const double lo = -40.0;
      const double step = 80.0 / static_cast<double>(points - 1);
      Tensor x({points, 1});
      for (std::size_t k = 0; k < points; ++k) x.mutable_values()[k] = lo + step * static_cast<double>(k);
      std::vector<double> cond;
      for (std::size_t k = 0; k < points; ++k) cond.insert(cond.end(), {0.2, -0.4, 0.6});
      const Tensor lp = s.log_prob(x, Tensor({points, 3}, cond));
      double mass = 0.0;
      for (std::size_t k = 0; k < points; ++k) mass += std::exp(lp.values()[k]) * (k == 0 || k + 1 == points ? 0.5 : 1.0);
      CHECK(std::abs(mass * step - 1.0) < 1e-2);
    }
  }

  TEST_CASE("dimension and numeric errors") {
    core::Rng rng(13);
    const FlowStack s(config(BlockKind::kMaf, 2, 2, false), rng);
    CHECK_THROWS_AS(s.forward(Tensor({3, 3}), Tensor({3, 3})), DimensionError);
    CHECK_THROWS_AS(s.forward(Tensor({3, 2}), Tensor({2, 3})), DimensionError);
    const Tensor bad({1, 2}, std::vector<double>{NAN, 0.0});
    CHECK_THROWS_WITH_AS(s.forward(bad, Tensor({1, 3})), doctest::Contains("flow block 0"), NumericError);
    CHECK_THROWS_AS(block_kind_from_string("glow"), ConfigError);
  }
}
