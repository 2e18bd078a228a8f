#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ganf/core/tensor.hpp"
#include "ganf/encoder/encoder.hpp"

namespace ganf::testing {

/// Central difference of `f` with respect to every element of `x`.
inline std::vector<double> numeric_grad(core::Tensor x, const std::function<double()>& f, double step = 1e-5) {
  std::vector<double> g(x.numel());
  auto v = x.mutable_values();
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double keep = v[k];
    v[k] = keep + step;
    const double up = f();
    v[k] = keep - step;
    const double down = f();
    v[k] = keep;
    g[k] = (up - down) / (2.0 * step);
  }
  return g;
}

/// max |a - b| / max(1, max |b|).
inline double rel_err(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0;
  double scale = 1.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff = std::max(diff, std::abs(a[k] - b[k]));
    scale = std::max(scale, std::abs(b[k]));
  }
  return diff / scale;
}

inline Eigen::MatrixXd as_matrix(const core::Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m(r, c) = t.values()[r * t.dim(1) + c];
  return m;
}

/// Hidden states and dependency vectors of one window, indexed [i][t].
struct Encoding {
  std::vector<std::vector<Eigen::VectorXd>> h;
  std::vector<std::vector<Eigen::VectorXd>> d;
};

/// Straight-line LSTM and graph convolution for one window, one node and step at a time.
inline Encoding reference_encoding(const encoder::LstmCell& cell, const encoder::DependencyEncoder& enc,
                                   std::size_t nodes, std::size_t steps, std::size_t attrs,
                                   const std::function<double(std::size_t, std::size_t, std::size_t)>& input,
                                   const Eigen::MatrixXd& a) {
  auto sigmoid = [](const Eigen::VectorXd& v) -> Eigen::VectorXd { return (1.0 + (-v.array()).exp()).inverse().matrix(); };
  const auto d = static_cast<Eigen::Index>(cell.hidden());
  const Eigen::MatrixXd wi = as_matrix(cell.w_input()).transpose();
  const Eigen::MatrixXd wh = as_matrix(cell.w_hidden()).transpose();
  Eigen::VectorXd bias(4 * d);
  for (Eigen::Index k = 0; k < 4 * d; ++k) bias(k) = cell.bias().values()[k];
  Encoding r;
  r.h.assign(nodes, {});
  for (std::size_t i = 0; i < nodes; ++i) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(d);
    for (std::size_t t = 0; t < steps; ++t) {
      Eigen::VectorXd in(attrs);
      for (std::size_t q = 0; q < attrs; ++q) in(q) = input(i, t, q);
      const Eigen::VectorXd g = wi * in + wh * h + bias;
      const Eigen::VectorXd ig = sigmoid(g.segment(0, d));
      const Eigen::VectorXd fg = sigmoid(g.segment(d, d));
      const Eigen::VectorXd cand = g.segment(2 * d, d).array().tanh().matrix();
      const Eigen::VectorXd og = sigmoid(g.segment(3 * d, d));
      c = (fg.array() * c.array() + ig.array() * cand.array()).matrix();
      h = (og.array() * c.array().tanh()).matrix();
      r.h[i].push_back(h);
    }
  }
  const Eigen::MatrixXd w1 = as_matrix(enc.w_parent()).transpose();
  const Eigen::MatrixXd w2 = as_matrix(enc.w_self()).transpose();
  const Eigen::MatrixXd w3 = as_matrix(enc.w_out()).transpose();
  r.d.assign(nodes, {});
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t t = 0; t < steps; ++t) {
      Eigen::VectorXd agg = Eigen::VectorXd::Zero(d);
      for (std::size_t j = 0; j < nodes; ++j) agg += a(i, j) * r.h[j][t];
      const Eigen::VectorXd prev = t == 0 ? Eigen::VectorXd::Zero(d) : r.h[i][t - 1];
      const Eigen::VectorXd pre = w1 * agg + w2 * prev;
      r.d[i].push_back(w3 * pre.cwiseMax(0.0));
    }
  return r;
}

}  // namespace ganf::testing
