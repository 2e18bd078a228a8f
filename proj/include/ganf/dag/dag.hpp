#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ganf/core/tensor.hpp"

namespace ganf::dag {

using Matrix = Eigen::MatrixXd;

/// h(A) = tr(e^{A o A}) - n. Zero exactly when the support of A is acyclic.
double acyclicity(const Matrix& a);

/// Closed-form gradient of h: (e^{A o A})^T o 2A.
Matrix acyclicity_grad(const Matrix& a);

/// Differentiable h(A) as a scalar tensor; the backward pass uses the closed form.
core::Tensor acyclicity(const core::Tensor& a);

/// Multiplier, penalty and bookkeeping of the augmented-Lagrangian outer loop.
struct LagrangianState {
  double lambda = 0.0;
  double penalty = 0.0;  // c
  std::size_t iteration = 0;
  double h_prev = 0.0;
};

struct LagrangianSchedule {
  double eta = 10.0;
  double gamma = 0.5;
  /// Value c takes at the first insufficient-progress trigger while still 0,
  /// since eta * 0 would never move.
  double bootstrap_penalty = 1.0;
};

/// nll + lambda h + (c/2) h^2.
double augmented_lagrangian(double nll, double h, const LagrangianState& state);
core::Tensor augmented_lagrangian(const core::Tensor& nll, const core::Tensor& h, const LagrangianState& state);

/// lambda += c h; c grows by eta when k > 0 and |h| > gamma |h_prev|.
LagrangianState dual_penalty_update(LagrangianState state, double h_now, const LagrangianSchedule& schedule = {});

/// Directed edge from parent `from` to child `to`, i.e. A(to, from).
struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  double weight = 0.0;
};

struct ThresholdedGraph {
  std::size_t nodes = 0;
  std::vector<Edge> edges;
  bool acyclic = true;
  /// Topological order when acyclic, empty otherwise.
  std::vector<std::size_t> order;
};

/// Keeps edges with |A_ij| > eps and checks the result by topological sort.
ThresholdedGraph threshold_dag(const Matrix& a, double eps);

/// Kahn's algorithm; returns an empty vector when the graph has a cycle.
std::vector<std::size_t> topological_order(std::size_t nodes, const std::vector<Edge>& edges);

std::string to_dot(const ThresholdedGraph& g, const std::vector<std::string>& names);
std::string to_json(const ThresholdedGraph& g, const std::vector<std::string>& names, double eps);

Matrix to_matrix(const core::Tensor& t);
core::Tensor to_tensor(const Matrix& m);

}  // namespace ganf::dag
