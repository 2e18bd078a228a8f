#include "ganf/dag/dag.hpp"

#include <cmath>
#include <json.hpp>
#include <queue>
#include <sstream>

#include "ganf/core/errors.hpp"
#include "ganf/core/expm.hpp"
#include "ganf/core/ops.hpp"

namespace ganf::dag {

namespace {

void require_square(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw DimensionError("adjacency must be square, got " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()));
  }
}

}  // namespace

Matrix to_matrix(const core::Tensor& t) {
  if (t.rank() != 2) throw DimensionError("expected a matrix, got " + core::shape_string(t.shape()));
  const auto r = static_cast<Eigen::Index>(t.dim(0));
  const auto c = static_cast<Eigen::Index>(t.dim(1));
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = t.values()[static_cast<std::size_t>(i * c + j)];
  return m;
}

core::Tensor to_tensor(const Matrix& m) {
  std::vector<double> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return core::Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
}

double acyclicity(const Matrix& a) {
  require_square(a);
  if (a.size() == 0) return 0.0;
  return core::expm(a.cwiseProduct(a)).trace() - static_cast<double>(a.rows());
}

Matrix acyclicity_grad(const Matrix& a) {
  require_square(a);
  if (a.size() == 0) return a;
  return core::expm(a.cwiseProduct(a)).transpose().cwiseProduct(2.0 * a);
}

core::Tensor acyclicity(const core::Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw DimensionError("adjacency must be square, got " + core::shape_string(a.shape()));
  }
  const Matrix m = to_matrix(a);
  const Matrix e = core::expm(m.cwiseProduct(m));
  const double h = e.trace() - static_cast<double>(m.rows());
  bool rec = false;
  core::Tensor out = core::detail::make_result(core::Shape{}, {h}, {&a}, rec);
  if (rec) {
    auto pa = a.impl();
    const Matrix grad = e.transpose().cwiseProduct(2.0 * m);
    core::detail::record(out, [pa, grad](const core::TensorData& o) {
      auto& g = pa->grad_buffer();
      const auto n = grad.rows();
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) g[static_cast<std::size_t>(i * n + j)] += o.grad[0] * grad(i, j);
    });
  }
  return out;
}

double augmented_lagrangian(double nll, double h, const LagrangianState& state) {
  return nll + state.lambda * h + 0.5 * state.penalty * h * h;
}

core::Tensor augmented_lagrangian(const core::Tensor& nll, const core::Tensor& h, const LagrangianState& state) {
  using namespace core;
  return add(add(nll, scale(h, state.lambda)), scale(square(h), 0.5 * state.penalty));
}

LagrangianState dual_penalty_update(LagrangianState state, double h_now, const LagrangianSchedule& schedule) {
  state.lambda += state.penalty * h_now;
  if (state.iteration > 0 && std::abs(h_now) > schedule.gamma * std::abs(state.h_prev)) {
    state.penalty = state.penalty == 0.0 ? schedule.bootstrap_penalty : schedule.eta * state.penalty;
  }
  state.h_prev = h_now;
  ++state.iteration;
  return state;
}

std::vector<std::size_t> topological_order(std::size_t nodes, const std::vector<Edge>& edges) {
  std::vector<std::vector<std::size_t>> children(nodes);
  std::vector<std::size_t> indegree(nodes, 0);
  for (const Edge& e : edges) {
    children[e.from].push_back(e.to);
    ++indegree[e.to];
  }
  // Min-heap keeps the order deterministic.
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < nodes; ++i)
    if (indegree[i] == 0) ready.push(i);
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t v = ready.top();
    ready.pop();
    order.push_back(v);
    for (std::size_t c : children[v])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (order.size() != nodes) order.clear();
  return order;
}

ThresholdedGraph threshold_dag(const Matrix& a, double eps) {
  require_square(a);
  if (!(eps > 0.0)) throw ContractError("threshold must be positive");
  ThresholdedGraph g;
  g.nodes = static_cast<std::size_t>(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (std::abs(a(i, j)) > eps) g.edges.push_back({static_cast<std::size_t>(j), static_cast<std::size_t>(i), a(i, j)});
  g.order = topological_order(g.nodes, g.edges);
  g.acyclic = g.nodes == 0 || !g.order.empty();
  return g;
}

namespace {
std::string node_name(const std::vector<std::string>& names, std::size_t i) {
  return i < names.size() ? names[i] : std::to_string(i);
}
}  // namespace

std::string to_dot(const ThresholdedGraph& g, const std::vector<std::string>& names) {
  std::ostringstream os;
  os.precision(6);
  os << "digraph ganf {\n";
  for (std::size_t i = 0; i < g.nodes; ++i) os << "  \"" << node_name(names, i) << "\";\n";
  for (const Edge& e : g.edges) {
    os << "  \"" << node_name(names, e.from) << "\" -> \"" << node_name(names, e.to) << "\" [weight=" << e.weight
       << ", label=\"" << e.weight << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

std::string to_json(const ThresholdedGraph& g, const std::vector<std::string>& names, double eps) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < g.nodes; ++i) j["nodes"].push_back(node_name(names, i));
  j["epsilon"] = eps;
  j["acyclic"] = g.acyclic;
  j["edges"] = nlohmann::json::array();
  for (const Edge& e : g.edges) {
    j["edges"].push_back({{"from", node_name(names, e.from)}, {"to", node_name(names, e.to)}, {"weight", e.weight}});
  }
  return j.dump(2);
}

}  // namespace ganf::dag
