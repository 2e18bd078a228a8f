#include "ganf/encoder/encoder.hpp"

#include <cmath>

#include "ganf/core/errors.hpp"

namespace ganf::encoder {

namespace {

Tensor uniform_param(core::Shape shape, double bound, core::Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

Tensor SeriesBatch::rows() const {
  std::vector<double> out(values.size());
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < nodes; ++i)
        for (std::size_t a = 0; a < attrs; ++a) out[row(t, b, i) * attrs + a] = at(b, i, t, a);
  return Tensor({steps * batch * nodes, attrs}, std::move(out));
}

LstmCell::LstmCell(std::size_t input_dim, std::size_t hidden, core::Rng& rng)
    : input_dim_(input_dim), hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_input_ = uniform_param({input_dim, 4 * hidden}, bound, rng);
  w_hidden_ = uniform_param({hidden, 4 * hidden}, bound, rng);
  bias_ = uniform_param({4 * hidden}, bound, rng);
}

LstmCell::State LstmCell::step(const Tensor& x, const State& state) const {
  using namespace core;
  const Tensor gates = add(add(matmul(x, w_input_), matmul(state.h, w_hidden_)), bias_);
  const std::size_t d = hidden_;
  const Tensor in_gate = sigmoid(slice(gates, 1, 0, d));
  const Tensor forget_gate = sigmoid(slice(gates, 1, d, 2 * d));
  const Tensor candidate = tanh(slice(gates, 1, 2 * d, 3 * d));
  const Tensor out_gate = sigmoid(slice(gates, 1, 3 * d, 4 * d));
  Tensor c = add(mul(forget_gate, state.c), mul(in_gate, candidate));
  Tensor h = mul(out_gate, tanh(c));
  return {h, c};
}

void LstmCell::collect(std::vector<NamedTensor>& out) const {
  out.push_back({"rnn.w_input", w_input_});
  out.push_back({"rnn.w_hidden", w_hidden_});
  out.push_back({"rnn.bias", bias_});
}

DependencyEncoder::DependencyEncoder(std::size_t hidden, core::Rng& rng, AdjacencyNorm norm) : norm_(norm) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_parent_ = uniform_param({hidden, hidden}, bound, rng);
  w_self_ = uniform_param({hidden, hidden}, bound, rng);
  w_out_ = uniform_param({hidden, hidden}, bound, rng);
}

void DependencyEncoder::collect(std::vector<NamedTensor>& out) const {
  out.push_back({"encoder.w_parent", w_parent_});
  out.push_back({"encoder.w_self", w_self_});
  out.push_back({"encoder.w_out", w_out_});
}

HiddenStates encode_hidden(const LstmCell& cell, const SeriesBatch& x) {
  if (x.attrs != cell.input_dim()) {
    throw DimensionError("series have " + std::to_string(x.attrs) + " attributes, encoder expects " +
                         std::to_string(cell.input_dim()));
  }
  if (x.values.size() != x.batch * x.nodes * x.steps * x.attrs) throw DimensionError("series batch size mismatch");
  const std::size_t rows = x.batch * x.nodes;
  const std::size_t d = cell.hidden();
  LstmCell::State state{Tensor({rows, d}), Tensor({rows, d})};

  std::vector<Tensor> hs;
  hs.reserve(x.steps + 1);
  hs.push_back(state.h);
  for (std::size_t t = 0; t < x.steps; ++t) {
    std::vector<double> xt(rows * x.attrs);
    for (std::size_t b = 0; b < x.batch; ++b)
      for (std::size_t i = 0; i < x.nodes; ++i)
        for (std::size_t a = 0; a < x.attrs; ++a) xt[(b * x.nodes + i) * x.attrs + a] = x.at(b, i, t, a);
    state = cell.step(Tensor({rows, x.attrs}, std::move(xt)), state);
    if (!state.h.all_finite()) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < d; ++k)
          if (!std::isfinite(state.h.values()[r * d + k])) {
            throw NumericError("non-finite hidden state at node " + std::to_string(r % x.nodes) + ", step " +
                               std::to_string(t));
          }
    }
    hs.push_back(state.h);
  }

  HiddenStates out;
  out.batch = x.batch;
  out.nodes = x.nodes;
  out.steps = x.steps;
  out.current = core::concat(std::span<const Tensor>(hs.data() + 1, x.steps), 0);
  out.previous = core::concat(std::span<const Tensor>(hs.data(), x.steps), 0);
  return out;
}

Tensor masked_diag(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw DimensionError("adjacency must be square, got " + core::shape_string(a.shape()));
  }
  const std::size_t n = a.dim(0);
  Tensor mask({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) mask.mutable_values()[i * n + i] = 0.0;
  return core::mul(a, mask);
}

namespace {

// Scales row i of A by 1 / (1 + sum_j |A_ij|).
Tensor row_normalize(const Tensor& a) {
  using namespace core;
  const Tensor denom = add_scalar(sum_last(abs(a)), 1.0);
  return transpose(mul(transpose(a), reciprocal(denom)));
}

}  // namespace

Tensor encode_dependencies(const DependencyEncoder& enc, const HiddenStates& h, const Tensor& adjacency) {
  using namespace core;
  const std::size_t n = h.nodes;
  if (adjacency.rank() != 2 || adjacency.dim(0) != n || adjacency.dim(1) != n) {
    throw DimensionError("adjacency must be " + std::to_string(n) + "x" + std::to_string(n) + ", got " +
                         shape_string(adjacency.shape()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (adjacency.values()[i * n + i] != 0.0) {
      throw ContractError("adjacency diagonal must be zero (node " + std::to_string(i) + ")");
    }
  }
  const std::size_t d = h.current.dim(1);
  const Tensor a = enc.norm() == AdjacencyNorm::kRow ? row_normalize(adjacency) : adjacency;
  const Tensor grouped = reshape(h.current, {h.steps * h.batch, n, d});
  const Tensor parents = reshape(matmul(a, grouped), {h.steps * h.batch * n, d});
  const Tensor pre = add(matmul(parents, enc.w_parent()), matmul(h.previous, enc.w_self()));
  return matmul(relu(pre), enc.w_out());
}

Tensor window_view(const Tensor& rows, std::size_t batch, std::size_t nodes, std::size_t steps, std::size_t b) {
  const std::size_t width = rows.dim(1);
  std::vector<double> out(nodes * steps * width);
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t r = (t * batch + b) * nodes + i;
      std::copy_n(rows.values().data() + r * width, width, out.data() + (i * steps + t) * width);
    }
  return Tensor({nodes, steps, width}, std::move(out));
}

}  // namespace ganf::encoder
