#pragma once

#include <string>
#include <vector>

#include "ganf/core/ops.hpp"
#include "ganf/core/random.hpp"
#include "ganf/flow/flow.hpp"

namespace ganf::encoder {

using core::Tensor;

/// A batch of equally shaped multi-series windows, values laid out [b][i][t][a].
struct SeriesBatch {
  std::size_t batch = 0;
  std::size_t nodes = 0;
  std::size_t steps = 0;
  std::size_t attrs = 0;
  std::vector<double> values;

  double at(std::size_t b, std::size_t i, std::size_t t, std::size_t a) const {
    return values[((b * nodes + i) * steps + t) * attrs + a];
  }
  /// Row index of (t, b, i) in the time-major layout used by the encoder.
  std::size_t row(std::size_t t, std::size_t b, std::size_t i) const { return (t * batch + b) * nodes + i; }
  /// Observations as (steps*batch*nodes, attrs) rows in time-major order.
  Tensor rows() const;
};

/// Single-layer LSTM with one parameter set shared by every node.
class LstmCell {
 public:
  struct State {
    Tensor h;
    Tensor c;
  };

  LstmCell(std::size_t input_dim, std::size_t hidden, core::Rng& rng);

  /// x: (N, D); state tensors (N, d). Gate order i, f, g, o.
  State step(const Tensor& x, const State& state) const;
  void collect(std::vector<NamedTensor>& out) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden() const { return hidden_; }
  const Tensor& w_input() const { return w_input_; }
  const Tensor& w_hidden() const { return w_hidden_; }
  const Tensor& bias() const { return bias_; }

 private:
  std::size_t input_dim_;
  std::size_t hidden_;
  Tensor w_input_;   // (D, 4d)
  Tensor w_hidden_;  // (d, 4d)
  Tensor bias_;      // (4d)
};

enum class AdjacencyNorm { kRaw, kRow };

/// Graph convolution D_t = ReLU(A H_t W1 + H_{t-1} W2) W3.
class DependencyEncoder {
 public:
  DependencyEncoder(std::size_t hidden, core::Rng& rng, AdjacencyNorm norm = AdjacencyNorm::kRaw);

  const Tensor& w_parent() const { return w_parent_; }
  const Tensor& w_self() const { return w_self_; }
  const Tensor& w_out() const { return w_out_; }
  AdjacencyNorm norm() const { return norm_; }
  void collect(std::vector<NamedTensor>& out) const;

 private:
  Tensor w_parent_;  // W1
  Tensor w_self_;    // W2
  Tensor w_out_;     // W3
  AdjacencyNorm norm_;
};

/// Hidden states in time-major rows: `current` holds h_t, `previous` h_{t-1}
/// with h_0 = 0. Both are (steps*batch*nodes, d).
struct HiddenStates {
  std::size_t batch = 0;
  std::size_t nodes = 0;
  std::size_t steps = 0;
  Tensor current;
  Tensor previous;
};

/// Unrolls the shared cell over every node of every window from a zero state.
HiddenStates encode_hidden(const LstmCell& cell, const SeriesBatch& x);

/// Dependency vectors d_t^i for every (t, b, i) row, shape (steps*batch*nodes, d).
/// Throws ContractError when diag(A) is not zero.
Tensor encode_dependencies(const DependencyEncoder& enc, const HiddenStates& h, const Tensor& adjacency);

/// Copy of A with its diagonal set to zero (differentiable in the off-diagonal entries).
Tensor masked_diag(const Tensor& a);

/// Rearranges time-major rows of one window (batch index b) into an (n, T, d) tensor.
Tensor window_view(const Tensor& rows, std::size_t batch, std::size_t nodes, std::size_t steps, std::size_t b);

}  // namespace ganf::encoder
