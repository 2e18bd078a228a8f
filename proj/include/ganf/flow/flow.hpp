#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ganf/core/ops.hpp"
#include "ganf/core/random.hpp"
#include "ganf/core/tensor.hpp"

namespace ganf {

/// Trainable tensor with a stable name, used for optimizers and checkpoints.
struct NamedTensor {
  std::string name;
  core::Tensor tensor;
};

}  // namespace ganf

namespace ganf::flow {

using core::Tensor;

enum class BlockKind { kMaf, kCoupling };

std::string to_string(BlockKind kind);
BlockKind block_kind_from_string(const std::string& s);

struct FlowConfig {
  BlockKind kind = BlockKind::kMaf;
  std::size_t dim = 1;       // D
  std::size_t cond_dim = 0;  // d
  std::size_t hidden = 32;
  std::size_t blocks = 6;
  double scale_clamp = 5.0;
  /// Zero the last shift/log-scale layer so each block starts as the identity.
  bool identity_init = true;
};

/// Dense layer y = x (W o M) + b with a fixed binary connectivity mask M.
class MaskedLinear {
 public:
  MaskedLinear(std::size_t in, std::size_t out, std::vector<double> mask, core::Rng& rng, bool zero_init);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;

  const Tensor& weight() const { return weight_; }
  const Tensor& mask() const { return mask_; }

 private:
  Tensor weight_;  // (in, out)
  Tensor bias_;    // (out)
  Tensor mask_;    // (in, out), constant
};

/// Batched output of a flow map: z is (N, D), logdet is (N).
struct FlowOutput {
  Tensor z;
  Tensor logdet;
};

class FlowBlock {
 public:
  virtual ~FlowBlock() = default;
  /// x: (N, D), cond: (N, d).
  virtual FlowOutput forward(const Tensor& x, const Tensor& cond) const = 0;
  /// Exact inverse of `forward`; evaluated without gradient recording.
  virtual Tensor inverse(const Tensor& z, const Tensor& cond) const = 0;
  virtual void collect(const std::string& prefix, std::vector<NamedTensor>& out) const = 0;
};

/// Conditional masked autoregressive block:
/// z_i = (x_i - mu_i(x_{<i}, d)) * exp(alpha_i(x_{<i}, d)).
class MafBlock final : public FlowBlock {
 public:
  MafBlock(const FlowConfig& cfg, core::Rng& rng);

  FlowOutput forward(const Tensor& x, const Tensor& cond) const override;
  Tensor inverse(const Tensor& z, const Tensor& cond) const override;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  /// Shift and clamped log-scale, each (N, D).
  std::pair<Tensor, Tensor> shift_and_log_scale(const Tensor& x, const Tensor& cond) const;

 private:
  std::size_t dim_;
  double clamp_;
  MaskedLinear input_;
  MaskedLinear hidden_;
  MaskedLinear output_;
};

/// Conditional affine coupling block; coordinates with frozen[j] == 1 pass
/// through unchanged and parameterize the affine map of the others.
class CouplingBlock final : public FlowBlock {
 public:
  CouplingBlock(const FlowConfig& cfg, std::vector<double> frozen, core::Rng& rng);

  FlowOutput forward(const Tensor& x, const Tensor& cond) const override;
  Tensor inverse(const Tensor& z, const Tensor& cond) const override;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  const std::vector<double>& frozen() const { return frozen_; }

 private:
  std::pair<Tensor, Tensor> shift_and_log_scale(const Tensor& x, const Tensor& cond) const;

  std::size_t dim_;
  double clamp_;
  std::vector<double> frozen_;
  Tensor frozen_mask_;
  Tensor active_mask_;
  MaskedLinear input_;
  MaskedLinear hidden_;
  MaskedLinear output_;
};

/// Stack of conditional blocks over a standard-normal base on R^D.
///
/// MAF stacks reverse the coordinate order between consecutive blocks;
/// coupling stacks alternate their frozen halves instead.
class FlowStack {
 public:
  FlowStack(const FlowConfig& cfg, core::Rng& rng);

  FlowOutput forward(const Tensor& x, const Tensor& cond) const;
  Tensor inverse(const Tensor& z, const Tensor& cond) const;
  /// log q(f(x; d)) + sum of block log-determinants, shape (N).
  Tensor log_prob(const Tensor& x, const Tensor& cond) const;
  /// `count` draws x = f^{-1}(z; cond), z ~ N(0, I); cond is a single (d) vector.
  Tensor sample(std::size_t count, std::span<const double> cond, std::uint64_t seed) const;

  std::vector<NamedTensor> parameters() const;
  const FlowConfig& config() const { return cfg_; }
  std::size_t num_blocks() const { return blocks_.size(); }
  const FlowBlock& block(std::size_t i) const { return *blocks_.at(i); }

 private:
  void check_inputs(const Tensor& x, const Tensor& cond) const;
  Tensor permute(const Tensor& x) const;

  FlowConfig cfg_;
  std::vector<std::unique_ptr<FlowBlock>> blocks_;
  Tensor reversal_;  // (D, D) anti-diagonal
};

/// log N(z; 0, I) row-wise, shape (N).
Tensor standard_normal_log_prob(const Tensor& z);

}  // namespace ganf::flow
