#include "ganf/flow/flow.hpp"

#include <cmath>
#include <numbers>

#include "ganf/core/errors.hpp"

namespace ganf::flow {

std::string to_string(BlockKind kind) { return kind == BlockKind::kMaf ? "maf" : "coupling"; }

BlockKind block_kind_from_string(const std::string& s) {
  if (s == "maf") return BlockKind::kMaf;
  if (s == "coupling" || s == "realnvp") return BlockKind::kCoupling;
  throw ConfigError("flow", "unknown flow block kind '" + s + "'");
}

MaskedLinear::MaskedLinear(std::size_t in, std::size_t out, std::vector<double> mask, core::Rng& rng,
                           bool zero_init)
    : weight_({in, out}), bias_({out}), mask_({in, out}, std::move(mask)) {
  if (!zero_init) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : weight_.mutable_values()) w = rng.uniform(-bound, bound);
    for (double& b : bias_.mutable_values()) b = rng.uniform(-bound, bound);
  }
  weight_.set_requires_grad(true);
  bias_.set_requires_grad(true);
}

Tensor MaskedLinear::operator()(const Tensor& x) const {
  return core::add(core::matmul(x, core::mul(weight_, mask_)), bias_);
}

void MaskedLinear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

namespace {

// Connectivity of a MADE network over D autoregressive inputs followed by
// `cond` unmasked inputs. Hidden unit k has degree k mod D; x_j (degree j+1)
// reaches unit k iff j+1 <= deg(k), and output i reads unit k iff
// deg(k) <= i, so output i never sees x_j for j >= i.
std::vector<std::size_t> hidden_degrees(std::size_t hidden, std::size_t dim) {
  std::vector<std::size_t> deg(hidden);
  for (std::size_t k = 0; k < hidden; ++k) deg[k] = k % dim;
  return deg;
}

std::vector<double> made_input_mask(std::size_t dim, std::size_t cond, const std::vector<std::size_t>& deg) {
  const std::size_t h = deg.size();
  std::vector<double> m((dim + cond) * h, 0.0);
  for (std::size_t j = 0; j < dim; ++j)
    for (std::size_t k = 0; k < h; ++k) m[j * h + k] = (j + 1 <= deg[k]) ? 1.0 : 0.0;
  for (std::size_t j = dim; j < dim + cond; ++j)
    for (std::size_t k = 0; k < h; ++k) m[j * h + k] = 1.0;
  return m;
}

std::vector<double> made_hidden_mask(const std::vector<std::size_t>& deg) {
  const std::size_t h = deg.size();
  std::vector<double> m(h * h);
  for (std::size_t a = 0; a < h; ++a)
    for (std::size_t b = 0; b < h; ++b) m[a * h + b] = deg[b] >= deg[a] ? 1.0 : 0.0;
  return m;
}

// Outputs are [mu_0..mu_{D-1}, alpha_0..alpha_{D-1}].
std::vector<double> made_output_mask(std::size_t dim, const std::vector<std::size_t>& deg) {
  const std::size_t h = deg.size();
  std::vector<double> m(h * 2 * dim);
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t i = 0; i < dim; ++i) {
      const double v = deg[k] <= i ? 1.0 : 0.0;
      m[k * 2 * dim + i] = v;
      m[k * 2 * dim + dim + i] = v;
    }
  return m;
}

Tensor clamp_log_scale(const Tensor& raw, double s) { return core::scale(core::tanh(core::scale(raw, 1.0 / s)), s); }

}  // namespace

MafBlock::MafBlock(const FlowConfig& cfg, core::Rng& rng)
    : dim_(cfg.dim),
      clamp_(cfg.scale_clamp),
      input_(cfg.dim + cfg.cond_dim, cfg.hidden,
             made_input_mask(cfg.dim, cfg.cond_dim, hidden_degrees(cfg.hidden, cfg.dim)), rng, false),
      hidden_(cfg.hidden, cfg.hidden, made_hidden_mask(hidden_degrees(cfg.hidden, cfg.dim)), rng, false),
      output_(cfg.hidden, 2 * cfg.dim, made_output_mask(cfg.dim, hidden_degrees(cfg.hidden, cfg.dim)), rng,
              cfg.identity_init) {}

std::pair<Tensor, Tensor> MafBlock::shift_and_log_scale(const Tensor& x, const Tensor& cond) const {
  Tensor h = core::relu(input_(core::concat({x, cond}, 1)));
  h = core::relu(hidden_(h));
  const Tensor out = output_(h);
  Tensor mu = core::slice(out, 1, 0, dim_);
  Tensor alpha = clamp_log_scale(core::slice(out, 1, dim_, 2 * dim_), clamp_);
  return {mu, alpha};
}

FlowOutput MafBlock::forward(const Tensor& x, const Tensor& cond) const {
  auto [mu, alpha] = shift_and_log_scale(x, cond);
  Tensor z = core::mul(core::sub(x, mu), core::exp(alpha));
  return {z, core::sum_last(alpha)};
}

Tensor MafBlock::inverse(const Tensor& z, const Tensor& cond) const {
  core::NoTapeGuard no_tape;
  const std::size_t rows = z.dim(0);
  Tensor x({rows, dim_});
  // x_i only needs x_{<i}, so D sweeps fill the solution left to right.
  for (std::size_t i = 0; i < dim_; ++i) {
    auto [mu, alpha] = shift_and_log_scale(x, cond);
    auto xv = x.mutable_values();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t k = r * dim_ + i;
      xv[k] = z.values()[k] * std::exp(-alpha.values()[k]) + mu.values()[k];
    }
  }
  return x;
}

void MafBlock::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  input_.collect(prefix + ".in", out);
  hidden_.collect(prefix + ".hidden", out);
  output_.collect(prefix + ".out", out);
}

namespace {
std::vector<double> full_mask(std::size_t in, std::size_t out) { return std::vector<double>(in * out, 1.0); }
}  // namespace

CouplingBlock::CouplingBlock(const FlowConfig& cfg, std::vector<double> frozen, core::Rng& rng)
    : dim_(cfg.dim),
      clamp_(cfg.scale_clamp),
      frozen_(std::move(frozen)),
      input_(cfg.dim + cfg.cond_dim, cfg.hidden, full_mask(cfg.dim + cfg.cond_dim, cfg.hidden), rng, false),
      hidden_(cfg.hidden, cfg.hidden, full_mask(cfg.hidden, cfg.hidden), rng, false),
      output_(cfg.hidden, 2 * cfg.dim, full_mask(cfg.hidden, 2 * cfg.dim), rng, cfg.identity_init) {
  if (frozen_.size() != dim_) throw DimensionError("coupling mask length must equal the flow dimension");
  frozen_mask_ = Tensor({dim_}, frozen_);
  std::vector<double> active(dim_);
  for (std::size_t j = 0; j < dim_; ++j) active[j] = 1.0 - frozen_[j];
  active_mask_ = Tensor({dim_}, std::move(active));
}

std::pair<Tensor, Tensor> CouplingBlock::shift_and_log_scale(const Tensor& x, const Tensor& cond) const {
  Tensor h = core::relu(input_(core::concat({core::mul(x, frozen_mask_), cond}, 1)));
  h = core::relu(hidden_(h));
  const Tensor out = output_(h);
  Tensor mu = core::mul(core::slice(out, 1, 0, dim_), active_mask_);
  Tensor alpha = core::mul(clamp_log_scale(core::slice(out, 1, dim_, 2 * dim_), clamp_), active_mask_);
  return {mu, alpha};
}

FlowOutput CouplingBlock::forward(const Tensor& x, const Tensor& cond) const {
  auto [mu, alpha] = shift_and_log_scale(x, cond);
  Tensor z = core::mul(core::sub(x, mu), core::exp(alpha));
  return {z, core::sum_last(alpha)};
}

Tensor CouplingBlock::inverse(const Tensor& z, const Tensor& cond) const {
  core::NoTapeGuard no_tape;
  auto [mu, alpha] = shift_and_log_scale(z, cond);
  std::vector<double> x(z.numel());
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = z.values()[k] * std::exp(-alpha.values()[k]) + mu.values()[k];
  return Tensor(z.shape(), std::move(x));
}

void CouplingBlock::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  input_.collect(prefix + ".in", out);
  hidden_.collect(prefix + ".hidden", out);
  output_.collect(prefix + ".out", out);
}

FlowStack::FlowStack(const FlowConfig& cfg, core::Rng& rng) : cfg_(cfg) {
  if (cfg.dim == 0) throw ConfigError("flow.dim", "flow dimension must be positive");
  if (cfg.blocks == 0) throw ConfigError("flow_blocks", "a flow needs at least one block");
  if (cfg.hidden == 0) throw ConfigError("hidden_dim", "hidden width must be positive");
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    if (cfg.kind == BlockKind::kMaf) {
      blocks_.push_back(std::make_unique<MafBlock>(cfg, rng));
    } else {
      std::vector<double> frozen(cfg.dim);
      for (std::size_t j = 0; j < cfg.dim; ++j) frozen[j] = ((j + b) % 2 == 1) ? 1.0 : 0.0;
      blocks_.push_back(std::make_unique<CouplingBlock>(cfg, std::move(frozen), rng));
    }
  }
  reversal_ = Tensor({cfg.dim, cfg.dim});
  for (std::size_t j = 0; j < cfg.dim; ++j) reversal_.mutable_values()[j * cfg.dim + (cfg.dim - 1 - j)] = 1.0;
}

void FlowStack::check_inputs(const Tensor& x, const Tensor& cond) const {
  if (x.rank() != 2 || x.dim(1) != cfg_.dim) {
    throw DimensionError("flow input must be (N, " + std::to_string(cfg_.dim) + "), got " +
                         core::shape_string(x.shape()));
  }
  if (cond.rank() != 2 || cond.dim(1) != cfg_.cond_dim || cond.dim(0) != x.dim(0)) {
    throw DimensionError("flow condition must be (" + std::to_string(x.dim(0)) + ", " +
                         std::to_string(cfg_.cond_dim) + "), got " + core::shape_string(cond.shape()));
  }
}

Tensor FlowStack::permute(const Tensor& x) const {
  if (cfg_.kind != BlockKind::kMaf || cfg_.dim == 1) return x;
  return core::matmul(x, reversal_);
}

FlowOutput FlowStack::forward(const Tensor& x, const Tensor& cond) const {
  check_inputs(x, cond);
  Tensor h = x;
  Tensor logdet;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    if (b > 0) h = permute(h);
    FlowOutput out = blocks_[b]->forward(h, cond);
    if (!out.z.all_finite() || !out.logdet.all_finite()) {
      throw NumericError("flow block " + std::to_string(b) + " produced a non-finite output");
    }
    h = out.z;
    logdet = logdet.defined() ? core::add(logdet, out.logdet) : out.logdet;
  }
  return {h, logdet};
}

Tensor FlowStack::inverse(const Tensor& z, const Tensor& cond) const {
  check_inputs(z, cond);
  core::NoTapeGuard no_tape;
  Tensor x = z.detach();
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    x = blocks_[b]->inverse(x, cond);
    if (b > 0) x = permute(x).detach();
  }
  return x;
}

Tensor standard_normal_log_prob(const Tensor& z) {
  const double dim = static_cast<double>(z.dim(z.rank() - 1));
  const double c = -0.5 * dim * std::log(2.0 * std::numbers::pi);
  return core::add_scalar(core::scale(core::sum_last(core::square(z)), -0.5), c);
}

Tensor FlowStack::log_prob(const Tensor& x, const Tensor& cond) const {
  FlowOutput out = forward(x, cond);
  return core::add(standard_normal_log_prob(out.z), out.logdet);
}

Tensor FlowStack::sample(std::size_t count, std::span<const double> cond, std::uint64_t seed) const {
  if (cond.size() != cfg_.cond_dim) throw DimensionError("sample condition has the wrong length");
  core::Rng rng(seed);
  std::vector<double> z(count * cfg_.dim);
  for (double& v : z) v = rng.normal();
  std::vector<double> c;
  c.reserve(count * cond.size());
  for (std::size_t r = 0; r < count; ++r) c.insert(c.end(), cond.begin(), cond.end());
  return inverse(Tensor({count, cfg_.dim}, std::move(z)), Tensor({count, cfg_.cond_dim}, std::move(c)));
}

std::vector<NamedTensor> FlowStack::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b]->collect("flow.block" + std::to_string(b), out);
  return out;
}

}  // namespace ganf::flow
