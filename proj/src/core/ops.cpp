#include "ganf/core/ops.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "ganf/core/errors.hpp"
#include "ganf/core/expm.hpp"

namespace ganf::core {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using DataPtr = std::shared_ptr<TensorData>;

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Shape of a binary elementwise result; the smaller operand repeats.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw DimensionError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                       " do not conform");
}

void accumulate_reduced(TensorData& dst, std::span<const double> g) {
  // g has the broadcast shape; fold it onto dst's (suffix) shape.
  auto& buf = dst.grad_buffer();
  const std::size_t n = buf.size();
  for (std::size_t k = 0; k < g.size(); ++k) buf[k % n] += g[k];
}

template <typename F, typename G>
Tensor unary(const Tensor& a, F forward, G derivative) {
  const auto in = a.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  bool rec = false;
  Tensor result = detail::make_result(a.shape(), std::move(out), {&a}, rec);
  if (rec) {
    DataPtr pa = a.impl();
    detail::record(result, [pa, derivative](const TensorData& o) {
      if (!pa->requires_grad) return;
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * derivative(pa->value[i], o.value[i]);
    });
  }
  return result;
}

RowMat to_eigen(const Tensor& t) {
  return ConstMap(t.values().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

}  // namespace

namespace detail {

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
                   bool& record) {
  Tensor out(std::move(shape), std::move(values));
  record = false;
  if (active_tape() != nullptr) {
    for (const Tensor* t : inputs) {
      if (t->requires_grad()) {
        record = true;
        break;
      }
    }
  }
  if (record) {
    out.impl()->requires_grad = true;
    out.impl()->leaf = false;
  }
  return out;
}

void record(const Tensor& out, BackwardFn fn) { active_tape()->record(out.impl(), std::move(fn)); }

}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: shapes " + shape_string(sa) + " and " + shape_string(sb) + " do not conform");
  };
  if (sa.size() < 2 || sb.size() < 2 || sa.size() > 3 || sb.size() > 3) throw mismatch();
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  if (sb[sb.size() - 2] != k) throw mismatch();

  const std::size_t batch_a = sa.size() == 3 ? sa[0] : 1;
  const std::size_t batch_b = sb.size() == 3 ? sb[0] : 1;
  if (sa.size() == 3 && sb.size() == 3 && batch_a != batch_b) throw mismatch();
  const std::size_t batch = std::max(batch_a, batch_b);
  const bool out3 = sa.size() == 3 || sb.size() == 3;

  std::vector<double> out(batch * m * n);
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  if (sb.size() == 2) {
    // Shared right operand: fold the batch into the rows.
    MutMap(out.data(), ei(batch * m), ei(n)).noalias() =
        ConstMap(a.values().data(), ei(batch * m), ei(k)) * ConstMap(b.values().data(), ei(k), ei(n));
  } else {
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const double* pa = a.values().data() + (batch_a == 1 ? 0 : bi * m * k);
      const double* pb = b.values().data() + bi * k * n;
      MutMap(out.data() + bi * m * n, ei(m), ei(n)).noalias() = ConstMap(pa, ei(m), ei(k)) * ConstMap(pb, ei(k), ei(n));
    }
  }

  Shape shape = out3 ? Shape{batch, m, n} : Shape{m, n};
  bool rec = false;
  Tensor result = detail::make_result(std::move(shape), std::move(out), {&a, &b}, rec);
  if (rec) {
    DataPtr pa = a.impl();
    DataPtr pb = b.impl();
    detail::record(result, [pa, pb, batch, batch_a, m, k, n, ei](const TensorData& o) {
      const bool b_shared = pb->shape.size() == 2;
      if (b_shared) {
        ConstMap g(o.grad.data(), ei(batch * m), ei(n));
        ConstMap av(pa->value.data(), ei(batch * m), ei(k));
        ConstMap bv(pb->value.data(), ei(k), ei(n));
        if (pa->requires_grad) MutMap(pa->grad_buffer().data(), ei(batch * m), ei(k)).noalias() += g * bv.transpose();
        if (pb->requires_grad) MutMap(pb->grad_buffer().data(), ei(k), ei(n)).noalias() += av.transpose() * g;
        return;
      }
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const std::size_t off_a = batch_a == 1 ? 0 : bi * m * k;
        ConstMap g(o.grad.data() + bi * m * n, ei(m), ei(n));
        ConstMap av(pa->value.data() + off_a, ei(m), ei(k));
        ConstMap bv(pb->value.data() + bi * k * n, ei(k), ei(n));
        if (pa->requires_grad) MutMap(pa->grad_buffer().data() + off_a, ei(m), ei(k)).noalias() += g * bv.transpose();
        if (pb->requires_grad) MutMap(pb->grad_buffer().data() + bi * k * n, ei(k), ei(n)).noalias() += av.transpose() * g;
      }
    });
  }
  return result;
}

namespace {

enum class BinOp { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  Shape shape = broadcast_shape(a.shape(), b.shape(), name);
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t total = shape_numel(shape);
  const std::size_t na = av.size();
  const std::size_t nb = bv.size();
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) {
    const double x = av[i % na];
    const double y = bv[i % nb];
    out[i] = op == BinOp::kAdd ? x + y : op == BinOp::kSub ? x - y : x * y;
  }
  bool rec = false;
  Tensor result = detail::make_result(std::move(shape), std::move(out), {&a, &b}, rec);
  if (rec) {
    DataPtr pa = a.impl();
    DataPtr pb = b.impl();
    detail::record(result, [pa, pb, op](const TensorData& o) {
      const std::size_t total = o.grad.size();
      if (op == BinOp::kMul) {
        std::vector<double> tmp(total);
        if (pa->requires_grad) {
          for (std::size_t i = 0; i < total; ++i) tmp[i] = o.grad[i] * pb->value[i % pb->value.size()];
          accumulate_reduced(*pa, tmp);
        }
        if (pb->requires_grad) {
          for (std::size_t i = 0; i < total; ++i) tmp[i] = o.grad[i] * pa->value[i % pa->value.size()];
          accumulate_reduced(*pb, tmp);
        }
        return;
      }
      if (pa->requires_grad) accumulate_reduced(*pa, o.grad);
      if (pb->requires_grad) {
        if (op == BinOp::kAdd) {
          accumulate_reduced(*pb, o.grad);
        } else {
          std::vector<double> neg(o.grad.size());
          for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -o.grad[i];
          accumulate_reduced(*pb, neg);
        }
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul, "mul"); }

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor reciprocal(const Tensor& a) {
  for (double v : a.values()) {
    if (v == 0.0) throw DomainError("reciprocal of zero");
  }
  return unary(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  bool rec = false;
  Tensor result = detail::make_result(Shape{}, {s}, {&a}, rec);
  if (rec) {
    DataPtr pa = a.impl();
    detail::record(result, [pa](const TensorData& o) {
      auto& g = pa->grad_buffer();
      for (double& x : g) x += o.grad[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  const auto n = a.numel();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Tensor sum_last(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.empty()) throw DimensionError("sum_last on a scalar");
  const std::size_t inner = s.back();
  const std::size_t outer = a.numel() / std::max<std::size_t>(inner, 1);
  std::vector<double> out(outer, 0.0);
  const auto v = a.values();
  for (std::size_t r = 0; r < outer; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < inner; ++c) acc += v[r * inner + c];
    out[r] = acc;
  }
  Shape shape(s.begin(), s.end() - 1);
  bool rec = false;
  Tensor result = detail::make_result(std::move(shape), std::move(out), {&a}, rec);
  if (rec) {
    DataPtr pa = a.impl();
    detail::record(result, [pa, inner, outer](const TensorData& o) {
      auto& g = pa->grad_buffer();
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t c = 0; c < inner; ++c) g[r * inner + c] += o.grad[r];
    });
  }
  return result;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + shape_string(first));
  Shape shape = first;
  shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + shape_string(s) + " does not match " + shape_string(first));
    shape[axis] += s[axis];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  const std::size_t row = shape[axis] * inner;
  std::vector<double> out(shape_numel(shape));
  std::size_t offset = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    const std::size_t chunk = p.dim(axis) * inner;
    const auto v = p.values();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.data() + o * chunk, chunk, out.data() + o * row + offset);
    offset += chunk;
    any_grad = any_grad || p.requires_grad();
  }

  Tensor result(std::move(shape), std::move(out));
  if (any_grad && active_tape() != nullptr) {
    result.impl()->requires_grad = true;
    result.impl()->leaf = false;
    std::vector<DataPtr> inputs;
    inputs.reserve(parts.size());
    for (const Tensor& p : parts) inputs.push_back(p.impl());
    detail::record(result, [inputs, axis, outer, inner, row](const TensorData& o) {
      std::size_t offset = 0;
      for (const auto& p : inputs) {
        const std::size_t chunk = p->shape[axis] * inner;
        if (p->requires_grad) {
          auto& g = p->grad_buffer();
          for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t c = 0; c < chunk; ++c) g[r * chunk + c] += o.grad[r * row + offset + c];
        }
        offset += chunk;
      }
    });
  }
  return result;
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " out of range for " + shape_string(s));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t src_row = s[axis] * inner;
  const std::size_t chunk = (end - begin) * inner;
  const std::size_t off = begin * inner;
  std::vector<double> out(outer * chunk);
  const auto v = a.values();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.data() + o * src_row + off, chunk, out.data() + o * chunk);
  Shape shape = s;
  shape[axis] = end - begin;
  bool rec = false;
  Tensor result = detail::make_result(std::move(shape), std::move(out), {&a}, rec);
  if (rec) {
    DataPtr pa = a.impl();
    detail::record(result, [pa, outer, src_row, chunk, off](const TensorData& o) {
      auto& g = pa->grad_buffer();
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t c = 0; c < chunk; ++c) g[r * src_row + off + c] += o.grad[r * chunk + c];
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_string(s));
  const std::size_t r = s[s.size() - 2];
  const std::size_t c = s.back();
  const std::size_t batch = a.numel() / std::max<std::size_t>(r * c, 1);
  std::vector<double> out(a.numel());
  const auto v = a.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = v[b * r * c + i * c + j];
  Shape shape = s;
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  bool rec = false;
  Tensor result = detail::make_result(std::move(shape), std::move(out), {&a}, rec);
  if (rec) {
    DataPtr pa = a.impl();
    detail::record(result, [pa, batch, r, c](const TensorData& o) {
      auto& g = pa->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[b * r * c + i * c + j] += o.grad[b * r * c + j * r + i];
    });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  bool rec = false;
  Tensor result = detail::make_result(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()),
                                      {&a}, rec);
  if (rec) {
    DataPtr pa = a.impl();
    detail::record(result, [pa](const TensorData& o) { pa->accumulate_grad(o.grad); });
  }
  return result;
}

Tensor trace(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.size() != 2 || s[0] != s[1]) throw DimensionError("trace needs a square matrix, got " + shape_string(s));
  const std::size_t n = s[0];
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) t += a.values()[i * n + i];
  bool rec = false;
  Tensor result = detail::make_result(Shape{}, {t}, {&a}, rec);
  if (rec) {
    DataPtr pa = a.impl();
    detail::record(result, [pa, n](const TensorData& o) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i * n + i] += o.grad[0];
    });
  }
  return result;
}

Tensor matrix_exponential(const Tensor& m) {
  const Shape& s = m.shape();
  if (s.size() != 2 || s[0] != s[1]) {
    throw DimensionError("matrix exponential needs a square matrix, got " + shape_string(s));
  }
  const auto n = static_cast<Eigen::Index>(s[0]);
  const Eigen::MatrixXd e = expm(to_eigen(m));
  std::vector<double> out(static_cast<std::size_t>(n * n));
  MutMap(out.data(), n, n) = e;
  bool rec = false;
  Tensor result = detail::make_result(s, std::move(out), {&m}, rec);
  if (rec) {
    DataPtr pm = m.impl();
    detail::record(result, [pm, n](const TensorData& o) {
      const Eigen::MatrixXd mv = ConstMap(pm->value.data(), n, n);
      const Eigen::MatrixXd g = ConstMap(o.grad.data(), n, n);
      const Eigen::MatrixXd adj = expm_frechet_adjoint(mv, g);
      MutMap(pm->grad_buffer().data(), n, n) += adj;
    });
  }
  return result;
}

}  // namespace ganf::core
