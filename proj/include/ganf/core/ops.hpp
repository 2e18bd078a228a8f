#pragma once

#include <span>
#include <vector>

#include "ganf/core/tensor.hpp"

// Differentiable primitives. Every op records itself on the active tape when
// at least one input requires grad; otherwise it only computes values.
//
// Binary elementwise ops accept identical shapes, or a right operand whose
// shape equals the trailing extents of the left one (broadcast over the
// leading batch axes).
namespace ganf::core {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
/// 1/x; throws DomainError on zero.
Tensor reciprocal(const Tensor& a);

/// Sum of all elements, as a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Reduces the last axis.
Tensor sum_last(const Tensor& a);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor trace(const Tensor& a);
/// e^M for a square matrix, differentiable through the Frechet adjoint.
Tensor matrix_exponential(const Tensor& m);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

namespace detail {
/// Creates the output of an op, wiring it to the active tape when needed.
/// Returns true in `record` when the caller must register a backward closure.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
                   bool& record);
void record(const Tensor& out, BackwardFn fn);
}  // namespace detail

}  // namespace ganf::core
