#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ganf::core {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Storage shared by all handles of one tensor.
struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient flows in
  bool requires_grad = false;
  bool leaf = true;

  void accumulate_grad(std::span<const double> g);
  std::vector<double>& grad_buffer();
};

/// Dense row-major float64 array with optional gradient tracking.
///
/// A `Tensor` is a handle: copies alias the same storage, like a framework
/// tensor. Use `clone()` for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor identity(std::size_t n);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return values().size(); }

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  /// Marks a leaf as trainable. Only valid on leaves.
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// True when every element is finite.
  bool all_finite() const;
  /// Fresh leaf with the same values and no gradient history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<TensorData>& impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<TensorData> impl);

 private:
  std::shared_ptr<TensorData> impl_;
};

using BackwardFn = std::function<void(const TensorData& out)>;

/// Ordered record of differentiable operations.
///
/// Entries are replayed in reverse by `backward`. A tape may be replayed
/// once; `clear()` resets it for the next step.
class Tape {
 public:
  void record(std::shared_ptr<TensorData> output, BackwardFn fn);
  /// Populates grad of every requires_grad leaf reachable from `loss`.
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

 private:
  struct Entry {
    std::shared_ptr<TensorData> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool replayed_ = false;
};

/// Makes `tape` the recording target of the current thread for its lifetime.
class TapeGuard {
 public:
  explicit TapeGuard(Tape& tape);
  ~TapeGuard();
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on the current thread for its lifetime.
class NoTapeGuard {
 public:
  NoTapeGuard();
  ~NoTapeGuard();
  NoTapeGuard(const NoTapeGuard&) = delete;
  NoTapeGuard& operator=(const NoTapeGuard&) = delete;

 private:
  Tape* previous_;
};

/// Tape active on this thread, or nullptr when ops run without recording.
Tape* active_tape() noexcept;

}  // namespace ganf::core
