#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace skipxl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;
using BackwardFn = std::function<void(TensorImpl& self)>;

// Node of the recorded gradient graph. Each non-leaf node keeps references to
// its inputs and a closure that pushes self.grad into the inputs' grads.
struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool stop_gradient = false;
  bool consumed = false;  // set once backward has run through this node
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward_fn;

  // Adds `g` into grad, allocating on first use. Stop-gradient nodes ignore it.
  void accumulate(std::size_t i, double g);
  std::vector<double>& grad_buffer();
};

// Shared handle to a dense row-major array of doubles. Copies alias.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> values() const;
  // Mutable access is for leaves (parameters, inputs); mutating a tensor that
  // sits inside a recorded graph invalidates its grads.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_stop_gradient() const;
  bool is_leaf() const;

  bool has_grad() const;
  // All-zero span of numel entries when no grad was accumulated.
  std::vector<double> grad_or_zero() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode pass from a scalar. Each recorded graph can be traversed once.
  void backward() const;

  bool same_object(const Tensor& other) const { return impl_ == other.impl_; }
  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared_impl() const { return impl_; }

  // Deep copy of the values into a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Whether new operations record their inputs for backward (thread-local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Result tensor of an operation. Records `inputs` and `fn` only when grad mode
// is on and at least one input needs a gradient.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, BackwardFn fn);

}  // namespace skipxl
