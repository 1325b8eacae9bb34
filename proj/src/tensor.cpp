#include "skipxl/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "skipxl/errors.hpp"

namespace skipxl {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

void TensorImpl::accumulate(std::size_t i, double g) {
  if (stop_gradient || !requires_grad) return;
  grad_buffer()[i] += g;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->value.assign(shape_numel(shape), value);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values,
                           bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("Tensor::from_values: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->value = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->value.size(); }

std::span<const double> Tensor::values() const { return impl_->value; }
std::span<double> Tensor::mutable_values() { return impl_->value; }

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return impl_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return impl_->value[row * impl_->shape.back() + col];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (impl_->stop_gradient && flag) {
    throw UsageError("cannot require grad on a stop-gradient tensor");
  }
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_stop_gradient() const { return impl_->stop_gradient; }
bool Tensor::is_leaf() const { return !impl_->backward_fn; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::vector<double> Tensor::grad_or_zero() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return impl_->grad_buffer(); }
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone(bool requires_grad) const {
  return from_values(shape(), impl_->value, requires_grad);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  }
  if (impl_->consumed) {
    throw UsageError("backward() called twice on the same recorded graph");
  }
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS; each node appears once in `order`. The order list
  // owns the nodes so that clearing a node's inputs cannot free pending ones.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(impl_, 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->inputs.size()) {
      std::shared_ptr<TensorImpl> child = top.first->inputs[top.second++];
      if (child->requires_grad && !seen.count(child.get())) {
        seen.insert(child.get());
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  impl_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = it->get();
    if (!node->backward_fn) continue;
    if (node->consumed) throw UsageError("backward() through an already consumed graph");
    if (!node->grad.empty()) node->backward_fn(*node);
    node->consumed = true;
    node->backward_fn = nullptr;
    node->inputs.clear();
  }
  impl_->consumed = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   BackwardFn fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(values);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      impl->requires_grad = true;
      impl->inputs.reserve(inputs.size());
      for (const auto& t : inputs) impl->inputs.push_back(t.shared_impl());
      impl->backward_fn = std::move(fn);
    }
  }
  return Tensor(std::move(impl));
}

}  // namespace skipxl
