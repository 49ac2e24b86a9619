#include "masksurf/autodiff/tensor.hpp"

#include <algorithm>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <sstream>
#include <unordered_set>

namespace masksurf::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::subtract: return "subtract";
    case Op::multiply: return "multiply";
    case Op::matmul: return "matmul";
    case Op::reshape: return "reshape";
    case Op::transpose: return "transpose";
    case Op::concat: return "concat";
    case Op::gather: return "gather";
    case Op::softmax: return "softmax";
    case Op::layer_norm: return "layer_norm";
    case Op::gelu: return "gelu";
    case Op::max_reduce: return "max_reduce";
    case Op::mean_reduce: return "mean_reduce";
    case Op::sum_reduce: return "sum_reduce";
    case Op::power: return "power";
    case Op::abs: return "abs";
    case Op::sqrt: return "sqrt";
    case Op::log: return "log";
  }
  return "?";
}

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<Real> values,
                                        bool requires_grad) {
  if (values.size() != numel(shape)) {
    throw InvalidArgument("tensor: " + std::to_string(values.size()) +
                          " values for shape " + to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::make_shared<std::vector<Real>>(std::move(values));
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& n) {
  if (!n) throw InvalidArgument("tensor: use of undefined tensor");
  return *n;
}

}  // namespace

Tensor Tensor::constant(Shape shape, std::vector<Real> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::parameter(Shape shape, std::vector<Real> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const auto n = ad::numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<Real>(n, value),
                          requires_grad));
}

Tensor Tensor::scalar(Real value) { return constant({}, {value}); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw InvalidArgument("tensor: axis " + std::to_string(axis) +
                          " out of range for shape " + to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).data->size(); }

std::span<const Real> Tensor::values() const { return *checked(node_).data; }

std::span<Real> Tensor::mutable_values() {
  checked(node_);
  if (node_->op != Op::leaf) {
    throw InvalidArgument("tensor: only leaves expose mutable values");
  }
  return *node_->data;
}

Real Tensor::item() const {
  if (numel() != 1) {
    throw InvalidArgument("tensor: item() on shape " + to_string(shape()));
  }
  return (*node_->data)[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  checked(node_);
  if (node_->op != Op::leaf) {
    throw InvalidArgument("tensor: requires_grad can only be set on leaves");
  }
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

bool Tensor::is_leaf() const { return checked(node_).op == Op::leaf; }

Op Tensor::op() const { return checked(node_).op; }

std::span<const Real> Tensor::grad() const { return checked(node_).grad; }

std::span<Real> Tensor::mutable_grad() {
  checked(node_);
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  checked(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

Tensor Tensor::detach() const {
  checked(node_);
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  checked(node_);
  if (node_->data->size() != 1) {
    throw InvalidArgument("backward: root must be scalar, got shape " +
                          to_string(node_->shape));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS over nodes that require grad.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior grads are rebuilt from scratch; leaf grads accumulate.
  for (auto* n : order) {
    if (n->op != Op::leaf) n->grad.assign(n->data->size(), Real(0));
  }
  node_->ensure_grad()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->op == Op::leaf) continue;
    if (n->backward_fn) n->backward_fn(*n);
    if (n != node_.get()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

void keep_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 1 << 28);
#endif
}

}  // namespace masksurf::ad
