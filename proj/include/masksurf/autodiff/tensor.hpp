#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "masksurf/common.hpp"

namespace masksurf::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Operation recorded on a graph node.
enum class Op {
  leaf,
  add,
  subtract,
  multiply,
  matmul,
  reshape,
  transpose,
  concat,
  gather,
  softmax,
  layer_norm,
  gelu,
  max_reduce,
  mean_reduce,
  sum_reduce,
  power,
  abs,
  sqrt,
  log,
};

const char* op_name(Op op);

namespace detail {

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<Real>> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  Op op = Op::leaf;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<Real>& ensure_grad() {
    if (grad.size() != data->size()) grad.assign(data->size(), Real(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major n-d array taking part in reverse-mode differentiation.
///
/// A Tensor is a cheap handle; copies share the underlying node. Leaves are
/// created with `constant` or `parameter`; every op in ops.hpp returns a new
/// node that remembers its parents when any input requires gradients.
/// A graph belongs to one thread at a time.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<Real> values);
  static Tensor parameter(Shape shape, std::vector<Real> values);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Real> values() const;
  /// Writable view of a leaf's values (parameters are updated in place).
  std::span<Real> mutable_values();
  Real item() const;
  Real at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  Op op() const;

  /// Accumulated gradient; empty until a backward pass reaches this node.
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  /// A constant sharing this tensor's values, cut from the graph.
  Tensor detach() const;

  /// Accumulates d(this)/d(leaf) into every requires_grad leaf reachable from
  /// this node. Throws InvalidArgument unless this tensor holds one element.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Keeps freed activation buffers in the process heap instead of returning
/// them to the OS, so each training step does not pay for fresh page faults.
/// glibc only; a no-op elsewhere.
void keep_freed_memory();

}  // namespace masksurf::ad
