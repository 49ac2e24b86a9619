#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "masksurf/autodiff/tensor.hpp"

namespace masksurf::ad {

// Differentiable primitives. Each returns a fresh node; a graph edge is
// recorded only when at least one input requires gradients. Shape contract
// violations throw InvalidArgument.

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);

/// [m,k]x[k,n] -> [m,n], or batched [B,m,k]x[B,k,n] -> [B,m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
/// Axis permutation: output axis i is input axis perm[i].
Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Selects `indices` (repeats allowed) along `axis`; backward scatter-adds.
Tensor gather(const Tensor& x, std::size_t axis,
              const std::vector<std::size_t>& indices);

/// Softmax over the last axis.
Tensor softmax(const Tensor& x);
/// Normalizes over the last axis, then applies per-feature gamma and beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Real eps = Real(1e-5));
/// tanh approximation.
Tensor gelu(const Tensor& x);

/// Max over `axis` (removed from the shape). Ties go to the lowest index,
/// which receives the whole subgradient.
Tensor max_reduce(const Tensor& x, std::size_t axis);
Tensor mean_reduce(const Tensor& x, std::size_t axis);
Tensor sum_reduce(const Tensor& x, std::size_t axis);
/// Reductions over every element, returning a rank-0 tensor.
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

Tensor power(const Tensor& x, Real exponent);
Tensor abs(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor log(const Tensor& x);

// Compositions of the primitives above.
Tensor scale(const Tensor& x, Real factor);
Tensor add_scalar(const Tensor& x, Real value);
/// x @ weight + bias over the last axis of x; weight is [in, out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor linear(const Tensor& x, const Tensor& weight);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) {
  return subtract(a, b);
}
inline Tensor operator*(const Tensor& a, const Tensor& b) {
  return multiply(a, b);
}

}  // namespace masksurf::ad
