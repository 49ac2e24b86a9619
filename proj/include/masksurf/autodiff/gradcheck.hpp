#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "masksurf/autodiff/tensor.hpp"

namespace masksurf::ad {

struct GradCheckOptions {
  Real eps = Real(1e-5);
  Real tol = Real(1e-4);
  // Relative error denominator is max(|analytic|, |numeric|, floor).
  Real denominator_floor = Real(1e-8);
  // 0 = every coordinate; otherwise a seeded subset of this many per array.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Central stencil accuracy: 2 uses f(x±h), 4 also uses f(x±2h).
  int order = 2;
  // Replay the base point's discrete choices in perturbed evaluations.
  bool hold_choices = false;
};

struct GradCheckReport {
  Real max_rel_error = 0;
  Real max_abs_error = 0;
  std::size_t coords_checked = 0;
  bool finite = true;
  bool pass = true;
  std::string worst;  // "<array>[<index>]" of the worst coordinate
  std::string message;
};

/// Compares backward() gradients of `fn(x)` against central differences in
/// every coordinate of the leaf `x`. A non-finite value at a perturbed point
/// is reported (finite = false, pass = false) rather than thrown.
GradCheckReport finite_difference_check(const std::function<Tensor(const Tensor&)>& fn,
                                        Tensor x, const GradCheckOptions& opts = {});

/// Same check over several named leaves of a closure, e.g. all parameters of
/// a model. Grads on the leaves are overwritten.
GradCheckReport finite_difference_check(
    const std::function<Tensor()>& fn,
    const std::vector<std::pair<std::string, Tensor>>& leaves,
    const GradCheckOptions& opts = {});

}  // namespace masksurf::ad
