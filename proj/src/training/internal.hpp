#pragma once

#include <span>
#include <utility>
#include <vector>

#include "masksurf/network.hpp"

namespace masksurf::train_detail {

/// Deep copy: fresh parameter storage with the same values.
MaskSurfModel clone_model(const MaskSurfModel& model);

/// Turns gradient tracking off for every parameter of a model while alive,
/// so evaluation builds no graph.
class NoGradScope {
 public:
  explicit NoGradScope(const MaskSurfModel& model);
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  std::vector<std::pair<Tensor, bool>> saved_;
};

/// Mean negative log-likelihood of `labels` under softmax(logits), logits [B, C].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Index of the largest logit per row; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

}  // namespace masksurf::train_detail
