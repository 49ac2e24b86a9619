#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "masksurf/autodiff/tensor.hpp"

namespace masksurf {

using ad::Tensor;

enum class NormalMode { unoriented, oriented };
enum class TargetScope { masked_only, all_patches };

NormalMode parse_normal_mode(const std::string& name);
TargetScope parse_target_scope(const std::string& name);
const char* to_string(NormalMode m);
const char* to_string(TargetScope s);

/// Predicted-normal norms below this are clamped before normalization.
inline constexpr Real kNormFloor = Real(1e-8);

/// Position nearest-neighbour pairing between two batches of patches.
/// Both are flat row indices into the [R*K] row layout of the other side.
struct PatchPairing {
  std::vector<std::size_t> truth_to_pred;  // argmin_k' |p_k - p^_k'|^2
  std::vector<std::size_t> pred_to_truth;  // argmin_k' |p^_k - p_k'|^2
};

/// Computed from values only; lowest index wins ties. Inputs are [R, K, 3]
/// (or [K, 3]).
PatchPairing pair_patches(const Tensor& truth, const Tensor& pred);

struct ChamferResult {
  Tensor value;  // scalar, mean over patches of per-patch CD
  PatchPairing pairing;
};

/// Symmetric Chamfer distance with squared distances, averaged over the R
/// patches. Differentiable in both inputs; the pairing is constant.
ChamferResult chamfer_distance(const Tensor& truth, const Tensor& pred);

/// 1 - |cos| (unoriented) or 1 - cos (oriented) for plain vectors. Norms are
/// clamped to kNormFloor.
double normal_metric(const Vec3& n, const Vec3& n_hat, NormalMode mode);

/// Row-wise unit vectors of an [..., 3] tensor with the norm floor applied.
/// `clamped` (optional) is incremented once per clamped row.
Tensor normalize_rows(const Tensor& v, std::size_t* clamped = nullptr);

/// Position-indexed normal distance, averaged over patches. Normals are paired
/// through the position argmins of `pairing`.
Tensor pind_loss(const Tensor& truth_normals, const Tensor& pred_normals,
                 const PatchPairing& pairing, NormalMode mode,
                 std::size_t* clamped = nullptr);
/// Convenience overload computing the pairing from positions.
Tensor pind_loss(const Tensor& truth_pos, const Tensor& pred_pos,
                 const Tensor& truth_normals, const Tensor& pred_normals, NormalMode mode);

struct LossBreakdown {
  Tensor total;        // differentiable l_all
  double l_p = 0.0;
  double l_n = 0.0;
  double l_all = 0.0;  // == l_p + alpha * l_n
  double alpha = 0.0;
  std::size_t clamped_normals = 0;
};

/// l_p + alpha * l_n over the supervised patches [R, K, 3]. When alpha is 0,
/// l_n is still reported but carries no gradient. `pred_normals` may be
/// undefined for a point-only head (then alpha must be 0 and l_n is 0).
LossBreakdown total_loss(const Tensor& truth_pos, const Tensor& truth_normals,
                         const Tensor& pred_pos, const Tensor& pred_normals, double alpha,
                         NormalMode mode);

}  // namespace masksurf
