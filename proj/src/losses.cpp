#include "masksurf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "masksurf/autodiff/choices.hpp"
#include "masksurf/autodiff/ops.hpp"

namespace masksurf {

using namespace ad;

NormalMode parse_normal_mode(const std::string& name) {
  if (name == "unoriented") return NormalMode::unoriented;
  if (name == "oriented") return NormalMode::oriented;
  throw InvalidArgument("unknown normal mode '" + name + "' (unoriented|oriented)");
}

TargetScope parse_target_scope(const std::string& name) {
  if (name == "masked_only") return TargetScope::masked_only;
  if (name == "all_patches") return TargetScope::all_patches;
  throw InvalidArgument("unknown target scope '" + name + "' (masked_only|all_patches)");
}

const char* to_string(NormalMode m) {
  return m == NormalMode::unoriented ? "unoriented" : "oriented";
}

const char* to_string(TargetScope s) {
  return s == TargetScope::masked_only ? "masked_only" : "all_patches";
}

namespace {

struct PatchDims {
  std::size_t patches = 0;
  std::size_t k = 0;
};

PatchDims patch_dims(const Tensor& t, const char* op) {
  const auto& s = t.shape();
  if (s.size() < 2 || s.back() != 3) {
    throw InvalidArgument(std::string(op) + ": expected [..., K, 3], got " + to_string(s));
  }
  PatchDims d;
  d.k = s[s.size() - 2];
  if (d.k == 0) throw InvalidArgument(std::string(op) + ": K must be positive");
  d.patches = t.numel() / (3 * d.k);
  return d;
}

PatchDims matching_dims(const Tensor& a, const Tensor& b, const char* op) {
  const PatchDims da = patch_dims(a, op);
  const PatchDims db = patch_dims(b, op);
  if (da.k != db.k || da.patches != db.patches) {
    throw InvalidArgument(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                          to_string(b.shape()) + " differ in patch count or K");
  }
  return da;
}

Tensor flat_rows(const Tensor& t) { return reshape(t, {t.numel() / 3, 3}); }

// For each row of `from`, the flat index of its nearest row of `to` within
// the same patch.
std::vector<std::size_t> nearest_within_patch(std::span<const Real> from,
                                              std::span<const Real> to, PatchDims d) {
  std::vector<std::size_t> out(d.patches * d.k);
  for (std::size_t r = 0; r < d.patches; ++r) {
    for (std::size_t i = 0; i < d.k; ++i) {
      const Real* a = from.data() + (r * d.k + i) * 3;
      std::size_t best = 0;
      Real best_d = std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < d.k; ++j) {
        const Real* b = to.data() + (r * d.k + j) * 3;
        const Real dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
        const Real dist = dx * dx + dy * dy + dz * dz;
        if (dist < best_d) {
          best_d = dist;
          best = j;
        }
      }
      out[r * d.k + i] = r * d.k + best;
    }
  }
  return out;
}

// Mean over rows of the squared distance from each row of `a` to its paired
// row of `b`.
Tensor paired_sq_distance(const Tensor& a_rows, const Tensor& b_rows,
                          const std::vector<std::size_t>& pairing) {
  Tensor diff = a_rows - gather(b_rows, 0, pairing);
  return mean_all(sum_reduce(diff * diff, 1));
}

Tensor cosine_distance(const Tensor& a_unit, const Tensor& b_unit, NormalMode mode) {
  Tensor cos = sum_reduce(a_unit * b_unit, 1);
  Tensor m = mode == NormalMode::unoriented ? abs(cos) : cos;
  return subtract(Tensor::scalar(Real(1)), m);
}

}  // namespace

PatchPairing pair_patches(const Tensor& truth, const Tensor& pred) {
  const PatchDims d = matching_dims(truth, pred, "pair_patches");
  PatchPairing p;
  p.truth_to_pred = ad::hold_choice(nearest_within_patch(truth.values(), pred.values(), d));
  p.pred_to_truth = ad::hold_choice(nearest_within_patch(pred.values(), truth.values(), d));
  return p;
}

ChamferResult chamfer_distance(const Tensor& truth, const Tensor& pred) {
  ChamferResult r;
  r.pairing = pair_patches(truth, pred);
  const Tensor t = flat_rows(truth);
  const Tensor p = flat_rows(pred);
  // mean over all R*K rows == mean over patches of the per-patch 1/K sums
  r.value = paired_sq_distance(t, p, r.pairing.truth_to_pred) +
            paired_sq_distance(p, t, r.pairing.pred_to_truth);
  return r;
}

double normal_metric(const Vec3& n, const Vec3& n_hat, NormalMode mode) {
  const double fl = static_cast<double>(kNormFloor);
  const double c = n.dot(n_hat) / (std::max(n.norm(), fl) * std::max(n_hat.norm(), fl));
  return 1.0 - (mode == NormalMode::unoriented ? std::abs(c) : c);
}

Tensor normalize_rows(const Tensor& v, std::size_t* clamped) {
  const Tensor rows = flat_rows(v);
  Tensor sq = sum_reduce(rows * rows, 1);  // [rows]
  // Lift squared norms below floor^2 up to it with a constant offset, so the
  // sqrt and its derivative stay finite at zero-length predictions.
  const Real floor_sq = kNormFloor * kNormFloor;
  std::vector<Real> lift(sq.numel(), Real(0));
  bool any = false;
  for (std::size_t i = 0; i < lift.size(); ++i) {
    const Real s = sq.values()[i];
    if (s < floor_sq) {
      lift[i] = floor_sq - s;
      any = true;
      if (clamped) ++*clamped;
    }
  }
  if (any) sq = sq + Tensor::constant(sq.shape(), std::move(lift));
  Tensor inv = power(sqrt(sq), Real(-1));
  return rows * reshape(inv, {inv.numel(), 1});
}

Tensor pind_loss(const Tensor& truth_normals, const Tensor& pred_normals,
                 const PatchPairing& pairing, NormalMode mode, std::size_t* clamped) {
  const PatchDims d = matching_dims(truth_normals, pred_normals, "pind_loss");
  if (pairing.truth_to_pred.size() != d.patches * d.k ||
      pairing.pred_to_truth.size() != d.patches * d.k) {
    throw InvalidArgument("pind_loss: pairing does not match the normal patches");
  }
  const Tensor n = normalize_rows(truth_normals, clamped);
  const Tensor n_hat = normalize_rows(pred_normals, clamped);
  Tensor forward = cosine_distance(n, gather(n_hat, 0, pairing.truth_to_pred), mode);
  Tensor backward = cosine_distance(n_hat, gather(n, 0, pairing.pred_to_truth), mode);
  return mean_all(forward) + mean_all(backward);
}

Tensor pind_loss(const Tensor& truth_pos, const Tensor& pred_pos, const Tensor& truth_normals,
                 const Tensor& pred_normals, NormalMode mode) {
  return pind_loss(truth_normals, pred_normals, pair_patches(truth_pos, pred_pos), mode);
}

LossBreakdown total_loss(const Tensor& truth_pos, const Tensor& truth_normals,
                         const Tensor& pred_pos, const Tensor& pred_normals, double alpha,
                         NormalMode mode) {
  if (!(alpha >= 0.0)) throw InvalidArgument("total_loss: alpha must be >= 0");
  const PatchDims d = matching_dims(truth_pos, pred_pos, "total_loss");
  LossBreakdown out;
  out.alpha = alpha;
  ChamferResult cd = chamfer_distance(truth_pos, pred_pos);
  out.l_p = static_cast<double>(cd.value.item());
  if (!pred_normals.defined()) {
    if (alpha != 0.0) {
      throw InvalidArgument("total_loss: alpha > 0 needs a surfel head predicting normals");
    }
    out.total = cd.value;
    out.l_n = 0.0;
    out.l_all = out.l_p;
    return out;
  }
  const PatchDims dn = matching_dims(truth_normals, pred_normals, "total_loss");
  if (dn.patches != d.patches || dn.k != d.k) {
    throw InvalidArgument("total_loss: normal patches do not match position patches");
  }
  if (alpha == 0.0) {
    const Tensor ln = pind_loss(truth_normals.detach(), pred_normals.detach(), cd.pairing,
                                mode, &out.clamped_normals);
    out.l_n = static_cast<double>(ln.item());
    out.total = cd.value;
    out.l_all = out.l_p;
    return out;
  }
  const Tensor ln = pind_loss(truth_normals, pred_normals, cd.pairing, mode,
                              &out.clamped_normals);
  out.l_n = static_cast<double>(ln.item());
  out.total = cd.value + scale(ln, static_cast<Real>(alpha));
  out.l_all = static_cast<double>(out.total.item());
  return out;
}

}  // namespace masksurf
