#include "masksurf/autodiff/ops.hpp"
#include "masksurf/rng.hpp"
#include "masksurf/training.hpp"

namespace masksurf {

using namespace ad;

namespace {

enum : std::uint64_t { kAugmentStream = 1, kFpsStream = 2, kMaskStream = 3 };

void append_rows(std::vector<Real>& out, std::span<const Vec3> rows) {
  for (const auto& v : rows) {
    out.push_back(static_cast<Real>(v.x()));
    out.push_back(static_cast<Real>(v.y()));
    out.push_back(static_cast<Real>(v.z()));
  }
}

}  // namespace

PreparedSample prepare_sample(const SurfelCloud& cloud, const ModelConfig& model,
                              const PipelineOptions& opts, std::uint64_t seed) {
  const SurfelCloud src =
      opts.augment ? augment(cloud, *opts.augment, derive_seed(seed, {kAugmentStream})) : cloud;
  const FpsResult fps =
      farthest_point_sample(src.positions, model.patch_count, derive_seed(seed, {kFpsStream}));
  const PatchGrouping g = knn_group(src.positions, fps.centers, model.patch_size);
  const std::vector<Vec3> normals = group_by_indices(src.normals.normals, g);
  const std::size_t n = g.patch_count();
  const std::size_t k = g.patch_size;

  PreparedSample s;
  if (!opts.apply_mask) {
    s.partition.masked.assign(n, 0);
    s.visible = n;
    s.centers = g.centers;
    s.points = g.patches;
    s.normals = normals;
    return s;
  }
  const std::uint64_t mseed = derive_seed(seed, {kMaskStream});
  s.partition = opts.mask.strategy == MaskStrategy::random
                    ? random_mask(n, opts.mask.ratio, mseed)
                    : block_mask(g.centers, opts.mask.ratio, mseed);
  const PatchSplit pts = split_by_mask(g.patches, k, s.partition);
  const PatchSplit nrm = split_by_mask(normals, k, s.partition);
  s.visible = pts.visible_ids.size();
  s.masked = pts.masked_ids.size();
  s.centers = select_patches(g.centers, 1, pts.visible_ids);
  const auto masked_centers = select_patches(g.centers, 1, pts.masked_ids);
  s.centers.insert(s.centers.end(), masked_centers.begin(), masked_centers.end());
  s.points = pts.visible;
  s.points.insert(s.points.end(), pts.masked.begin(), pts.masked.end());
  s.normals = nrm.visible;
  s.normals.insert(s.normals.end(), nrm.masked.begin(), nrm.masked.end());
  return s;
}

SurfelBatch make_batch(std::span<const PreparedSample> samples, const ModelConfig& model,
                       TargetScope scope) {
  if (samples.empty()) throw InvalidArgument("make_batch: empty batch");
  const std::size_t k = model.patch_size;
  SurfelBatch b;
  b.batch = samples.size();
  b.visible = samples[0].visible;
  b.masked = samples[0].masked;
  const std::size_t n = b.visible + b.masked;
  const std::size_t first_target = scope == TargetScope::masked_only ? b.visible : 0;
  const std::size_t r = n - first_target;

  std::vector<Real> vp, vc, ac, tp, tn;
  vp.reserve(b.batch * b.visible * k * 3);
  tp.reserve(b.batch * r * k * 3);
  tn.reserve(b.batch * r * k * 3);
  for (const auto& s : samples) {
    if (s.visible != b.visible || s.masked != b.masked || s.points.size() != n * k) {
      throw InvalidArgument("make_batch: samples differ in patch counts");
    }
    const std::span<const Vec3> pts(s.points);
    const std::span<const Vec3> nrm(s.normals);
    const std::span<const Vec3> ctr(s.centers);
    append_rows(vp, pts.subspan(0, b.visible * k));
    append_rows(vc, ctr.subspan(0, b.visible));
    append_rows(ac, ctr);
    append_rows(tp, pts.subspan(first_target * k));
    append_rows(tn, nrm.subspan(first_target * k));
  }
  b.visible_points = Tensor::constant({b.batch, b.visible, k, 3}, std::move(vp));
  b.visible_centers = Tensor::constant({b.batch, b.visible, 3}, std::move(vc));
  b.all_centers = Tensor::constant({b.batch, n, 3}, std::move(ac));
  b.target_points = Tensor::constant({b.batch, r, k, 3}, std::move(tp));
  b.target_normals = Tensor::constant({b.batch, r, k, 3}, std::move(tn));
  return b;
}

SurfelPrediction predict_batch(const MaskSurfModel& model, const SurfelBatch& b,
                               TargetScope scope) {
  const Tensor tokens = model.embed_tokens(b.visible_points);
  const Tensor pe_vis = model.positional_embed(b.visible_centers, PeKind::encoder);
  const Tensor encoded = model.encode(tokens, pe_vis);
  const Tensor pe_all = model.positional_embed(b.all_centers, PeKind::decoder);
  const Tensor decoded =
      model.decode(encoded, b.masked, pe_all, scope == TargetScope::all_patches);
  return model.predict_surfels(decoded);
}

LossBreakdown surfel_objective(const MaskSurfModel& model, const SurfelBatch& b, double alpha,
                               NormalMode mode, TargetScope scope) {
  const SurfelPrediction pred = predict_batch(model, b, scope);
  return total_loss(b.target_points, b.target_normals, pred.positions, pred.normals, alpha, mode);
}

Tensor encode_full(const MaskSurfModel& model, std::span<const PreparedSample> samples) {
  if (samples.empty()) throw InvalidArgument("encode_full: empty batch");
  const std::size_t k = model.config().patch_size;
  const std::size_t n = samples[0].centers.size();
  std::vector<Real> pts, ctr;
  pts.reserve(samples.size() * n * k * 3);
  for (const auto& s : samples) {
    if (s.centers.size() != n || s.masked != 0) {
      throw InvalidArgument("encode_full: samples must be unmasked with equal patch counts");
    }
    append_rows(pts, s.points);
    append_rows(ctr, s.centers);
  }
  const Tensor patches = Tensor::constant({samples.size(), n, k, 3}, std::move(pts));
  const Tensor centers = Tensor::constant({samples.size(), n, 3}, std::move(ctr));
  return model.encode(model.embed_tokens(patches),
                      model.positional_embed(centers, PeKind::encoder));
}

ad::GradCheckReport end_to_end_gradcheck(const ModelConfig& model, double alpha, NormalMode mode,
                                         const ad::GradCheckOptions& opts, std::uint64_t seed) {
  model.validate();
  MaskSurfModel m(model, seed);
  m.set_requires_grad(m.named_parameters(), true);
  const std::size_t points = std::max<std::size_t>(64, 2 * model.patch_count * model.patch_size);
  PipelineOptions popts;
  popts.mask.ratio = 0.5;
  std::vector<PreparedSample> samples;
  const ShapeKind kinds[] = {ShapeKind::torus, ShapeKind::box};
  for (std::size_t i = 0; i < 2; ++i) {
    const ShapeSpec spec = random_shape_spec(kinds[i], i, derive_seed(seed, {100, i}));
    const SurfelCloud cloud = synth_shape(spec, points, derive_seed(seed, {101, i}));
    samples.push_back(prepare_sample(cloud, model, popts, derive_seed(seed, {102, i})));
  }
  const SurfelBatch batch = make_batch(samples, model, TargetScope::masked_only);
  auto fn = [&]() {
    return surfel_objective(m, batch, alpha, mode, TargetScope::masked_only).total;
  };
  ad::GradCheckOptions held = opts;
  held.hold_choices = true;
  return ad::finite_difference_check(fn, m.named_parameters(), held);
}

}  // namespace masksurf
