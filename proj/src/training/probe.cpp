#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "internal.hpp"
#include "masksurf/rng.hpp"
#include "masksurf/training.hpp"

namespace masksurf {

namespace {

enum : std::uint64_t {
  kDecoderInit = 31,
  kShuffleStream = 32,
  kSampleStream = 33,
  kEvalStream = 34,
};

constexpr std::size_t kEvalBatch = 64;

}  // namespace

ProbeResult evaluate_surfels(const MaskSurfModel& model, std::span<const Sample> samples,
                             const RunConfig& cfg, double alpha, std::uint64_t seed) {
  if (samples.empty()) throw InvalidArgument("evaluate_surfels: no samples");
  train_detail::NoGradScope guard(model);
  PipelineOptions popts;
  popts.mask = cfg.mask;
  double sum_p = 0.0, sum_n = 0.0;
  for (std::size_t first = 0; first < samples.size(); first += kEvalBatch) {
    const std::size_t last = std::min(samples.size(), first + kEvalBatch);
    std::vector<PreparedSample> batch;
    for (std::size_t i = first; i < last; ++i) {
      batch.push_back(prepare_sample(samples[i].cloud, model.config(), popts,
                                     derive_seed(seed, {kEvalStream, i})));
    }
    const SurfelBatch b = make_batch(batch, model.config(), cfg.loss.target_scope);
    // alpha only scales l_all here; evaluate l_n even for a point-only objective.
    const LossBreakdown lb =
        surfel_objective(model, b, 0.0, cfg.loss.normal_mode, cfg.loss.target_scope);
    sum_p += lb.l_p * double(batch.size());
    sum_n += lb.l_n * double(batch.size());
  }
  ProbeResult r;
  r.l_p = sum_p / double(samples.size());
  r.l_n = sum_n / double(samples.size());
  r.l_all = r.l_p + alpha * r.l_n;
  return r;
}

ProbeResult probe_decoder(const MaskSurfModel& model, const Dataset& data, const RunConfig& cfg) {
  const auto& pc = cfg.probe;
  if (data.train.empty() || data.test.empty()) {
    throw InvalidArgument("probe: both splits must be nonempty");
  }
  if (pc.batch_size == 0) throw InvalidArgument("probe.batch_size must be positive");
  if (pc.alpha > 0.0 && !model.config().predict_normals) {
    throw InvalidArgument("probe: alpha > 0 needs a surfel head");
  }

  MaskSurfModel m = train_detail::clone_model(model);
  m.reset_decoder(derive_seed(pc.seed, {kDecoderInit}));
  m.set_requires_grad(m.named_parameters(), false);
  const auto params = m.decoder_parameters();
  m.set_requires_grad(params, true);
  AdamW optim(params, {pc.beta1, pc.beta2, pc.eps});

  PipelineOptions popts;
  popts.augment = &cfg.augment;
  popts.mask = cfg.mask;
  const std::size_t n = data.train.size();
  std::vector<std::size_t> order(n);
  ProbeResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < pc.epochs; ++epoch) {
    const double lr = cosine_lr(double(epoch), pc.epochs, pc.lr);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(pc.seed, {kShuffleStream, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum_p = 0.0, sum_n = 0.0;
    for (std::size_t first = 0; first < n; first += pc.batch_size) {
      const std::size_t last = std::min(n, first + pc.batch_size);
      std::vector<PreparedSample> batch;
      for (std::size_t i = first; i < last; ++i) {
        const std::size_t idx = order[i];
        batch.push_back(prepare_sample(data.train[idx].cloud, m.config(), popts,
                                       derive_seed(pc.seed, {kSampleStream, epoch, idx})));
      }
      const SurfelBatch b = make_batch(batch, m.config(), cfg.loss.target_scope);
      const LossBreakdown lb =
          surfel_objective(m, b, pc.alpha, cfg.loss.normal_mode, cfg.loss.target_scope);
      if (!std::isfinite(lb.l_all) || !std::isfinite(lb.l_n)) {
        throw NumericalError("probe: non-finite loss at epoch " + std::to_string(epoch));
      }
      lb.total.backward();
      optim.step(lr, pc.weight_decay);
      ++step;
      sum_p += lb.l_p * double(batch.size());
      sum_n += lb.l_n * double(batch.size());
    }
    MetricsRow row;
    row.epoch = epoch;
    row.step = step;
    row.lr = lr;
    row.alpha = pc.alpha;
    row.l_p = sum_p / double(n);
    row.l_n = sum_n / double(n);
    row.l_all = row.l_p + row.alpha * row.l_n;
    result.train_metrics.push_back(row);
  }
  m.set_requires_grad(params, false);
  const ProbeResult eval = evaluate_surfels(m, data.test, cfg, pc.alpha, pc.seed);
  result.l_p = eval.l_p;
  result.l_n = eval.l_n;
  result.l_all = eval.l_all;
  return result;
}

}  // namespace masksurf
