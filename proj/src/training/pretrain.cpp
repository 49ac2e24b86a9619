#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "masksurf/rng.hpp"
#include "masksurf/training.hpp"
#include "masksurf/version.hpp"

namespace masksurf {

namespace {

enum : std::uint64_t { kInitStream = 11, kShuffleStream = 12, kSampleStream = 13 };

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

}  // namespace

std::string metrics_header() { return "epoch,step,lr,alpha,l_p,l_n,l_all,wall_time"; }

std::string format_metrics_row(const MetricsRow& r) {
  return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + num(r.lr) + "," +
         num(r.alpha) + "," + num(r.l_p) + "," + num(r.l_n) + "," + num(r.l_all) + "," +
         num(r.wall_time);
}

MaskSurfModel make_model(const RunConfig& cfg) {
  return MaskSurfModel(cfg.model, derive_seed(cfg.train.seed, {kInitStream}));
}

Checkpoint make_checkpoint(const std::string& kind, const MaskSurfModel& model,
                           const RunConfig& cfg, const AdamW* optim, std::uint64_t epoch,
                           std::uint64_t step, const std::string& rng_state) {
  Checkpoint c;
  c.kind = kind;
  c.config = cfg.resolved();
  c.metadata["code_version"] = kVersion;
  if (model.has_classifier()) {
    const auto& cls = model.classifier();
    c.metadata["classifier_kind"] = cls.kind == HeadKind::linear ? "linear" : "nonlinear";
    c.metadata["num_classes"] = std::to_string(cls.layers.back().bias.numel());
  }
  c.epoch = epoch;
  c.step = step;
  c.rng_state = rng_state;
  c.parameters = snapshot(model.named_parameters());
  if (optim) {
    c.optimizer = optim->state();
    c.optimizer_step = optim->step_count();
  }
  return c;
}

MaskSurfModel model_from_checkpoint(const Checkpoint& ckpt) {
  const RunConfig cfg = config_from_map(ckpt.config);
  MaskSurfModel model(cfg.model, 0);
  auto kind = ckpt.metadata.find("classifier_kind");
  if (kind != ckpt.metadata.end()) {
    const auto classes = std::stoull(ckpt.metadata.at("num_classes"));
    model.reset_classifier(parse_head_kind(kind->second), classes, 0);
  }
  const std::size_t copied = restore_parameters(model, ckpt.parameters);
  if (copied != model.named_parameters().size()) {
    throw DataError("checkpoint holds " + std::to_string(copied) + " of the model's " +
                    std::to_string(model.named_parameters().size()) + " parameter arrays");
  }
  return model;
}

PretrainResult pretrain(MaskSurfModel& model, const Dataset& data, const RunConfig& cfg,
                        const PretrainOptions& opts) {
  cfg.validate();
  const auto& tc = cfg.train;
  const std::size_t n = data.train.size();
  if (n == 0) throw InvalidArgument("pretrain: training split is empty");
  const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = tc.epochs * steps_per_epoch;

  model.set_requires_grad(model.named_parameters(), true);
  AdamW optim(model.named_parameters(), {tc.beta1, tc.beta2, tc.eps});

  std::ofstream csv;
  if (!opts.metrics_path.empty()) {
    csv.open(opts.metrics_path, std::ios::trunc);
    if (!csv) throw DataError("cannot write metrics '" + opts.metrics_path + "'");
    csv << metrics_header() << '\n' << std::flush;
  }

  PipelineOptions popts;
  popts.augment = &cfg.augment;
  popts.mask = cfg.mask;

  PretrainResult result;
  const auto start = std::chrono::steady_clock::now();
  std::size_t step = 0;
  std::string rng_state;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = cosine_lr(double(epoch), tc.epochs, tc.lr);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(tc.seed, {kShuffleStream, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    {
      std::ostringstream os;
      os << shuffle_rng;
      rng_state = os.str();
    }

    double sum_p = 0.0, sum_n = 0.0;
    std::size_t seen = 0, clamped = 0;
    double alpha = 0.0;
    for (std::size_t first = 0; first < n; first += tc.batch_size) {
      const std::size_t last = std::min(n, first + tc.batch_size);
      std::vector<PreparedSample> batch;
      batch.reserve(last - first);
      for (std::size_t i = first; i < last; ++i) {
        const std::size_t idx = order[i];
        batch.push_back(prepare_sample(data.train[idx].cloud, cfg.model, popts,
                                       derive_seed(tc.seed, {kSampleStream, epoch, idx})));
      }
      ++step;
      alpha = alpha_schedule(step, total_steps, cfg.loss.alpha);
      const SurfelBatch b = make_batch(batch, cfg.model, cfg.loss.target_scope);
      const LossBreakdown lb =
          surfel_objective(model, b, alpha, cfg.loss.normal_mode, cfg.loss.target_scope);
      if (!std::isfinite(lb.l_all) || !std::isfinite(lb.l_n)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step));
      }
      lb.total.backward();
      optim.step(lr, tc.weight_decay);
      sum_p += lb.l_p * double(batch.size());
      sum_n += lb.l_n * double(batch.size());
      seen += batch.size();
      clamped += lb.clamped_normals;
    }

    MetricsRow row;
    row.epoch = epoch;
    row.step = step;
    row.lr = lr;
    row.alpha = alpha;
    row.l_p = sum_p / double(seen);
    row.l_n = sum_n / double(seen);
    row.l_all = row.l_p + row.alpha * row.l_n;
    row.clamped_normals = clamped;
    if (tc.record_wall_time) {
      row.wall_time =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    result.metrics.push_back(row);
    if (csv.is_open()) csv << format_metrics_row(row) << '\n' << std::flush;
    if (opts.on_epoch) opts.on_epoch(row);

    const bool last_epoch = epoch + 1 == tc.epochs;
    if (!opts.checkpoint_path.empty() && !last_epoch && tc.checkpoint_every > 0 &&
        (epoch + 1) % tc.checkpoint_every == 0) {
      write_checkpoint(make_checkpoint("pretrain", model, cfg, &optim, epoch + 1, step, rng_state),
                       opts.checkpoint_path);
    }
  }
  result.checkpoint = make_checkpoint("pretrain", model, cfg, &optim, tc.epochs, step, rng_state);
  if (!opts.checkpoint_path.empty()) write_checkpoint(result.checkpoint, opts.checkpoint_path);
  return result;
}

}  // namespace masksurf
