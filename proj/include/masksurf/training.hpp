#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "masksurf/autodiff/gradcheck.hpp"
#include "masksurf/checkpoint.hpp"
#include "masksurf/config.hpp"
#include "masksurf/dataio.hpp"
#include "masksurf/losses.hpp"
#include "masksurf/masking.hpp"
#include "masksurf/network.hpp"

namespace masksurf {

// ---------------------------------------------------------------- optimizer

struct AdamWConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One AdamW update of a single array at 1-based step `t`: decoupled decay
/// p -= lr*wd*p, then the bias-corrected Adam step. Non-finite gradients throw
/// NumericalError naming `name` before anything is modified.
void adamw_step(std::span<Real> param, std::span<const Real> grad, Moments& state,
                std::uint64_t t, double lr, double weight_decay, const AdamWConstants& c,
                const std::string& name = "parameter");

/// AdamW over a fixed list of named parameters. Arrays of rank <= 1 (biases,
/// norm scales, the mask token) are exempt from weight decay.
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, AdamWConstants c);

  /// Applies one update from the parameters' accumulated gradients, then
  /// zeroes them. The whole step is rejected if any gradient is non-finite.
  void step(double lr, double weight_decay);
  std::uint64_t step_count() const { return t_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }

  std::vector<NamedArray> state() const;
  void load_state(const std::vector<NamedArray>& state, std::uint64_t step_count);

 private:
  std::vector<NamedTensor> params_;
  std::vector<Moments> moments_;
  AdamWConstants c_;
  std::uint64_t t_ = 0;
};

/// lr_init * 0.5 * (1 + cos(pi * epoch / total_epochs)).
double cosine_lr(double epoch, std::size_t total_epochs, double lr_init);
/// alpha_final * step / total_steps.
double alpha_schedule(std::size_t step, std::size_t total_steps, double alpha_final);

// ---------------------------------------------------------------- pipeline

/// One sample after augmentation, grouping and masking. Patch arrays are
/// flat rows of K points; centers are ordered visible first, then masked.
struct PreparedSample {
  std::size_t visible = 0;
  std::size_t masked = 0;
  std::vector<Vec3> centers;         // N
  std::vector<Vec3> points;          // N*K, same patch order as centers
  std::vector<Vec3> normals;         // N*K
  MaskPartition partition;           // in FPS order
};

struct PipelineOptions {
  const AugmentConfig* augment = nullptr;  // nullptr: no augmentation
  MaskSettings mask;
  bool apply_mask = true;  // false: every patch visible, no reordering
};

/// augment -> FPS -> KNN group (points and normals share indices) -> mask.
/// All randomness comes from `seed`.
PreparedSample prepare_sample(const SurfelCloud& cloud, const ModelConfig& model,
                              const PipelineOptions& opts, std::uint64_t seed);

/// Stacked tensors for a batch of prepared samples with equal counts.
struct SurfelBatch {
  std::size_t batch = 0;
  std::size_t visible = 0;
  std::size_t masked = 0;
  Tensor visible_points;  // [B, V, K, 3]
  Tensor visible_centers; // [B, V, 3]
  Tensor all_centers;     // [B, V + M, 3]
  Tensor target_points;   // [B, R, K, 3], R = M or V + M
  Tensor target_normals;  // [B, R, K, 3]
};

SurfelBatch make_batch(std::span<const PreparedSample> samples, const ModelConfig& model,
                       TargetScope scope);

/// Full forward pass and objective for one batch.
LossBreakdown surfel_objective(const MaskSurfModel& model, const SurfelBatch& batch,
                               double alpha, NormalMode mode, TargetScope scope);

/// Predictions for one batch (for export).
SurfelPrediction predict_batch(const MaskSurfModel& model, const SurfelBatch& batch,
                               TargetScope scope);

/// Encoder tokens for unmasked samples, [B, N, D].
Tensor encode_full(const MaskSurfModel& model, std::span<const PreparedSample> samples);

/// Central-difference check of the full objective with respect to every model
/// parameter, on a two-sample batch of generated shapes. Discrete choices
/// (nearest neighbours, max-pool winners, signs) are held at their base-point
/// values, as in backward.
ad::GradCheckReport end_to_end_gradcheck(const ModelConfig& model, double alpha, NormalMode mode,
                                         const ad::GradCheckOptions& opts, std::uint64_t seed);

// ---------------------------------------------------------------- pretraining

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double alpha = 0.0;
  double l_p = 0.0;
  double l_n = 0.0;
  double l_all = 0.0;
  double wall_time = 0.0;
  std::size_t clamped_normals = 0;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);

struct PretrainOptions {
  std::string metrics_path;     // empty: not written
  std::string checkpoint_path;  // empty: not written
  std::function<void(const MetricsRow&)> on_epoch;
};

struct PretrainResult {
  std::vector<MetricsRow> metrics;
  Checkpoint checkpoint;
};

/// Seed-deterministic pre-training. `model` is trained in place. A non-finite
/// loss aborts with NumericalError; the last checkpoint on disk is kept.
PretrainResult pretrain(MaskSurfModel& model, const Dataset& data, const RunConfig& cfg,
                        const PretrainOptions& opts = {});

/// Fresh model for `cfg` with the deterministic initialization used by pretrain.
MaskSurfModel make_model(const RunConfig& cfg);
/// Model described by a checkpoint's stored config, with its parameters.
MaskSurfModel model_from_checkpoint(const Checkpoint& ckpt);
Checkpoint make_checkpoint(const std::string& kind, const MaskSurfModel& model,
                           const RunConfig& cfg, const AdamW* optim, std::uint64_t epoch,
                           std::uint64_t step, const std::string& rng_state);

// ---------------------------------------------------------------- fine-tuning

struct FinetuneResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double final_loss = 0.0;
  std::uint64_t encoder_checksum_before = 0;
  std::uint64_t encoder_checksum_after = 0;
};

/// Trains a fresh classifier (and the encoder for transfer_all) on `train`,
/// reports accuracy on `test`. `model` is left untouched; the tuned copy is
/// returned through `tuned` when non-null. Labels must be < num_classes.
FinetuneResult finetune(const MaskSurfModel& model, std::span<const Sample> train,
                        std::span<const Sample> test, std::size_t num_classes,
                        Protocol protocol, const RunConfig& cfg,
                        MaskSurfModel* tuned = nullptr);

/// Pooled [max, mean] encoder features of unmasked, unaugmented samples.
std::vector<std::vector<Real>> pooled_features(const MaskSurfModel& model,
                                               std::span<const Sample> samples,
                                               std::uint64_t seed);

struct FewshotResult {
  std::vector<double> accuracies;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one trial

  std::string summary() const;  // "mean±std" in percent
};

/// n-way m-shot trials drawn from the union of both splits.
FewshotResult fewshot_eval(const MaskSurfModel& model, const Dataset& data,
                           const FewshotSettings& fs, Protocol protocol, const RunConfig& cfg);

// ---------------------------------------------------------------- probe

struct ProbeResult {
  double l_p = 0.0;
  double l_n = 0.0;
  double l_all = 0.0;  // l_p + probe.alpha * l_n
  std::vector<MetricsRow> train_metrics;
};

/// Freezes the encoder side, trains a freshly initialized decoder, mask token
/// and head on the train split, and evaluates on the test split with fixed
/// per-sample masks.
ProbeResult probe_decoder(const MaskSurfModel& model, const Dataset& data, const RunConfig& cfg);

/// Mean test-split losses for a model as is.
ProbeResult evaluate_surfels(const MaskSurfModel& model, std::span<const Sample> samples,
                             const RunConfig& cfg, double alpha, std::uint64_t seed);

}  // namespace masksurf
