#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "internal.hpp"
#include "masksurf/autodiff/ops.hpp"
#include "masksurf/checkpoint.hpp"
#include "masksurf/rng.hpp"
#include "masksurf/training.hpp"

namespace masksurf {

using namespace ad;

namespace train_detail {

MaskSurfModel clone_model(const MaskSurfModel& model) {
  MaskSurfModel copy(model.config(), 0);
  if (model.has_classifier()) {
    const auto& cls = model.classifier();
    copy.reset_classifier(cls.kind, cls.layers.back().bias.numel(), 0);
  }
  copy.copy_parameters_from(model.named_parameters());
  return copy;
}

NoGradScope::NoGradScope(const MaskSurfModel& model) {
  for (auto [name, t] : model.named_parameters()) {
    saved_.emplace_back(t, t.requires_grad());
    t.set_requires_grad(false);
  }
}

NoGradScope::~NoGradScope() {
  for (auto& [t, on] : saved_) t.set_requires_grad(on);
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.dim() != 2 || logits.size(0) != labels.size()) {
    throw InvalidArgument("cross_entropy: logits must be [B, C] with B labels");
  }
  const std::size_t b = logits.size(0), c = logits.size(1);
  std::vector<std::size_t> pick(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c) {
      throw InvalidArgument("label " + std::to_string(labels[i]) + " outside " +
                            std::to_string(c) + " classes");
    }
    pick[i] = i * c + labels[i];
  }
  const Tensor p = gather(reshape(softmax(logits), {b * c}), 0, pick);
  return scale(mean_all(log(p)), Real(-1));
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t b = logits.size(0), c = logits.size(1);
  std::vector<std::size_t> out(b);
  const auto v = logits.values();
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (v[i * c + j] > v[i * c + best]) best = j;
    out[i] = best;
  }
  return out;
}

}  // namespace train_detail

namespace {

enum : std::uint64_t {
  kHeadStream = 21,
  kShuffleStream = 22,
  kDropoutStream = 23,
  kSampleStream = 24,
  kEvalStream = 25,
  kTrialStream = 26,
};

constexpr std::size_t kEvalBatch = 64;

Tensor stack_rows(const std::vector<std::vector<Real>>& feats,
                  std::span<const std::size_t> ids) {
  const std::size_t d = feats[ids[0]].size();
  std::vector<Real> out;
  out.reserve(ids.size() * d);
  for (auto i : ids) out.insert(out.end(), feats[i].begin(), feats[i].end());
  return Tensor::constant({ids.size(), d}, std::move(out));
}

double accuracy_on_features(const MaskSurfModel& m, const std::vector<std::vector<Real>>& feats,
                            std::span<const std::size_t> labels) {
  if (feats.empty()) return 0.0;
  train_detail::NoGradScope guard(m);
  std::size_t correct = 0;
  for (std::size_t first = 0; first < feats.size(); first += kEvalBatch) {
    const std::size_t last = std::min(feats.size(), first + kEvalBatch);
    std::vector<std::size_t> ids(last - first);
    std::iota(ids.begin(), ids.end(), first);
    const auto pred = train_detail::argmax_rows(m.classify_pooled(stack_rows(feats, ids)));
    for (std::size_t i = 0; i < ids.size(); ++i) correct += pred[i] == labels[ids[i]];
  }
  return double(correct) / double(feats.size());
}

HeadKind head_for(Protocol p) {
  return p == Protocol::linear_frozen ? HeadKind::linear : HeadKind::nonlinear;
}

// Trains the classifier of `m` on cached features; returns the last epoch's mean loss.
double train_head(MaskSurfModel& m, const std::vector<std::vector<Real>>& feats,
                  std::span<const std::size_t> labels, const FinetuneSettings& ft) {
  std::vector<NamedTensor> params;
  for (auto& nt : m.named_parameters())
    if (nt.first.rfind("classifier.", 0) == 0) params.push_back(nt);
  m.set_requires_grad(params, true);
  AdamW optim(params, {ft.beta1, ft.beta2, ft.eps});
  std::mt19937_64 dropout_rng(derive_seed(ft.seed, {kDropoutStream}));
  std::vector<std::size_t> order(feats.size());
  double last_loss = 0.0;
  for (std::size_t epoch = 0; epoch < ft.epochs; ++epoch) {
    const double lr = cosine_lr(double(epoch), ft.epochs, ft.lr);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(ft.seed, {kShuffleStream, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += ft.batch_size) {
      const std::size_t last = std::min(order.size(), first + ft.batch_size);
      const std::span<const std::size_t> ids(order.data() + first, last - first);
      std::vector<std::size_t> y;
      for (auto i : ids) y.push_back(labels[i]);
      const Tensor loss = train_detail::cross_entropy(m.classify_pooled(stack_rows(feats, ids), &dropout_rng), y);
      if (!std::isfinite(static_cast<double>(loss.item()))) {
        throw NumericalError("non-finite classification loss at epoch " + std::to_string(epoch));
      }
      loss.backward();
      optim.step(lr, ft.weight_decay);
      sum += static_cast<double>(loss.item()) * double(ids.size());
    }
    last_loss = sum / double(order.size());
  }
  m.set_requires_grad(params, false);
  return last_loss;
}

void check_labels(std::span<const Sample> samples, std::size_t classes) {
  for (const auto& s : samples) {
    if (s.label >= classes) {
      throw InvalidArgument("sample label " + std::to_string(s.label) + " does not fit a " +
                            std::to_string(classes) + "-class head");
    }
  }
}

}  // namespace

std::vector<std::vector<Real>> pooled_features(const MaskSurfModel& model,
                                               std::span<const Sample> samples,
                                               std::uint64_t seed) {
  train_detail::NoGradScope guard(model);
  PipelineOptions popts;
  popts.apply_mask = false;
  std::vector<std::vector<Real>> out;
  out.reserve(samples.size());
  for (std::size_t first = 0; first < samples.size(); first += kEvalBatch) {
    const std::size_t last = std::min(samples.size(), first + kEvalBatch);
    std::vector<PreparedSample> batch;
    for (std::size_t i = first; i < last; ++i) {
      batch.push_back(prepare_sample(samples[i].cloud, model.config(), popts,
                                     derive_seed(seed, {kEvalStream, i})));
    }
    const Tensor pooled = model.pooled_feature(encode_full(model, batch));
    const std::size_t d = pooled.size(1);
    const auto v = pooled.values();
    for (std::size_t r = 0; r < batch.size(); ++r) {
      out.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(r * d),
                       v.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    }
  }
  return out;
}

FinetuneResult finetune(const MaskSurfModel& model, std::span<const Sample> train,
                        std::span<const Sample> test, std::size_t num_classes, Protocol protocol,
                        const RunConfig& cfg, MaskSurfModel* tuned) {
  const auto& ft = cfg.finetune;
  if (num_classes == 0) throw InvalidArgument("finetune: need at least one class");
  if (cfg.model.num_classes != 0 && cfg.model.num_classes != num_classes) {
    throw InvalidArgument("finetune: head has " + std::to_string(cfg.model.num_classes) +
                          " classes but the dataset has " + std::to_string(num_classes));
  }
  if (train.empty()) throw InvalidArgument("finetune: training split is empty");
  if (ft.batch_size == 0) throw InvalidArgument("finetune.batch_size must be positive");
  check_labels(train, num_classes);
  check_labels(test, num_classes);

  MaskSurfModel m = train_detail::clone_model(model);
  m.reset_classifier(head_for(protocol), num_classes, derive_seed(ft.seed, {kHeadStream}));
  m.set_requires_grad(m.named_parameters(), false);

  FinetuneResult r;
  r.encoder_checksum_before = parameter_checksum(m.encoder_parameters());
  std::vector<std::size_t> train_labels, test_labels;
  for (const auto& s : train) train_labels.push_back(s.label);
  for (const auto& s : test) test_labels.push_back(s.label);

  if (protocol != Protocol::transfer_all) {
    const auto train_feats = pooled_features(m, train, ft.seed);
    m.set_requires_grad(m.named_parameters(), false);
    r.final_loss = train_head(m, train_feats, train_labels, ft);
    r.train_accuracy = accuracy_on_features(m, train_feats, train_labels);
  } else {
    std::vector<NamedTensor> params = m.encoder_parameters();
    for (auto& nt : m.named_parameters())
      if (nt.first.rfind("classifier.", 0) == 0) params.push_back(nt);
    m.set_requires_grad(params, true);
    AdamW optim(params, {ft.beta1, ft.beta2, ft.eps});
    std::mt19937_64 dropout_rng(derive_seed(ft.seed, {kDropoutStream}));
    PipelineOptions popts;
    popts.apply_mask = false;
    popts.augment = &cfg.augment;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 0; epoch < ft.epochs; ++epoch) {
      const double lr = cosine_lr(double(epoch), ft.epochs, ft.lr);
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 shuffle_rng(derive_seed(ft.seed, {kShuffleStream, epoch}));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      double sum = 0.0;
      for (std::size_t first = 0; first < order.size(); first += ft.batch_size) {
        const std::size_t last = std::min(order.size(), first + ft.batch_size);
        std::vector<PreparedSample> batch;
        std::vector<std::size_t> y;
        for (std::size_t i = first; i < last; ++i) {
          const std::size_t idx = order[i];
          batch.push_back(prepare_sample(train[idx].cloud, m.config(), popts,
                                         derive_seed(ft.seed, {kSampleStream, epoch, idx})));
          y.push_back(train[idx].label);
        }
        const Tensor loss = train_detail::cross_entropy(m.classify(encode_full(m, batch), &dropout_rng), y);
        if (!std::isfinite(static_cast<double>(loss.item()))) {
          throw NumericalError("non-finite classification loss at epoch " + std::to_string(epoch));
        }
        loss.backward();
        optim.step(lr, ft.weight_decay);
        sum += static_cast<double>(loss.item()) * double(batch.size());
      }
      r.final_loss = sum / double(order.size());
    }
    m.set_requires_grad(m.named_parameters(), false);
    r.train_accuracy = accuracy_on_features(m, pooled_features(m, train, ft.seed), train_labels);
  }
  r.test_accuracy =
      test.empty() ? 0.0 : accuracy_on_features(m, pooled_features(m, test, ft.seed), test_labels);
  r.encoder_checksum_after = parameter_checksum(m.encoder_parameters());
  if (tuned) *tuned = std::move(m);
  return r;
}

std::string FewshotResult::summary() const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f±%.1f", 100.0 * mean, 100.0 * stddev);
  return buf;
}

FewshotResult fewshot_eval(const MaskSurfModel& model, const Dataset& data,
                           const FewshotSettings& fs, Protocol protocol, const RunConfig& cfg) {
  if (fs.n_way == 0 || fs.m_shot == 0 || fs.trials == 0) {
    throw InvalidArgument("fewshot: n_way, m_shot and trials must be positive");
  }
  std::vector<Sample> pool(data.train.begin(), data.train.end());
  pool.insert(pool.end(), data.test.begin(), data.test.end());
  std::vector<std::vector<std::size_t>> by_class(data.num_classes());
  for (std::size_t i = 0; i < pool.size(); ++i) by_class.at(pool[i].label).push_back(i);
  std::vector<std::size_t> eligible;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() >= fs.m_shot + fs.query_per_class) eligible.push_back(c);
  }
  if (eligible.size() < fs.n_way) {
    throw InvalidArgument("fewshot: " + std::to_string(fs.n_way) + "-way " +
                          std::to_string(fs.m_shot) + "-shot with " +
                          std::to_string(fs.query_per_class) + " queries needs " +
                          std::to_string(fs.n_way) + " classes with " +
                          std::to_string(fs.m_shot + fs.query_per_class) +
                          " samples; only " + std::to_string(eligible.size()) + " qualify");
  }

  RunConfig trial_cfg = cfg;
  trial_cfg.model.num_classes = 0;
  const bool frozen = protocol != Protocol::transfer_all;
  std::vector<std::vector<Real>> feats;
  if (frozen) feats = pooled_features(model, pool, cfg.finetune.seed);

  FewshotResult res;
  for (std::size_t t = 0; t < fs.trials; ++t) {
    std::mt19937_64 rng(derive_seed(cfg.finetune.seed, {kTrialStream, t}));
    std::vector<std::size_t> classes = eligible;
    std::shuffle(classes.begin(), classes.end(), rng);
    classes.resize(fs.n_way);
    std::vector<std::size_t> train_ids, test_ids, train_y, test_y;
    for (std::size_t w = 0; w < fs.n_way; ++w) {
      std::vector<std::size_t> ids = by_class[classes[w]];
      std::shuffle(ids.begin(), ids.end(), rng);
      for (std::size_t j = 0; j < fs.m_shot + fs.query_per_class; ++j) {
        (j < fs.m_shot ? train_ids : test_ids).push_back(ids[j]);
        (j < fs.m_shot ? train_y : test_y).push_back(w);
      }
    }
    trial_cfg.finetune.seed = derive_seed(cfg.finetune.seed, {kTrialStream, t, 1});
    double acc = 0.0;
    if (frozen) {
      MaskSurfModel m = train_detail::clone_model(model);
      m.reset_classifier(head_for(protocol), fs.n_way,
                         derive_seed(trial_cfg.finetune.seed, {kHeadStream}));
      m.set_requires_grad(m.named_parameters(), false);
      std::vector<std::vector<Real>> tr, te;
      for (auto i : train_ids) tr.push_back(feats[i]);
      for (auto i : test_ids) te.push_back(feats[i]);
      train_head(m, tr, train_y, trial_cfg.finetune);
      acc = test_ids.empty() ? 1.0 : accuracy_on_features(m, te, test_y);
    } else {
      std::vector<Sample> tr, te;
      for (std::size_t j = 0; j < train_ids.size(); ++j) tr.push_back({pool[train_ids[j]].cloud, train_y[j]});
      for (std::size_t j = 0; j < test_ids.size(); ++j) te.push_back({pool[test_ids[j]].cloud, test_y[j]});
      acc = finetune(model, tr, te, fs.n_way, protocol, trial_cfg).test_accuracy;
      if (te.empty()) acc = 1.0;
    }
    res.accuracies.push_back(acc);
  }
  const double n = double(res.accuracies.size());
  res.mean = std::accumulate(res.accuracies.begin(), res.accuracies.end(), 0.0) / n;
  if (res.accuracies.size() > 1) {
    double ss = 0.0;
    for (double a : res.accuracies) ss += (a - res.mean) * (a - res.mean);
    res.stddev = std::sqrt(ss / (n - 1.0));
  }
  return res;
}

}  // namespace masksurf
