#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include <unistd.h>

#include "masksurf/autodiff/ops.hpp"
#include "masksurf/training.hpp"

using namespace masksurf;
namespace fs = std::filesystem;

namespace {

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("masksurf_train_" + std::to_string(::getpid()) + "_" + name))
      .string();
}

RunConfig tiny() {
  RunConfig c = preset_config("tiny");
  c.train.record_wall_time = false;
  return c;
}

}  // namespace

TEST_CASE("adamw single-array update") {
  const AdamWConstants c;
  SUBCASE("zero gradient without decay is a fixed point") {
    std::vector<Real> p = {1.5, -2.0};
    Moments m;
    for (std::uint64_t t = 1; t <= 5; ++t) adamw_step(p, std::vector<Real>{0, 0}, m, t, 1e-3, 0.0, c);
    CHECK(p == std::vector<Real>{1.5, -2.0});
  }
  SUBCASE("first moment follows the closed-form EMA") {
    std::vector<Real> p = {0.0};
    Moments m;
    const double g = 0.3;
    for (std::uint64_t t = 1; t <= 50; ++t) {
      adamw_step(p, std::vector<Real>{g}, m, t, 1e-3, 0.0, c);
      CHECK(m.m[0] == doctest::Approx(g * (1.0 - std::pow(c.beta1, double(t)))).epsilon(1e-12));
      CHECK(m.v[0] == doctest::Approx(g * g * (1.0 - std::pow(c.beta2, double(t)))).epsilon(1e-12));
    }
    CHECK(std::abs(m.m[0] - g) < 0.01 * g);
    // bias-corrected step is lr * g / (|g| + eps) every time
    CHECK(p[0] == doctest::Approx(-50 * 1e-3 * g / (g + c.eps)).epsilon(1e-9));
  }
  SUBCASE("decoupled decay with zero gradient") {
    std::vector<Real> p = {2.0};
    Moments m;
    for (std::uint64_t t = 1; t <= 10; ++t) {
      const double before = p[0];
      adamw_step(p, std::vector<Real>{0}, m, t, 0.001, 0.05, c);
      CHECK(p[0] == doctest::Approx(before * (1.0 - 0.001 * 0.05)).epsilon(1e-15));
    }
  }
  SUBCASE("non-finite gradient leaves the array untouched") {
    std::vector<Real> p = {1.0, 2.0};
    Moments m;
    CHECK_THROWS_AS(adamw_step(p, std::vector<Real>{0.1, std::nan("")}, m, 1, 1e-3, 0.0, c, "w"),
                    NumericalError);
    CHECK(p == std::vector<Real>{1.0, 2.0});
  }
}

TEST_CASE("adamw over named parameters exempts rank <= 1 arrays from decay") {
  Tensor w = Tensor::parameter({2, 2}, {1, 1, 1, 1});
  Tensor b = Tensor::parameter({2}, {1, 1});
  AdamW opt({{"w", w}, {"b", b}}, {});
  ad::sum_all(w * Tensor::full({2, 2}, 0.0) + ad::sum_all(b * Tensor::full({2}, 0.0))).backward();
  opt.step(0.01, 0.5);
  CHECK(opt.step_count() == 1);
  for (Real v : w.values()) CHECK(v == doctest::Approx(1.0 - 0.01 * 0.5));
  for (Real v : b.values()) CHECK(v == 1.0);

  Tensor bad = Tensor::parameter({2, 2}, {1, 1, 1, 1});
  AdamW opt2({{"w", w}, {"bad", bad}}, {});
  ad::sum_all(ad::log(bad - Tensor::full({2, 2}, 1.0))).backward();
  const std::vector<Real> before(w.values().begin(), w.values().end());
  CHECK_THROWS_AS(opt2.step(0.01, 0.5), NumericalError);
  CHECK(std::vector<Real>(w.values().begin(), w.values().end()) == before);
}

TEST_CASE("schedules") {
  CHECK(cosine_lr(0, 60, 1e-3) == doctest::Approx(1e-3));
  CHECK(cosine_lr(30, 60, 1e-3) == doctest::Approx(5e-4));
  CHECK(std::abs(cosine_lr(60, 60, 1e-3)) < 1e-18);
  CHECK(alpha_schedule(0, 100, 0.01) == 0.0);
  CHECK(alpha_schedule(100, 100, 0.01) == doctest::Approx(0.01));
  CHECK(alpha_schedule(25, 100, 0.01) == doctest::Approx(0.0025));
  CHECK_THROWS_AS(alpha_schedule(400, 100, 0.01), InvalidArgument);
}

TEST_CASE("prepared samples keep points, normals and centers consistent") {
  const RunConfig cfg = tiny();
  const SurfelCloud cloud = synth_shape({ShapeKind::torus, {1.0, 0.4}, 0}, 128, 3);
  const std::size_t n = cfg.model.patch_count, k = cfg.model.patch_size;
  PipelineOptions opts;
  opts.mask = cfg.mask;
  const PreparedSample s = prepare_sample(cloud, cfg.model, opts, 17);
  CHECK(s.visible + s.masked == n);
  CHECK(s.masked == masked_count_for(n, cfg.mask.ratio));
  REQUIRE(s.points.size() == n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const Vec3 p = s.points[i * k + j] + s.centers[i];
      std::size_t best = 0;
      for (std::size_t q = 1; q < cloud.size(); ++q)
        if ((cloud.positions.points[q] - p).norm() < (cloud.positions.points[best] - p).norm())
          best = q;
      CHECK((cloud.positions.points[best] - p).norm() < 1e-12);
      CHECK(s.normals[i * k + j] == cloud.normals.normals[best]);
    }
  }
  // visible centers come first
  const auto vis = s.partition.visible_indices();
  const auto msk = s.partition.masked_indices();
  CHECK(vis.size() == s.visible);
  CHECK(msk.size() == s.masked);

  opts.apply_mask = false;
  const PreparedSample all = prepare_sample(cloud, cfg.model, opts, 17);
  CHECK(all.masked == 0);
  CHECK(all.visible == n);

  const PreparedSample again = prepare_sample(cloud, cfg.model, opts, 17);
  CHECK(again.points == all.points);
}

TEST_CASE("batches stack samples for both target scopes") {
  const RunConfig cfg = tiny();
  const Dataset data = build_dataset(cfg.data);
  PipelineOptions opts;
  opts.mask = cfg.mask;
  std::vector<PreparedSample> samples;
  for (std::size_t i = 0; i < 3; ++i)
    samples.push_back(prepare_sample(data.train[i].cloud, cfg.model, opts, i));
  const std::size_t k = cfg.model.patch_size;
  const SurfelBatch masked = make_batch(samples, cfg.model, TargetScope::masked_only);
  CHECK(masked.visible_points.shape() == ad::Shape{3, samples[0].visible, k, 3});
  CHECK(masked.target_points.shape() == ad::Shape{3, samples[0].masked, k, 3});
  CHECK(masked.all_centers.shape() == ad::Shape{3, cfg.model.patch_count, 3});
  const SurfelBatch all = make_batch(samples, cfg.model, TargetScope::all_patches);
  CHECK(all.target_points.shape() == ad::Shape{3, cfg.model.patch_count, k, 3});
  // masked targets are the trailing rows of the full target
  const std::size_t per = k * 3, v = samples[0].visible, nn = cfg.model.patch_count;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t r = 0; r < samples[0].masked; ++r)
      for (std::size_t x = 0; x < per; ++x)
        CHECK(masked.target_points.at((b * samples[0].masked + r) * per + x) ==
              all.target_points.at((b * nn + v + r) * per + x));
}

TEST_CASE("end-to-end gradient check on a toy model") {
  ad::GradCheckOptions o;
  o.eps = 1e-3;
  o.order = 4;
  o.tol = 1e-4;
  o.max_coords = 6;
  const auto r = end_to_end_gradcheck(ModelConfig::tiny(), 0.5, NormalMode::unoriented, o, 1);
  INFO(r.message);
  CHECK(r.pass);
  CHECK(r.coords_checked > 0);
}

TEST_CASE("pretraining is deterministic and decouples alpha = 0") {
  RunConfig cfg = tiny();
  const Dataset data = build_dataset(cfg.data);
  const std::string a = temp_path("a.csv"), b = temp_path("b.csv");
  MaskSurfModel m1 = make_model(cfg), m2 = make_model(cfg);
  const PretrainResult r1 = pretrain(m1, data, cfg, {a, "", nullptr});
  pretrain(m2, data, cfg, {b, "", nullptr});
  CHECK(r1.metrics.size() == cfg.train.epochs);
  CHECK(read_all(a) == read_all(b));
  CHECK(parameter_checksum(m1.named_parameters()) == parameter_checksum(m2.named_parameters()));
  CHECK(read_all(a).rfind(metrics_header(), 0) == 0);
  for (const auto& row : r1.metrics) {
    CHECK(std::abs(row.l_all - (row.l_p + row.alpha * row.l_n)) <= 1e-12);
  }
  fs::remove(a);
  fs::remove(b);

  cfg.loss.alpha = 0.0;
  MaskSurfModel m3 = make_model(cfg);
  const PretrainResult r0 = pretrain(m3, data, cfg);
  for (const auto& row : r0.metrics) {
    CHECK(row.l_all == row.l_p);
    CHECK(row.l_n > 0.0);
  }
}

TEST_CASE("pretraining reduces the loss on a small run") {
  RunConfig cfg = tiny();
  cfg.model.embed_dim = 64;
  cfg.model.heads = 4;
  cfg.model.encoder_depth = 3;
  cfg.model.decoder_depth = 1;
  cfg.data.classes = {"sphere", "box", "cylinder", "torus", "cone"};
  cfg.data.samples_per_class = 10;
  cfg.data.split = 1.0;
  cfg.train.epochs = 5;
  const Dataset data = build_dataset(cfg.data);
  REQUIRE(data.train.size() == 50);
  MaskSurfModel m = make_model(cfg);
  const PretrainResult r = pretrain(m, data, cfg);
  CHECK(r.metrics.back().l_all < r.metrics.front().l_all);
}

TEST_CASE("checkpoints restore the pretrained model") {
  RunConfig cfg = tiny();
  const Dataset data = build_dataset(cfg.data);
  MaskSurfModel m = make_model(cfg);
  const std::string path = temp_path("ckpt.bin");
  const PretrainResult r = pretrain(m, data, cfg, {"", path, nullptr});
  const Checkpoint c = read_checkpoint(path);
  CHECK(c.kind == "pretrain");
  CHECK(c.epoch == cfg.train.epochs);
  const MaskSurfModel back = model_from_checkpoint(c);
  CHECK(parameter_checksum(back.named_parameters()) == parameter_checksum(m.named_parameters()));
  CHECK(r.checkpoint.step == c.step);
  fs::remove(path);
}

TEST_CASE("fine-tuning protocols") {
  const RunConfig cfg = tiny();
  const Dataset data = build_dataset(cfg.data);
  const MaskSurfModel m = make_model(cfg);
  const auto enc = m.encoder_parameters();
  const std::uint64_t before = parameter_checksum(enc);
  for (Protocol p : {Protocol::linear_frozen, Protocol::nonlinear_frozen}) {
    MaskSurfModel tuned = make_model(cfg);
    const FinetuneResult r = finetune(m, data.train, data.test, 3, p, cfg, &tuned);
    CHECK(r.encoder_checksum_before == r.encoder_checksum_after);
    CHECK(parameter_checksum(tuned.encoder_parameters()) == before);
    CHECK((r.test_accuracy >= 0.0 && r.test_accuracy <= 1.0));
  }
  const FinetuneResult t = finetune(m, data.train, data.test, 3, Protocol::transfer_all, cfg);
  CHECK(t.encoder_checksum_before != t.encoder_checksum_after);
  CHECK(parameter_checksum(m.encoder_parameters()) == before);

  std::vector<Sample> bad(data.train.begin(), data.train.end());
  bad.front().label = 7;
  CHECK_THROWS_AS(finetune(m, bad, data.test, 3, Protocol::linear_frozen, cfg), InvalidArgument);
}

TEST_CASE("random labels give chance-level accuracy") {
  RunConfig cfg = tiny();
  cfg.data.samples_per_class = 100;
  cfg.data.split = 0.5;
  cfg.data.points = 64;
  cfg.finetune.epochs = 10;
  Dataset data = build_dataset(cfg.data);
  std::mt19937_64 rng(5);
  for (auto* split : {&data.train, &data.test})
    for (auto& s : *split) s.label = rng() % 3;
  const MaskSurfModel m = make_model(cfg);
  const FinetuneResult r =
      finetune(m, data.train, data.test, 3, Protocol::linear_frozen, cfg);
  const double n = double(data.test.size());
  const double bound = 3.0 * std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / n);
  CHECK(std::abs(r.test_accuracy - 1.0 / 3.0) <= bound);
}

TEST_CASE("few-shot harness") {
  const RunConfig cfg = tiny();
  const Dataset data = build_dataset(cfg.data);
  const MaskSurfModel m = make_model(cfg);
  const FewshotResult one = fewshot_eval(m, data, {1, 2, 3, 4}, Protocol::linear_frozen, cfg);
  REQUIRE(one.accuracies.size() == 4);
  for (double a : one.accuracies) CHECK(a == 1.0);
  CHECK(one.stddev == 0.0);
  CHECK(one.summary() == "100.0±0.0");

  const FewshotResult two = fewshot_eval(m, data, {2, 2, 2, 3}, Protocol::linear_frozen, cfg);
  double mean = 0.0;
  for (double a : two.accuracies) mean += a / 3.0;
  double var = 0.0;
  for (double a : two.accuracies) var += (a - mean) * (a - mean) / 2.0;
  CHECK(two.mean == doctest::Approx(mean));
  CHECK(two.stddev == doctest::Approx(std::sqrt(var)));
  CHECK(std::regex_match(two.summary(), std::regex(R"(\d+\.\d±\d+\.\d)")));
  CHECK_THROWS_AS(fewshot_eval(m, data, {9, 2, 2, 1}, Protocol::linear_frozen, cfg), InvalidArgument);
}

TEST_CASE("probe is deterministic and leaves the encoder alone") {
  const RunConfig cfg = tiny();
  const Dataset data = build_dataset(cfg.data);
  const MaskSurfModel m = make_model(cfg);
  const std::uint64_t before = parameter_checksum(m.named_parameters());
  const ProbeResult a = probe_decoder(m, data, cfg), b = probe_decoder(m, data, cfg);
  CHECK(a.l_p == b.l_p);
  CHECK(a.l_n == b.l_n);
  CHECK(a.l_all == doctest::Approx(a.l_p + cfg.probe.alpha * a.l_n));
  CHECK(a.train_metrics.size() == cfg.probe.epochs);
  CHECK(parameter_checksum(m.named_parameters()) == before);
}
