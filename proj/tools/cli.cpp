#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>


#include <CLI11.hpp>
#include <json.hpp>

#include "masksurf/autodiff/gradcheck.hpp"
#include "masksurf/checkpoint.hpp"
#include "masksurf/config.hpp"
#include "masksurf/dataio.hpp"
#include "masksurf/rng.hpp"
#include "masksurf/training.hpp"
#include "masksurf/version.hpp"

namespace masksurf::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr double kVisThresholdDeg = 30.0;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "masksurf_run";
  std::string preset;
};

struct Options {
  Common common;
  std::string checkpoint;
  std::string protocol;
  std::string format = "ply";
  double tol = 1e-4;
  double eps = 1e-3;
  std::size_t max_coords = 0;
  int order = 4;
  double gc_alpha = -1.0;
  std::size_t sample = 0;
  std::uint64_t vis_seed = 0;
};

/// Failure of the run itself (not a library error), e.g. a failed gradient check.
struct RunFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

class Run {
 public:
  Run(std::string command, const Common& common, std::ostream& out)
      : command_(std::move(command)), common_(common), out_(out), dir_(common.out_dir) {}

  const fs::path& dir() const { return dir_; }
  RunConfig& cfg() { return cfg_; }
  json& results() { return results_; }
  std::ostream& out() { return out_; }

  void resolve_config(const std::string& default_preset) {
    const std::string preset = common_.preset.empty() ? default_preset : common_.preset;
    cfg_ = preset_config(preset);
    preset_used_ = preset;
    if (!common_.config_path.empty()) {
      std::ifstream f(common_.config_path);
      if (!f) throw DataError("cannot open config " + common_.config_path);
      merge_config(cfg_, f);
    }
    for (const auto& o : common_.overrides) apply_override(cfg_, o);
    cfg_.validate();
  }

  void begin() {
    fs::create_directories(dir_);
    std::error_code ec;
    fs::remove(dir_ / "error.json", ec);
    write_manifest("running");
  }

  void add_output(const fs::path& p) { outputs_.push_back(fs::relative(p, dir_).generic_string()); }

  void finish() {
    write_text(dir_ / "config.txt", cfg_.to_text());
    write_manifest("ok");
  }

  void fail(const std::string& type, const std::string& message) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    json e;
    e["command"] = command_;
    e["type"] = type;
    e["message"] = message;
    e["version"] = kVersion;
    write_json(e, dir_ / "error.json");
    if (config_resolved_) {
      try {
        write_manifest("error");
      } catch (...) {
      }
    }
  }

  void mark_resolved() { config_resolved_ = true; }

  static void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    if (!f) throw DataError("cannot write " + p.string());
    f << text;
  }

 private:
  void write_manifest(const std::string& status) {
    json m;
    m["command"] = command_;
    m["version"] = kVersion;
    m["status"] = status;
    m["preset"] = preset_used_;
    m["config_file"] = common_.config_path;
    m["overrides"] = common_.overrides;
    m["seed"] = {{"data", cfg_.data.seed},
                 {"train", cfg_.train.seed},
                 {"finetune", cfg_.finetune.seed},
                 {"probe", cfg_.probe.seed}};
    json c = json::object();
    for (const auto& [k, v] : cfg_.resolved()) c[k] = v;
    m["config"] = c;
    m["outputs"] = outputs_;
    m["results"] = results_;
    write_json(m, dir_ / "run.json");
  }

  std::string command_;
  Common common_;
  std::ostream& out_;
  fs::path dir_;
  RunConfig cfg_;
  std::string preset_used_;
  std::vector<std::string> outputs_;
  json results_ = json::object();
  bool config_resolved_ = false;
};

MaskSurfModel load_or_init(Run& run, const std::string& checkpoint) {
  if (checkpoint.empty()) return make_model(run.cfg());
  MaskSurfModel m = model_from_checkpoint(read_checkpoint(checkpoint));
  run.cfg().model = m.config();
  run.results()["checkpoint"] = checkpoint;
  return m;
}

// ---------------------------------------------------------------- commands

// Probe targets always come from the reference normals; an estimated-normal
// run only changes the pre-training targets. Sample positions do not depend
// on the normal source.
Dataset build_probe_dataset(DatasetManifest m) {
  m.normal_source = NormalSource::ground_truth;
  return build_dataset(m);
}

void cmd_gen_data(Run& run, const Options& o) {
  if (o.format != "ply" && o.format != "xyzn") {
    throw InvalidArgument("--format must be ply or xyzn");
  }
  const Dataset data = build_dataset(run.cfg().data);
  const fs::path root = run.dir() / "data";
  std::ofstream index(run.dir() / "index.csv");
  index << "split,index,label,class,file\n";
  auto emit = [&](const std::vector<Sample>& split, const std::string& name) {
    fs::create_directories(root / name);
    for (std::size_t i = 0; i < split.size(); ++i) {
      const Sample& s = split[i];
      std::ostringstream fname;
      fname << std::setw(5) << std::setfill('0') << i << "_" << data.class_names[s.label] << "."
            << o.format;
      const fs::path p = root / name / fname.str();
      if (o.format == "ply") {
        PlyVertexData v;
        v.positions = s.cloud.positions.points;
        v.normals = s.cloud.normals.normals;
        write_ply(v, p.string());
      } else {
        write_surfel_file(s.cloud, p.string());
      }
      index << name << "," << i << "," << s.label << "," << data.class_names[s.label] << ","
            << fs::relative(p, run.dir()).generic_string() << "\n";
    }
  };
  emit(data.train, "train");
  emit(data.test, "test");
  run.add_output(run.dir() / "index.csv");
  run.add_output(root);
  run.results()["classes"] = data.class_names;
  run.results()["train"] = data.train.size();
  run.results()["test"] = data.test.size();
  run.out() << "wrote " << data.train.size() << " train and " << data.test.size()
            << " test samples to " << root.string() << "\n";
}

void cmd_pretrain(Run& run, const Options&) {
  const Dataset data = build_dataset(run.cfg().data);
  MaskSurfModel model = make_model(run.cfg());
  PretrainOptions po;
  po.metrics_path = (run.dir() / "metrics.csv").string();
  po.checkpoint_path = (run.dir() / "checkpoint.bin").string();
  std::ostream& out = run.out();
  po.on_epoch = [&out](const MetricsRow& r) {
    out << "epoch " << r.epoch << " step " << r.step << " lr " << r.lr << " alpha " << r.alpha
        << " l_p " << r.l_p << " l_n " << r.l_n << " l_all " << r.l_all << "\n";
    out.flush();
  };
  run.add_output(po.metrics_path);
  run.add_output(po.checkpoint_path);
  const PretrainResult res = pretrain(model, data, run.cfg(), po);
  const MetricsRow& last = res.metrics.back();
  run.results()["epochs"] = res.metrics.size();
  run.results()["final_l_p"] = last.l_p;
  run.results()["final_l_n"] = last.l_n;
  run.results()["final_l_all"] = last.l_all;
}

void cmd_finetune(Run& run, const Options& o) {
  if (!o.protocol.empty()) run.cfg().finetune.protocol = parse_protocol(o.protocol);
  MaskSurfModel model = load_or_init(run, o.checkpoint);
  const Dataset data = build_dataset(run.cfg().data);
  MaskSurfModel tuned = model;
  const FinetuneResult r = finetune(model, data.train, data.test, data.num_classes(),
                                    run.cfg().finetune.protocol, run.cfg(), &tuned);
  const fs::path ckpt = run.dir() / "finetuned.bin";
  write_checkpoint(make_checkpoint("finetune", tuned, run.cfg(), nullptr,
                                   run.cfg().finetune.epochs, 0, ""),
                   ckpt.string());
  run.add_output(ckpt);
  auto& j = run.results();
  j["protocol"] = to_string(run.cfg().finetune.protocol);
  j["train_accuracy"] = r.train_accuracy;
  j["test_accuracy"] = r.test_accuracy;
  j["final_loss"] = r.final_loss;
  j["encoder_checksum_before"] = r.encoder_checksum_before;
  j["encoder_checksum_after"] = r.encoder_checksum_after;
  run.out() << "protocol " << to_string(run.cfg().finetune.protocol) << " train_acc "
            << r.train_accuracy << " test_acc " << r.test_accuracy << "\n";
}

void cmd_fewshot(Run& run, const Options& o) {
  if (!o.protocol.empty()) run.cfg().finetune.protocol = parse_protocol(o.protocol);
  MaskSurfModel model = load_or_init(run, o.checkpoint);
  const Dataset data = build_dataset(run.cfg().data);
  const FewshotResult r =
      fewshot_eval(model, data, run.cfg().fewshot, run.cfg().finetune.protocol, run.cfg());
  std::ofstream csv(run.dir() / "fewshot.csv");
  csv << "trial,accuracy\n";
  for (std::size_t i = 0; i < r.accuracies.size(); ++i) {
    csv << i << "," << fmt(r.accuracies[i]) << "\n";
  }
  run.add_output(run.dir() / "fewshot.csv");
  run.results()["mean"] = r.mean;
  run.results()["stddev"] = r.stddev;
  run.results()["summary"] = r.summary();
  run.out() << run.cfg().fewshot.n_way << "-way " << run.cfg().fewshot.m_shot
            << "-shot accuracy " << r.summary() << "\n";
}

void cmd_probe(Run& run, const Options& o) {
  MaskSurfModel model = load_or_init(run, o.checkpoint);
  const Dataset data = build_probe_dataset(run.cfg().data);
  const ProbeResult r = probe_decoder(model, data, run.cfg());
  std::ofstream csv(run.dir() / "probe_metrics.csv");
  csv << metrics_header() << "\n";
  for (const auto& row : r.train_metrics) csv << format_metrics_row(row) << "\n";
  run.add_output(run.dir() / "probe_metrics.csv");
  run.results()["l_p"] = r.l_p;
  run.results()["l_n"] = r.l_n;
  run.results()["l_all"] = r.l_all;
  run.out() << "probe l_p " << fmt(r.l_p) << " l_n " << fmt(r.l_n) << " l_all " << fmt(r.l_all)
            << "\n";
}

void cmd_gradcheck(Run& run, const Options& o) {
  ad::GradCheckOptions go;
  go.tol = o.tol;
  go.eps = o.eps;
  go.max_coords = o.max_coords;
  go.order = o.order;
  go.seed = run.cfg().train.seed;
  const double alpha = o.gc_alpha >= 0.0 ? o.gc_alpha : run.cfg().loss.alpha;
  const auto r = end_to_end_gradcheck(run.cfg().model, alpha, run.cfg().loss.normal_mode, go,
                                      run.cfg().train.seed);
  auto& j = run.results();
  j["max_rel_error"] = r.max_rel_error;
  j["max_abs_error"] = r.max_abs_error;
  j["coords_checked"] = r.coords_checked;
  j["worst"] = r.worst;
  j["tol"] = o.tol;
  j["pass"] = r.pass;
  run.out() << "max_rel_error " << r.max_rel_error << " at " << r.worst << " over "
            << r.coords_checked << " coords, tol " << o.tol << ": " << (r.pass ? "PASS" : "FAIL")
            << "\n";
  if (!r.pass) {
    throw RunFailure("gradient check failed: max relative error " + fmt(r.max_rel_error) +
                     " at " + r.worst + (r.message.empty() ? "" : " (" + r.message + ")"));
  }
}

struct SweepAxis {
  std::string key;
  std::vector<std::string> grid;
};

SweepAxis sweep_axis(const std::string& name) {
  if (name == "mask_ratio") {
    return {"mask.ratio", {"0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9"}};
  }
  if (name == "mask_strategy") return {"mask.strategy", {"random", "block"}};
  if (name == "alpha") return {"loss.alpha", {"0", "0.001", "0.01", "0.1", "1"}};
  if (name == "normal_mode") return {"loss.normal_mode", {"unoriented", "oriented"}};
  if (name == "target_scope") return {"loss.target_scope", {"masked_only", "all_patches"}};
  if (name == "normal_source") return {"data.normal_source", {"ground_truth", "estimated"}};
  throw InvalidArgument("unknown ablate.sweep '" + name +
                        "' (mask_ratio|mask_strategy|alpha|normal_mode|target_scope|"
                        "normal_source)");
}

void cmd_ablate(Run& run, const Options&) {
  const RunConfig base = run.cfg();
  const SweepAxis axis = sweep_axis(base.ablate.sweep);
  const auto values = base.ablate.values.empty() ? axis.grid : base.ablate.values;
  const fs::path summary_path = run.dir() / "summary.csv";
  std::ofstream summary(summary_path);
  summary << "sweep,value,seed,pretrain_l_all,probe_l_p,probe_l_n,probe_l_all,linear_test_accuracy\n";
  run.add_output(summary_path);
  for (const auto& value : values) {
    for (const std::uint64_t seed : base.ablate.seeds) {
      RunConfig cfg = base;
      cfg.set(axis.key, value);
      cfg.train.seed = seed;
      cfg.finetune.seed = seed;
      cfg.probe.seed = seed;
      cfg.validate();
      const fs::path sub = run.dir() / "runs" / (base.ablate.sweep + "=" + value + "_seed" +
                                                  std::to_string(seed));
      fs::create_directories(sub);
      Run::write_text(sub / "config.txt", cfg.to_text());
      run.out() << "[" << base.ablate.sweep << "=" << value << " seed " << seed << "]\n";
      const Dataset data = build_dataset(cfg.data);
      MaskSurfModel model = make_model(cfg);
      PretrainOptions po;
      po.metrics_path = (sub / "metrics.csv").string();
      po.checkpoint_path = (sub / "checkpoint.bin").string();
      const PretrainResult pre = pretrain(model, data, cfg, po);
      const Dataset reference =
          cfg.data.normal_source == NormalSource::ground_truth ? data : build_probe_dataset(cfg.data);
      const ProbeResult pr = probe_decoder(model, reference, cfg);
      const FinetuneResult ft = finetune(model, reference.train, reference.test, reference.num_classes(),
                                         Protocol::linear_frozen, cfg);
      summary << base.ablate.sweep << "," << value << "," << seed << ","
              << fmt(pre.metrics.back().l_all) << "," << fmt(pr.l_p) << "," << fmt(pr.l_n) << ","
              << fmt(pr.l_all) << "," << fmt(ft.test_accuracy) << "\n";
      summary.flush();
      run.out() << "  probe l_n " << pr.l_n << " linear acc " << ft.test_accuracy << "\n";
    }
  }
  run.results()["sweep"] = base.ablate.sweep;
  run.results()["values"] = values;
}

double unoriented_angle_deg(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  if (na <= 0.0 || nb <= 0.0) return 90.0;
  const double c = std::min(1.0, std::abs(a.dot(b)) / (na * nb));
  return std::acos(c) * 180.0 / M_PI;
}

void cmd_export_vis(Run& run, const Options& o) {
  MaskSurfModel model = load_or_init(run, o.checkpoint);
  if (!model.config().predict_normals) {
    throw InvalidArgument("export-vis needs a model with a surfel head");
  }
  const Dataset data = build_dataset(run.cfg().data);
  if (o.sample >= data.test.size()) {
    throw InvalidArgument("--sample " + std::to_string(o.sample) + " out of range (test split has " +
                          std::to_string(data.test.size()) + ")");
  }
  const SurfelCloud& cloud = data.test[o.sample].cloud;
  PipelineOptions popts;
  popts.mask = run.cfg().mask;
  const PreparedSample s = prepare_sample(cloud, model.config(), popts, o.vis_seed);
  const std::size_t k = model.config().patch_size;
  const SurfelBatch b = make_batch(std::span(&s, 1), model.config(), TargetScope::masked_only);
  const SurfelPrediction pred = predict_batch(model, b, TargetScope::masked_only);
  const auto pp = pred.positions.values();
  const auto pn = pred.normals.values();

  PlyVertexData input;
  input.positions = cloud.positions.points;
  input.normals = cloud.normals.normals;

  PlyVertexData visible;
  for (std::size_t p = 0; p < s.visible; ++p) {
    for (std::size_t j = 0; j < k; ++j) {
      visible.positions.push_back(s.points[p * k + j] + s.centers[p]);
      visible.normals.push_back(s.normals[p * k + j]);
    }
  }

  PlyVertexData points, surfels;
  PlyScalar err{"angular_error", {}};
  double sum_err = 0.0;
  std::size_t below = 0;
  for (std::size_t r = 0; r < s.masked; ++r) {
    const std::size_t patch = s.visible + r;
    const Vec3& c = s.centers[patch];
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t off = (r * k + j) * 3;
      const Vec3 pos(pp[off], pp[off + 1], pp[off + 2]);
      const Vec3 nrm(pn[off], pn[off + 1], pn[off + 2]);
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < k; ++t) {
        const double d = (s.points[patch * k + t] - pos).squaredNorm();
        if (d < best_d) best_d = d, best = t;
      }
      const double deg = unoriented_angle_deg(nrm, s.normals[patch * k + best]);
      points.positions.push_back(pos + c);
      surfels.positions.push_back(pos + c);
      surfels.normals.push_back(nrm.norm() > 0.0 ? Vec3(nrm.normalized()) : nrm);
      err.values.push_back(deg);
      surfels.colors.push_back(deg < kVisThresholdDeg ? std::array<std::uint8_t, 3>{0, 0, 255}
                                                      : std::array<std::uint8_t, 3>{255, 0, 0});
      sum_err += deg;
      below += deg < kVisThresholdDeg;
    }
  }
  surfels.scalars.push_back(err);

  const std::pair<const char*, const PlyVertexData*> files[] = {
      {"input.ply", &input},
      {"visible.ply", &visible},
      {"predicted_points.ply", &points},
      {"predicted_surfels.ply", &surfels}};
  for (const auto& [name, d] : files) {
    write_ply(*d, (run.dir() / name).string());
    run.add_output(run.dir() / name);
  }
  const std::size_t total = err.values.size();
  run.results()["sample"] = o.sample;
  run.results()["predicted_points"] = total;
  run.results()["mean_angular_error_deg"] = total ? sum_err / double(total) : 0.0;
  run.results()["fraction_below_30deg"] = total ? double(below) / double(total) : 0.0;
  run.out() << "wrote " << total << " predicted surfels, "
            << (total ? 100.0 * double(below) / double(total) : 0.0) << "% within "
            << kVisThresholdDeg << " degrees\n";
}

void cmd_param_count(Run& run, const Options&) {
  const ModelConfig& m = run.cfg().model;
  ModelConfig points_only = m;
  points_only.predict_normals = false;
  ModelConfig surfel = m;
  surfel.predict_normals = true;
  const std::size_t pre = param_count(m, Stage::pretrain);
  const std::size_t fine = param_count(m, Stage::finetune);
  const std::size_t base = param_count(points_only, Stage::pretrain);
  const std::size_t extra = param_count(surfel, Stage::pretrain) - base;
  const double pct = 100.0 * double(extra) / double(base);
  run.results()["pretrain"] = pre;
  run.results()["finetune"] = fine;
  run.results()["surfel_head_extra"] = extra;
  run.results()["surfel_head_extra_percent"] = pct;
  std::ostream& out = run.out();
  out << std::fixed << std::setprecision(2);
  out << "pretrain " << pre << " (" << double(pre) / 1e6 << "M)\n";
  out << "finetune " << fine << " (" << double(fine) / 1e6 << "M)\n";
  out << std::setprecision(3);
  out << "surfel_head_extra " << extra << " (" << pct << "% over point-only)\n";
  out << std::defaultfloat;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  ad::keep_freed_memory();
  CLI::App app{"Masked surfel prediction for point-cloud pre-training", "masksurf"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  Options o;

  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("-c,--config", o.common.config_path, "Config file ([section] key = value)");
    sub->add_option("-s,--set", o.common.overrides, "Override section.key=value (repeatable)")
        ->allow_extra_args(false);
    sub->add_option("-o,--out", o.common.out_dir, "Output directory")->capture_default_str();
    sub->add_option("-p,--preset", o.common.preset, "Starting preset: desk, full or tiny")
        ->check(CLI::IsMember(preset_names()));
  };
  auto add_checkpoint = [&o](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint,
                    "Pre-trained checkpoint (default: randomly initialized encoder)");
  };
  const std::vector<std::string> protocols = {"transfer_all", "linear_frozen", "nonlinear_frozen"};

  auto* gen = app.add_subcommand("gen-data", "Generate the procedural surfel dataset");
  add_common(gen);
  gen->add_option("--format", o.format, "Sample file format")
      ->check(CLI::IsMember({"ply", "xyzn"}))
      ->capture_default_str();

  auto* pre = app.add_subcommand("pretrain", "Masked surfel pre-training");
  add_common(pre);

  auto* fin = app.add_subcommand("finetune", "Train a classifier on the encoder");
  add_common(fin);
  add_checkpoint(fin);
  fin->add_option("--protocol", o.protocol, "Overrides finetune.protocol")
      ->check(CLI::IsMember(protocols));

  auto* few = app.add_subcommand("fewshot", "n-way m-shot classification trials");
  add_common(few);
  add_checkpoint(few);
  few->add_option("--protocol", o.protocol, "Overrides finetune.protocol")
      ->check(CLI::IsMember(protocols));

  auto* probe = app.add_subcommand("probe", "Frozen-encoder decoder probe");
  add_common(probe);
  add_checkpoint(probe);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  add_common(gc);
  gc->add_option("--tol", o.tol, "Relative error tolerance")->capture_default_str();
  gc->add_option("--eps", o.eps, "Central difference step")->capture_default_str();
  gc->add_option("--order", o.order, "Central stencil order (2 or 4)")
      ->check(CLI::IsMember({2, 4}))
      ->capture_default_str();
  gc->add_option("--max-coords", o.max_coords, "Coordinates per array (0 = all)")
      ->capture_default_str();
  gc->add_option("--alpha", o.gc_alpha, "Normal loss weight (default loss.alpha)");

  auto* abl = app.add_subcommand("ablate", "Pre-train, probe and fine-tune over a sweep");
  add_common(abl);

  auto* vis = app.add_subcommand("export-vis", "Write PLY files of a masked prediction");
  add_common(vis);
  add_checkpoint(vis);
  vis->add_option("--sample", o.sample, "Test-split sample index")->capture_default_str();
  vis->add_option("--mask-seed", o.vis_seed, "Seed for grouping and masking")
      ->capture_default_str();

  auto* pc = app.add_subcommand("param-count", "Print learnable parameter counts");
  add_common(pc);

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    app.exit(e, out, err);
    std::string command = "unknown";
    for (auto* sub : app.get_subcommands()) command = sub->get_name();
    Run r(command, o.common, out);
    r.fail("usage", e.what());
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  Run r(command, o.common, out);
  int code = 0;
  try {
    r.resolve_config(command == "gradcheck" ? "tiny" : command == "param-count" ? "full" : "desk");
    r.mark_resolved();
    r.begin();
    if (command == "gen-data") cmd_gen_data(r, o);
    else if (command == "pretrain") cmd_pretrain(r, o);
    else if (command == "finetune") cmd_finetune(r, o);
    else if (command == "fewshot") cmd_fewshot(r, o);
    else if (command == "probe") cmd_probe(r, o);
    else if (command == "gradcheck") cmd_gradcheck(r, o);
    else if (command == "ablate") cmd_ablate(r, o);
    else if (command == "export-vis") cmd_export_vis(r, o);
    else if (command == "param-count") cmd_param_count(r, o);
    r.finish();
    return 0;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    r.fail("parse", e.what());
    code = 2;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    r.fail("invalid_argument", e.what());
    code = 2;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    r.fail("data", e.what());
    code = 1;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    r.fail("numerical", e.what());
    code = 1;
  } catch (const RunFailure& e) {
    err << "error: " << e.what() << "\n";
    r.fail("check_failed", e.what());
    code = 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    r.fail("internal", e.what());
    code = 1;
  }
  return code;
}

}  // namespace masksurf::cli
