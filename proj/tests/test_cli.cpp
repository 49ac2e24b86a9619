#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>
#include <unistd.h>

#include "cli.hpp"
#include "masksurf/dataio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "masksurf");
  std::ostringstream out, err;
  CliRun r;
  r.code = masksurf::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& p) { return json::parse(read_all(p)); }

struct Scratch {
  fs::path root;
  Scratch() {
    root = fs::temp_directory_path() / ("masksurf_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Scratch() { fs::remove_all(root); }
  std::string dir(const std::string& name) const { return (root / name).string(); }
};

const Scratch& scratch() {
  static Scratch s;
  return s;
}

const std::vector<std::string> kTiny = {"-p", "tiny", "-s", "train.record_wall_time=false"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

/// Tiny pre-training run shared by the commands that take a checkpoint.
const std::string& tiny_checkpoint() {
  static const std::string path = [] {
    const std::string out = scratch().dir("ckpt_run");
    const CliRun r = run(with({"pretrain", "-o", out}, kTiny));
    REQUIRE(r.code == 0);
    return (fs::path(out) / "checkpoint.bin").string();
  }();
  return path;
}

}  // namespace

TEST_CASE("cli help and usage errors") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"pretrain", "--help"}).code == 0);
  const std::string bad = scratch().dir("bad_flag");
  const CliRun r = run({"pretrain", "--no-such-flag", "-o", bad});
  CHECK(r.code == 2);
  CHECK(read_json(fs::path(bad) / "error.json")["type"] == "usage");
}

TEST_CASE("cli configuration errors produce an error record") {
  const std::string dir = scratch().dir("bad_key");
  const CliRun r = run({"param-count", "-o", dir, "-s", "model.nothing=3"});
  CHECK(r.code == 2);
  CHECK(r.err.find("model.nothing") != std::string::npos);
  const json e = read_json(fs::path(dir) / "error.json");
  CHECK(e["type"] == "invalid_argument");
  // the config never resolved, so there is no manifest
  CHECK_FALSE(fs::exists(fs::path(dir) / "run.json"));

  const std::string cfg = scratch().dir("bad.conf");
  std::ofstream(cfg) << "[loss]\nalpha = 0.1\nbogus line\n";
  const CliRun p = run({"param-count", "-o", scratch().dir("bad_conf"), "-c", cfg});
  CHECK(p.code == 2);
  CHECK(p.err.find("line 3") != std::string::npos);

  const std::string missing_dir = scratch().dir("missing");
  const CliRun missing =
      run(with({"probe", "-o", missing_dir, "--checkpoint", "/nonexistent.bin"}, kTiny));
  CHECK(missing.code == 1);
  CHECK(read_json(fs::path(missing_dir) / "error.json")["type"] == "data");
  CHECK(read_json(fs::path(missing_dir) / "run.json")["status"] == "error");
}

TEST_CASE("cli param-count") {
  const std::string dir = scratch().dir("pc");
  const CliRun r = run({"param-count", "-o", dir});
  REQUIRE(r.code == 0);
  std::smatch m;
  REQUIRE(std::regex_search(r.out, m, std::regex(R"(pretrain (\d+))")));
  const double pre = std::stod(m[1]);
  REQUIRE(std::regex_search(r.out, m, std::regex(R"(finetune (\d+))")));
  const double fin = std::stod(m[1]);
  CHECK(std::abs(pre / 29.0e6 - 1.0) <= 0.05);
  CHECK(std::abs(fin / 22.1e6 - 1.0) <= 0.05);
  const json run_json = read_json(fs::path(dir) / "run.json");
  CHECK(run_json["status"] == "ok");
  CHECK(run_json["preset"] == "full");
  CHECK(run_json["results"]["pretrain"].get<double>() == pre);
  CHECK(fs::exists(fs::path(dir) / "config.txt"));
}

TEST_CASE("cli gradcheck") {
  const std::string dir = scratch().dir("gc");
  const CliRun r = run({"gradcheck", "-o", dir, "--max-coords", "4"});
  CHECK(r.code == 0);
  CHECK(std::regex_search(r.out, std::regex(R"(max_rel_error \S+ at \S+ over \d+ coords, tol 0\.0001: PASS)")));
  const CliRun f = run({"gradcheck", "-o", scratch().dir("gc_fail"), "--max-coords", "4",
                        "--tol", "1e-30"});
  CHECK(f.code == 1);
  CHECK(f.out.find("FAIL") != std::string::npos);
  CHECK(read_json(fs::path(scratch().dir("gc_fail")) / "error.json")["type"] == "check_failed");
}

TEST_CASE("cli gen-data writes readable samples") {
  const std::string dir = scratch().dir("gen");
  const CliRun r = run(with({"gen-data", "-o", dir, "--format", "xyzn"}, kTiny));
  REQUIRE(r.code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(fs::path(dir) / "data")) {
    if (e.path().extension() == ".xyzn") {
      ++files;
      CHECK(masksurf::read_surfel_file(e.path().string()).size() == 128);
    }
  }
  CHECK(files == 24);
  CHECK(fs::exists(fs::path(dir) / "index.csv"));
}

TEST_CASE("cli pretrain is reproducible") {
  const std::string a = scratch().dir("pre_a"), b = scratch().dir("pre_b");
  const CliRun ra = run(with({"pretrain", "-o", a}, kTiny));
  const CliRun rb = run(with({"pretrain", "-o", b}, kTiny));
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  CHECK(std::regex_search(ra.out, std::regex(R"(epoch 1 .*l_all)")));
  const std::string ma = read_all(fs::path(a) / "metrics.csv");
  CHECK(!ma.empty());
  CHECK(ma == read_all(fs::path(b) / "metrics.csv"));
  CHECK(read_all(fs::path(a) / "checkpoint.bin") == read_all(fs::path(b) / "checkpoint.bin"));
  const json j = read_json(fs::path(a) / "run.json");
  CHECK(j["command"] == "pretrain");
  CHECK(j["seed"]["train"] == 0);
  CHECK(j["overrides"].size() == 1);
}

TEST_CASE("cli commands on a checkpoint") {
  const std::string ckpt = tiny_checkpoint();

  const std::string fin = scratch().dir("fin");
  const CliRun f = run(with({"finetune", "-o", fin, "--checkpoint", ckpt, "--protocol",
                             "linear_frozen"}, kTiny));
  REQUIRE(f.code == 0);
  const json fr = read_json(fs::path(fin) / "run.json")["results"];
  CHECK(fr["encoder_checksum_before"] == fr["encoder_checksum_after"]);
  CHECK(fs::exists(fs::path(fin) / "finetuned.bin"));

  const CliRun few = run(with({"fewshot", "-o", scratch().dir("few"), "--checkpoint", ckpt}, kTiny));
  REQUIRE(few.code == 0);
  CHECK(std::regex_search(few.out, std::regex(R"(2-way 2-shot accuracy \d+\.\d±\d+\.\d)")));

  const CliRun pr = run(with({"probe", "-o", scratch().dir("probe"), "--checkpoint", ckpt}, kTiny));
  REQUIRE(pr.code == 0);
  CHECK(pr.out.find("l_p") != std::string::npos);
  CHECK(fs::exists(fs::path(scratch().dir("probe")) / "probe_metrics.csv"));

  const std::string vis = scratch().dir("vis");
  const CliRun v = run(with({"export-vis", "-o", vis, "--checkpoint", ckpt}, kTiny));
  REQUIRE(v.code == 0);
  for (const char* name : {"input.ply", "visible.ply", "predicted_points.ply", "predicted_surfels.ply"})
    CHECK(fs::exists(fs::path(vis) / name));
  const std::string surfels = read_all(fs::path(vis) / "predicted_surfels.ply");
  CHECK(surfels.find("angular_error") != std::string::npos);
  CHECK(masksurf::read_surfel_file((fs::path(vis) / "predicted_surfels.ply").string()).size() > 0);
}

TEST_CASE("cli ablate writes a summary") {
  const std::string dir = scratch().dir("abl");
  const CliRun r = run(with({"ablate", "-o", dir, "-s", "ablate.sweep=alpha", "-s",
                             "ablate.values=0,0.1", "-s", "finetune.epochs=1"}, kTiny));
  REQUIRE(r.code == 0);
  std::istringstream csv(read_all(fs::path(dir) / "summary.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line ==
        "sweep,value,seed,pretrain_l_all,probe_l_p,probe_l_n,probe_l_all,linear_test_accuracy");
  std::size_t rows = 0;
  while (std::getline(csv, line)) rows += !line.empty();
  CHECK(rows == 2);
  CHECK(fs::exists(fs::path(dir) / "runs" / "alpha=0.1_seed0" / "metrics.csv"));
}
