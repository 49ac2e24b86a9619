#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "masksurf/dataio.hpp"
#include "masksurf/losses.hpp"
#include "masksurf/masking.hpp"
#include "masksurf/network.hpp"

namespace masksurf {

struct MaskSettings {
  MaskStrategy strategy = MaskStrategy::random;
  double ratio = 0.6;
};

struct LossSettings {
  double alpha = 0.01;  // final value of the linear warm-up
  NormalMode normal_mode = NormalMode::unoriented;
  TargetScope target_scope = TargetScope::masked_only;
};

struct OptimSettings {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
};

struct TrainSettings : OptimSettings {
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
  bool record_wall_time = true;      // false logs 0 so metrics are reproducible bytes
};

enum class Protocol { transfer_all, linear_frozen, nonlinear_frozen };
Protocol parse_protocol(const std::string& name);
const char* to_string(Protocol p);

struct FinetuneSettings : OptimSettings {
  Protocol protocol = Protocol::linear_frozen;
  FinetuneSettings() { epochs = 30; }
};

struct FewshotSettings {
  std::size_t n_way = 5;
  std::size_t m_shot = 10;
  std::size_t query_per_class = 20;
  std::size_t trials = 10;
};

struct ProbeSettings : OptimSettings {
  // Constant loss weight for the probe decoder, the same for every encoder
  // being compared.
  double alpha = 0.01;
  ProbeSettings() { epochs = 20; }
};

struct AblateSettings {
  // mask_ratio | mask_strategy | alpha | normal_mode | target_scope | normal_source
  std::string sweep = "mask_ratio";
  std::vector<std::string> values;  // empty: the sweep's default grid
  std::vector<std::uint64_t> seeds = {0};
};

/// Every tunable of a run. Keys are "section.name".
struct RunConfig {
  DatasetManifest data;
  ModelConfig model;
  MaskSettings mask;
  LossSettings loss;
  AugmentConfig augment;
  TrainSettings train;
  FinetuneSettings finetune;
  FewshotSettings fewshot;
  ProbeSettings probe;
  AblateSettings ablate;

  /// Throws InvalidArgument for an unknown key or a bad value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();
  /// All keys with their resolved values.
  std::map<std::string, std::string> resolved() const;
  /// Round-trippable config text.
  std::string to_text() const;
  /// Cross-field checks.
  void validate() const;
};

/// `[section]` headers, `key = value` lines, '#' or ';' comments.
/// Errors carry the line number.
RunConfig parse_config(std::istream& in);
/// Applies the file's entries on top of `cfg`; keys not in the file keep
/// their current values.
void merge_config(RunConfig& cfg, std::istream& in);
RunConfig load_config(const std::string& path);
/// Applies one "section.key=value" override.
void apply_override(RunConfig& cfg, const std::string& assignment);
/// Rebuilds a config from resolved key/value pairs.
RunConfig config_from_map(const std::map<std::string, std::string>& kv);

/// Named starting points: "desk" (the defaults), "full" (full-size model)
/// and "tiny" (seconds-long smoke runs).
RunConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace masksurf
