#include "masksurf/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

namespace masksurf {

Protocol parse_protocol(const std::string& name) {
  if (name == "transfer_all") return Protocol::transfer_all;
  if (name == "linear_frozen") return Protocol::linear_frozen;
  if (name == "nonlinear_frozen") return Protocol::nonlinear_frozen;
  throw InvalidArgument("unknown protocol '" + name +
                        "' (transfer_all|linear_frozen|nonlinear_frozen)");
}

const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::transfer_all: return "transfer_all";
    case Protocol::linear_frozen: return "linear_frozen";
    case Protocol::nonlinear_frozen: return "nonlinear_frozen";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) {
    throw InvalidArgument(key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw InvalidArgument(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidArgument(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Sel>
Field size_field(const std::string& key, Sel sel) {
  return {[sel](const RunConfig& c) { return std::to_string(sel(const_cast<RunConfig&>(c))); },
          [sel, key](RunConfig& c, const std::string& v) {
            sel(c) = static_cast<std::size_t>(to_u64(key, v));
          }};
}

template <typename Sel>
Field u64_field(const std::string& key, Sel sel) {
  return {[sel](const RunConfig& c) { return std::to_string(sel(const_cast<RunConfig&>(c))); },
          [sel, key](RunConfig& c, const std::string& v) { sel(c) = to_u64(key, v); }};
}

template <typename Sel>
Field double_field(const std::string& key, Sel sel) {
  return {[sel](const RunConfig& c) { return fmt_double(sel(const_cast<RunConfig&>(c))); },
          [sel, key](RunConfig& c, const std::string& v) { sel(c) = to_double(key, v); }};
}

template <typename Sel>
Field bool_field(const std::string& key, Sel sel) {
  return {[sel](const RunConfig& c) {
            return std::string(sel(const_cast<RunConfig&>(c)) ? "true" : "false");
          },
          [sel, key](RunConfig& c, const std::string& v) { sel(c) = to_bool(key, v); }};
}

template <typename Sel, typename Parse>
Field enum_field(Sel sel, Parse parse) {
  return {[sel](const RunConfig& c) { return std::string(to_string(sel(const_cast<RunConfig&>(c)))); },
          [sel, parse](RunConfig& c, const std::string& v) { sel(c) = parse(v); }};
}

void add_optim(std::map<std::string, Field>& f, const std::string& sec,
               OptimSettings& (*sel)(RunConfig&)) {
  f[sec + ".epochs"] = size_field(sec + ".epochs", [sel](RunConfig& c) -> std::size_t& { return sel(c).epochs; });
  f[sec + ".batch_size"] = size_field(sec + ".batch_size", [sel](RunConfig& c) -> std::size_t& { return sel(c).batch_size; });
  f[sec + ".lr"] = double_field(sec + ".lr", [sel](RunConfig& c) -> double& { return sel(c).lr; });
  f[sec + ".weight_decay"] = double_field(sec + ".weight_decay", [sel](RunConfig& c) -> double& { return sel(c).weight_decay; });
  f[sec + ".beta1"] = double_field(sec + ".beta1", [sel](RunConfig& c) -> double& { return sel(c).beta1; });
  f[sec + ".beta2"] = double_field(sec + ".beta2", [sel](RunConfig& c) -> double& { return sel(c).beta2; });
  f[sec + ".eps"] = double_field(sec + ".eps", [sel](RunConfig& c) -> double& { return sel(c).eps; });
  f[sec + ".seed"] = u64_field(sec + ".seed", [sel](RunConfig& c) -> std::uint64_t& { return sel(c).seed; });
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
#define MS_REF(T, expr) [](RunConfig& c) -> T& { return expr; }
    f["data.classes"] = {[](const RunConfig& c) { return join_list(c.data.classes); },
                         [](RunConfig& c, const std::string& v) { c.data.classes = split_list(v); }};
    f["data.samples_per_class"] = size_field("data.samples_per_class", MS_REF(std::size_t, c.data.samples_per_class));
    f["data.points"] = size_field("data.points", MS_REF(std::size_t, c.data.points));
    f["data.split"] = double_field("data.split", MS_REF(double, c.data.split));
    f["data.seed"] = u64_field("data.seed", MS_REF(std::uint64_t, c.data.seed));
    f["data.normal_source"] = enum_field(MS_REF(NormalSource, c.data.normal_source), parse_normal_source);
    f["data.normal_k"] = size_field("data.normal_k", MS_REF(std::size_t, c.data.normal_k));
    f["data.mesh_dir"] = {[](const RunConfig& c) { return c.data.mesh_dir; },
                          [](RunConfig& c, const std::string& v) { c.data.mesh_dir = v; }};

    f["model.embed_dim"] = size_field("model.embed_dim", MS_REF(std::size_t, c.model.embed_dim));
    f["model.encoder_depth"] = size_field("model.encoder_depth", MS_REF(std::size_t, c.model.encoder_depth));
    f["model.decoder_depth"] = size_field("model.decoder_depth", MS_REF(std::size_t, c.model.decoder_depth));
    f["model.heads"] = size_field("model.heads", MS_REF(std::size_t, c.model.heads));
    f["model.mlp_ratio"] = size_field("model.mlp_ratio", MS_REF(std::size_t, c.model.mlp_ratio));
    f["model.patch_count"] = size_field("model.patch_count", MS_REF(std::size_t, c.model.patch_count));
    f["model.patch_size"] = size_field("model.patch_size", MS_REF(std::size_t, c.model.patch_size));
    f["model.embed_hidden1"] = size_field("model.embed_hidden1", MS_REF(std::size_t, c.model.embed_hidden1));
    f["model.embed_hidden2"] = size_field("model.embed_hidden2", MS_REF(std::size_t, c.model.embed_hidden2));
    f["model.pe_hidden"] = size_field("model.pe_hidden", MS_REF(std::size_t, c.model.pe_hidden));
    f["model.predict_normals"] = bool_field("model.predict_normals", MS_REF(bool, c.model.predict_normals));
    f["model.num_classes"] = size_field("model.num_classes", MS_REF(std::size_t, c.model.num_classes));
    f["model.cls_hidden1"] = size_field("model.cls_hidden1", MS_REF(std::size_t, c.model.cls_hidden1));
    f["model.cls_hidden2"] = size_field("model.cls_hidden2", MS_REF(std::size_t, c.model.cls_hidden2));
    f["model.dropout"] = double_field("model.dropout", MS_REF(double, c.model.dropout));

    f["mask.strategy"] = enum_field(MS_REF(MaskStrategy, c.mask.strategy), parse_mask_strategy);
    f["mask.ratio"] = double_field("mask.ratio", MS_REF(double, c.mask.ratio));

    f["loss.alpha"] = double_field("loss.alpha", MS_REF(double, c.loss.alpha));
    f["loss.normal_mode"] = enum_field(MS_REF(NormalMode, c.loss.normal_mode), parse_normal_mode);
    f["loss.target_scope"] = enum_field(MS_REF(TargetScope, c.loss.target_scope), parse_target_scope);

    f["augment.scale_lo"] = double_field("augment.scale_lo", MS_REF(double, c.augment.scale_lo));
    f["augment.scale_hi"] = double_field("augment.scale_hi", MS_REF(double, c.augment.scale_hi));
    f["augment.translate"] = double_field("augment.translate", MS_REF(double, c.augment.translate));

    add_optim(f, "train", [](RunConfig& c) -> OptimSettings& { return c.train; });
    f["train.checkpoint_every"] = size_field("train.checkpoint_every", MS_REF(std::size_t, c.train.checkpoint_every));
    f["train.record_wall_time"] = bool_field("train.record_wall_time", MS_REF(bool, c.train.record_wall_time));

    add_optim(f, "finetune", [](RunConfig& c) -> OptimSettings& { return c.finetune; });
    f["finetune.protocol"] = enum_field(MS_REF(Protocol, c.finetune.protocol), parse_protocol);

    f["fewshot.n_way"] = size_field("fewshot.n_way", MS_REF(std::size_t, c.fewshot.n_way));
    f["fewshot.m_shot"] = size_field("fewshot.m_shot", MS_REF(std::size_t, c.fewshot.m_shot));
    f["fewshot.query_per_class"] = size_field("fewshot.query_per_class", MS_REF(std::size_t, c.fewshot.query_per_class));
    f["fewshot.trials"] = size_field("fewshot.trials", MS_REF(std::size_t, c.fewshot.trials));

    add_optim(f, "probe", [](RunConfig& c) -> OptimSettings& { return c.probe; });
    f["probe.alpha"] = double_field("probe.alpha", MS_REF(double, c.probe.alpha));

    f["ablate.sweep"] = {[](const RunConfig& c) { return c.ablate.sweep; },
                         [](RunConfig& c, const std::string& v) { c.ablate.sweep = v; }};
    f["ablate.values"] = {[](const RunConfig& c) { return join_list(c.ablate.values); },
                          [](RunConfig& c, const std::string& v) { c.ablate.values = split_list(v); }};
    f["ablate.seeds"] = {[](const RunConfig& c) {
                           std::vector<std::string> s;
                           for (auto v : c.ablate.seeds) s.push_back(std::to_string(v));
                           return join_list(s);
                         },
                         [](RunConfig& c, const std::string& v) {
                           c.ablate.seeds.clear();
                           for (const auto& s : split_list(v)) c.ablate.seeds.push_back(to_u64("ablate.seeds", s));
                         }};
#undef MS_REF
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  const auto& f = fields();
  auto it = f.find(key);
  if (it == f.end()) throw InvalidArgument("unknown config key '" + key + "'");
  return it->second;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, trim(value));
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : fields()) out.push_back(k);
  return out;
}

std::map<std::string, std::string> RunConfig::resolved() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [k, v] : resolved()) {
    const auto dot = k.find('.');
    const std::string sec = k.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    os << k.substr(dot + 1) << " = " << v << '\n';
  }
  return os.str();
}

void RunConfig::validate() const {
  model.validate();
  data.validate();
  augment.validate();
  masked_count_for(model.patch_count, mask.ratio);
  if (model.patch_count > data.points) {
    throw InvalidArgument("model.patch_count exceeds data.points");
  }
  if (model.patch_size > data.points) {
    throw InvalidArgument("model.patch_size exceeds data.points");
  }
  if (!(loss.alpha >= 0.0)) throw InvalidArgument("loss.alpha must be >= 0");
  if (loss.alpha > 0.0 && !model.predict_normals) {
    throw InvalidArgument("loss.alpha > 0 needs model.predict_normals = true");
  }
  for (const OptimSettings* o : {static_cast<const OptimSettings*>(&train),
                                 static_cast<const OptimSettings*>(&finetune),
                                 static_cast<const OptimSettings*>(&probe)}) {
    if (o->batch_size == 0) throw InvalidArgument("batch_size must be positive");
    if (!(o->lr >= 0.0) || !(o->weight_decay >= 0.0)) {
      throw InvalidArgument("lr and weight_decay must be >= 0");
    }
    if (!(o->beta1 >= 0.0 && o->beta1 < 1.0 && o->beta2 >= 0.0 && o->beta2 < 1.0 && o->eps > 0.0)) {
      throw InvalidArgument("AdamW constants need 0 <= beta < 1 and eps > 0");
    }
  }
  if (!(probe.alpha >= 0.0)) throw InvalidArgument("probe.alpha must be >= 0");
  if (probe.alpha > 0.0 && !model.predict_normals) {
    throw InvalidArgument("probe.alpha > 0 needs model.predict_normals = true");
  }
  if (fewshot.n_way == 0 || fewshot.m_shot == 0 || fewshot.trials == 0) {
    throw InvalidArgument("fewshot n_way, m_shot and trials must be positive");
  }
}

void merge_config(RunConfig& cfg, std::istream& in) {
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto c = line.find_first_of("#;");
    if (c != std::string::npos) line.erase(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ParseError("empty section name", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no);
    const std::string name = trim(line.substr(0, eq));
    if (name.empty()) throw ParseError("missing key before '='", line_no);
    const std::string key = section.empty() ? name : section + "." + name;
    try {
      cfg.set(key, line.substr(eq + 1));
    } catch (const InvalidArgument& e) {
      throw ParseError(e.what(), line_no);
    }
  }
}

RunConfig parse_config(std::istream& in) {
  RunConfig cfg;
  merge_config(cfg, in);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file '" + path + "'");
  return parse_config(in);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw InvalidArgument("override '" + assignment + "' is not key=value");
  }
  cfg.set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig config_from_map(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  for (const auto& [k, v] : kv) cfg.set(k, v);
  return cfg;
}

RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  if (name == "desk") return cfg;
  if (name == "full") {
    cfg.model = ModelConfig::full();
    cfg.data.points = 2048;
    cfg.train.batch_size = 128;
    cfg.train.epochs = 300;
    return cfg;
  }
  if (name == "tiny") {
    cfg.model = ModelConfig::tiny();
    cfg.data.classes = {"sphere", "box", "torus"};
    cfg.data.samples_per_class = 8;
    cfg.data.points = 128;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 8;
    cfg.finetune.epochs = 2;
    cfg.finetune.batch_size = 8;
    cfg.probe.epochs = 2;
    cfg.probe.batch_size = 8;
    cfg.fewshot = {2, 2, 2, 2};
    return cfg;
  }
  throw InvalidArgument("unknown preset '" + name + "' (desk|full|tiny)");
}

std::vector<std::string> preset_names() { return {"desk", "full", "tiny"}; }

}  // namespace masksurf
