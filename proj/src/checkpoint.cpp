#include "masksurf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace masksurf {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'S', 'U', 'R', 'F', 'C', 'K', '\0'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

template <typename T>
T get_pod(const std::string& buf, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(T) > buf.size()) throw DataError("checkpoint '" + path + "' is truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

json array_list(const std::vector<NamedArray>& arrays, std::uint64_t& offset) {
  json list = json::array();
  for (const auto& a : arrays) {
    std::size_t n = 1;
    for (auto d : a.shape) n *= d;
    if (n != a.values.size()) {
      throw InvalidArgument("array '" + a.name + "' shape does not match its value count");
    }
    list.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", n}});
    offset += n * sizeof(double);
  }
  return list;
}

std::vector<NamedArray> read_arrays(const json& list, const std::string& blob,
                                    const std::string& path) {
  std::vector<NamedArray> out;
  for (const auto& e : list) {
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<std::vector<std::size_t>>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto count = e.at("count").get<std::uint64_t>();
    std::size_t n = 1;
    for (auto d : a.shape) n *= d;
    if (n != count) throw DataError("checkpoint array '" + a.name + "' shape/count mismatch");
    if (offset + count * sizeof(double) > blob.size()) {
      throw DataError("checkpoint '" + path + "' array '" + a.name + "' runs past the end");
    }
    a.values.resize(count);
    std::memcpy(a.values.data(), blob.data() + offset, count * sizeof(double));
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace

const NamedArray* Checkpoint::find_parameter(const std::string& name) const {
  for (const auto& a : parameters)
    if (a.name == name) return &a;
  return nullptr;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::uint64_t offset = 0;
  json manifest;
  manifest["kind"] = ckpt.kind;
  manifest["config"] = ckpt.config;
  manifest["metadata"] = ckpt.metadata;
  manifest["epoch"] = ckpt.epoch;
  manifest["step"] = ckpt.step;
  manifest["optimizer_step"] = ckpt.optimizer_step;
  manifest["rng_state"] = ckpt.rng_state;
  manifest["parameters"] = array_list(ckpt.parameters, offset);
  manifest["optimizer"] = array_list(ckpt.optimizer, offset);
  const std::string text = manifest.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, Checkpoint::kFormatVersion);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto* group : {&ckpt.parameters, &ckpt.optimizer}) {
    for (const auto& a : *group) {
      out.append(reinterpret_cast<const char*>(a.values.data()), a.values.size() * sizeof(double));
    }
  }
  // Write-then-rename so an interrupted run keeps the previous checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint '" + path + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("failed writing checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot move checkpoint into place at '" + path + "'");
  }
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint '" + path + "'");
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("'" + path + "' is not a checkpoint (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get_pod<std::uint32_t>(buf, pos, path);
  if (version != Checkpoint::kFormatVersion) {
    throw DataError("checkpoint '" + path + "' has format version " + std::to_string(version) +
                    ", expected " + std::to_string(Checkpoint::kFormatVersion));
  }
  const auto len = get_pod<std::uint64_t>(buf, pos, path);
  if (pos + len > buf.size()) throw DataError("checkpoint '" + path + "' is truncated");
  json manifest;
  try {
    manifest = json::parse(buf.substr(pos, len));
  } catch (const json::exception& e) {
    throw DataError("checkpoint '" + path + "' manifest: " + e.what());
  }
  const std::string blob = buf.substr(pos + len);

  Checkpoint c;
  try {
    c.kind = manifest.at("kind").get<std::string>();
    c.config = manifest.at("config").get<std::map<std::string, std::string>>();
    c.metadata = manifest.at("metadata").get<std::map<std::string, std::string>>();
    c.epoch = manifest.at("epoch").get<std::uint64_t>();
    c.step = manifest.at("step").get<std::uint64_t>();
    c.optimizer_step = manifest.at("optimizer_step").get<std::uint64_t>();
    c.rng_state = manifest.at("rng_state").get<std::string>();
    c.parameters = read_arrays(manifest.at("parameters"), blob, path);
    c.optimizer = read_arrays(manifest.at("optimizer"), blob, path);
  } catch (const json::exception& e) {
    throw DataError("checkpoint '" + path + "' manifest: " + e.what());
  }
  return c;
}

std::vector<NamedArray> snapshot(const std::vector<NamedTensor>& tensors) {
  std::vector<NamedArray> out;
  out.reserve(tensors.size());
  for (const auto& [name, t] : tensors) {
    NamedArray a;
    a.name = name;
    a.shape = t.shape();
    a.values.assign(t.values().begin(), t.values().end());
    out.push_back(std::move(a));
  }
  return out;
}

std::size_t restore_parameters(MaskSurfModel& model, const std::vector<NamedArray>& arrays) {
  std::size_t copied = 0;
  for (auto& [name, t] : model.named_parameters()) {
    for (const auto& a : arrays) {
      if (a.name != name) continue;
      if (a.shape != t.shape()) {
        throw DataError("checkpoint parameter '" + name + "' has shape " + ad::to_string(a.shape) +
                        ", model expects " + ad::to_string(t.shape()));
      }
      auto dst = t.mutable_values();
      for (std::size_t i = 0; i < a.values.size(); ++i) dst[i] = static_cast<Real>(a.values[i]);
      ++copied;
      break;
    }
  }
  return copied;
}

std::uint64_t parameter_checksum(const std::vector<NamedTensor>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : tensors) {
    mix(name.data(), name.size());
    mix(t.values().data(), t.values().size() * sizeof(Real));
  }
  return h;
}

}  // namespace masksurf
