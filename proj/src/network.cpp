#include "masksurf/network.hpp"

#include <cmath>
#include <numeric>

#include "masksurf/autodiff/ops.hpp"

namespace masksurf {

using namespace ad;

void ModelConfig::validate() const {
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw InvalidArgument("model: embed_dim " + std::to_string(embed_dim) +
                          " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (patch_count < 2 || patch_size == 0) {
    throw InvalidArgument("model: need at least 2 patches of positive size");
  }
  if (mlp_ratio == 0 || embed_hidden1 == 0 || embed_hidden2 == 0 || pe_hidden == 0) {
    throw InvalidArgument("model: hidden widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw InvalidArgument("model: dropout must be in [0, 1)");
  }
}

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.embed_dim = 384;
  c.encoder_depth = 12;
  c.decoder_depth = 4;
  c.heads = 6;
  c.patch_count = 64;
  c.patch_size = 32;
  c.num_classes = 40;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.embed_dim = 16;
  c.encoder_depth = 2;
  c.decoder_depth = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.patch_count = 4;
  c.patch_size = 8;
  c.embed_hidden1 = 8;
  c.embed_hidden2 = 12;
  c.pe_hidden = 8;
  c.cls_hidden1 = 12;
  c.cls_hidden2 = 8;
  c.num_classes = 3;
  return c;
}

HeadKind parse_head_kind(const std::string& name) {
  if (name == "linear") return HeadKind::linear;
  if (name == "nonlinear") return HeadKind::nonlinear;
  throw InvalidArgument("unknown classifier head '" + name + "' (linear|nonlinear)");
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

Tensor LayerNormParams::operator()(const Tensor& x) const {
  return layer_norm(x, gamma, beta);
}

namespace {

// PyTorch nn.Linear default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for both.
Linear uniform_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<Real> w(in * out), b(out);
  for (auto& v : w) v = static_cast<Real>(u(rng));
  for (auto& v : b) v = static_cast<Real>(u(rng));
  return {Tensor::parameter({in, out}, std::move(w)), Tensor::parameter({out}, std::move(b))};
}

std::vector<Real> trunc_normal(std::size_t n, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, std);
  std::vector<Real> out(n);
  for (auto& v : out) {
    double x;
    do {
      x = g(rng);
    } while (std::abs(x) > 2.0 * std);
    v = static_cast<Real>(x);
  }
  return out;
}

Linear trunc_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {Tensor::parameter({in, out}, trunc_normal(in * out, 0.02, rng)),
          Tensor::full({out}, Real(0), true)};
}

LayerNormParams make_norm(std::size_t d) {
  return {Tensor::full({d}, Real(1), true), Tensor::full({d}, Real(0), true)};
}

TransformerBlock make_block(const ModelConfig& c, std::mt19937_64& rng) {
  const std::size_t d = c.embed_dim;
  TransformerBlock b;
  b.norm1 = make_norm(d);
  b.wq = Tensor::parameter({d, d}, trunc_normal(d * d, 0.02, rng));
  b.wk = Tensor::parameter({d, d}, trunc_normal(d * d, 0.02, rng));
  b.wv = Tensor::parameter({d, d}, trunc_normal(d * d, 0.02, rng));
  b.proj = trunc_linear(d, d, rng);
  b.norm2 = make_norm(d);
  b.fc1 = trunc_linear(d, d * c.mlp_ratio, rng);
  b.fc2 = trunc_linear(d * c.mlp_ratio, d, rng);
  return b;
}

void push(std::vector<NamedTensor>& out, const std::string& name, const Linear& l) {
  out.emplace_back(name + ".weight", l.weight);
  out.emplace_back(name + ".bias", l.bias);
}

void push_block(std::vector<NamedTensor>& out, const std::string& name,
                const TransformerBlock& b) {
  out.emplace_back(name + ".norm1.gamma", b.norm1.gamma);
  out.emplace_back(name + ".norm1.beta", b.norm1.beta);
  out.emplace_back(name + ".attn.wq", b.wq);
  out.emplace_back(name + ".attn.wk", b.wk);
  out.emplace_back(name + ".attn.wv", b.wv);
  push(out, name + ".attn.proj", b.proj);
  out.emplace_back(name + ".norm2.gamma", b.norm2.gamma);
  out.emplace_back(name + ".norm2.beta", b.norm2.beta);
  push(out, name + ".mlp.fc1", b.fc1);
  push(out, name + ".mlp.fc2", b.fc2);
}

std::size_t linear_count(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t block_count(const ModelConfig& c) {
  const std::size_t d = c.embed_dim;
  const std::size_t hidden = d * c.mlp_ratio;
  return 2 * d + 3 * d * d + linear_count(d, d) + 2 * d + linear_count(d, hidden) +
         linear_count(hidden, d);
}

std::size_t count_of(const std::vector<NamedTensor>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

void check_shape(const Tensor& t, std::size_t rank, const char* what) {
  if (t.dim() != rank) {
    throw InvalidArgument(std::string(what) + ": expected rank " + std::to_string(rank) +
                          ", got shape " + to_string(t.shape()));
  }
}

}  // namespace

MaskSurfModel::MaskSurfModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.embed_dim;
  embed1_ = uniform_linear(3, config_.embed_hidden1, rng);
  embed2_ = uniform_linear(config_.embed_hidden1, config_.embed_hidden2, rng);
  embed_out_ = uniform_linear(config_.embed_hidden2, d, rng);
  pe_enc1_ = trunc_linear(3, config_.pe_hidden, rng);
  pe_enc2_ = trunc_linear(config_.pe_hidden, d, rng);
  for (std::size_t i = 0; i < config_.encoder_depth; ++i) {
    encoder_.push_back(make_block(config_, rng));
  }
  reset_decoder(rng());
}

void MaskSurfModel::reset_decoder(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.embed_dim;
  pe_dec1_ = trunc_linear(3, config_.pe_hidden, rng);
  pe_dec2_ = trunc_linear(config_.pe_hidden, d, rng);
  decoder_.clear();
  for (std::size_t i = 0; i < config_.decoder_depth; ++i) {
    decoder_.push_back(make_block(config_, rng));
  }
  mask_token_ = Tensor::parameter({d}, trunc_normal(d, 0.02, rng));
  const std::size_t channels = config_.predict_normals ? 6 : 3;
  head_ = uniform_linear(d, config_.patch_size * channels, rng);
}

void MaskSurfModel::reset_classifier(HeadKind kind, std::size_t classes,
                                     std::uint64_t seed) {
  if (classes == 0) throw InvalidArgument("classifier: need at least one class");
  std::mt19937_64 rng(seed);
  const std::size_t in = 2 * config_.embed_dim;
  Classifier c;
  c.kind = kind;
  if (kind == HeadKind::linear) {
    c.layers.push_back(uniform_linear(in, classes, rng));
  } else {
    c.layers.push_back(uniform_linear(in, config_.cls_hidden1, rng));
    c.layers.push_back(uniform_linear(config_.cls_hidden1, config_.cls_hidden2, rng));
    c.layers.push_back(uniform_linear(config_.cls_hidden2, classes, rng));
  }
  classifier_ = std::move(c);
}

Tensor MaskSurfModel::embed_tokens(const Tensor& patches) const {
  check_shape(patches, 4, "embed_tokens");
  const auto& s = patches.shape();
  if (s[2] != config_.patch_size || s[3] != 3) {
    throw InvalidArgument("embed_tokens: patches " + to_string(s) + " do not match K=" +
                          std::to_string(config_.patch_size));
  }
  const std::size_t b = s[0], v = s[1], k = s[2];
  Tensor x = reshape(patches, {b * v * k, 3});
  x = gelu(embed1_(x));
  x = gelu(embed2_(x));
  x = max_reduce(reshape(x, {b * v, k, config_.embed_hidden2}), 1);
  x = embed_out_(x);
  return reshape(x, {b, v, config_.embed_dim});
}

Tensor MaskSurfModel::positional_embed(const Tensor& centers, PeKind which) const {
  check_shape(centers, 3, "positional_embed");
  if (centers.size(2) != 3) throw InvalidArgument("positional_embed: centers must be [B, n, 3]");
  const Linear& l1 = which == PeKind::encoder ? pe_enc1_ : pe_dec1_;
  const Linear& l2 = which == PeKind::encoder ? pe_enc2_ : pe_dec2_;
  return l2(gelu(l1(centers)));
}

Tensor MaskSurfModel::attention(const TransformerBlock& blk, const Tensor& h) const {
  const std::size_t b = h.size(0), t = h.size(1), d = config_.embed_dim;
  const std::size_t nh = config_.heads, dh = d / nh;
  auto heads_first = [&](const Tensor& x, bool keys) {
    Tensor r = reshape(x, {b, t, nh, dh});
    r = keys ? transpose(r, {0, 2, 3, 1}) : transpose(r, {0, 2, 1, 3});
    return keys ? reshape(r, {b * nh, dh, t}) : reshape(r, {b * nh, t, dh});
  };
  Tensor q = heads_first(linear(h, blk.wq), false);
  Tensor k = heads_first(linear(h, blk.wk), true);
  Tensor v = heads_first(linear(h, blk.wv), false);
  Tensor scores = scale(matmul(q, k), Real(1) / std::sqrt(static_cast<Real>(dh)));
  Tensor out = matmul(softmax(scores), v);  // [B*H, T, dh]
  out = transpose(reshape(out, {b, nh, t, dh}), {0, 2, 1, 3});
  return blk.proj(reshape(out, {b, t, d}));
}

Tensor MaskSurfModel::block_forward(const TransformerBlock& blk, const Tensor& x) const {
  Tensor h = x + attention(blk, blk.norm1(x));
  return h + blk.fc2(gelu(blk.fc1(blk.norm2(h))));
}

Tensor MaskSurfModel::encode(const Tensor& tokens, const Tensor& pe) const {
  check_shape(tokens, 3, "encode");
  if (tokens.shape() != pe.shape()) {
    throw InvalidArgument("encode: tokens " + to_string(tokens.shape()) +
                          " and positional embedding " + to_string(pe.shape()) +
                          " differ");
  }
  Tensor x = tokens;
  for (const auto& blk : encoder_) x = block_forward(blk, x + pe);
  return x;
}

Tensor MaskSurfModel::decode(const Tensor& encoded, std::size_t mask_count,
                             const Tensor& pe_all, bool return_all) const {
  check_shape(encoded, 3, "decode");
  const std::size_t b = encoded.size(0), v = encoded.size(1), d = config_.embed_dim;
  const std::size_t n = v + mask_count;
  if (pe_all.shape() != Shape{b, n, d}) {
    throw InvalidArgument("decode: positional embedding " + to_string(pe_all.shape()) +
                          " does not cover " + std::to_string(n) + " tokens");
  }
  Tensor masks = gather(reshape(mask_token_, {1, d}), 0,
                        std::vector<std::size_t>(b * mask_count, 0));
  masks = reshape(masks, {b, mask_count, d});
  const Tensor parts[] = {encoded, masks};
  Tensor x = concat(parts, 1);
  for (const auto& blk : decoder_) x = block_forward(blk, x + pe_all);
  if (return_all) return x;
  std::vector<std::size_t> tail(mask_count);
  std::iota(tail.begin(), tail.end(), v);
  return gather(x, 1, tail);
}

Tensor MaskSurfModel::head_output(const Tensor& decoded) const {
  check_shape(decoded, 3, "predict_surfels");
  const std::size_t b = decoded.size(0), r = decoded.size(1);
  const std::size_t channels = config_.predict_normals ? 6 : 3;
  return reshape(head_(decoded), {b, r, config_.patch_size, channels});
}

SurfelPrediction MaskSurfModel::predict_surfels(const Tensor& decoded) const {
  Tensor out = head_output(decoded);
  SurfelPrediction p;
  if (!config_.predict_normals) {
    p.positions = out;
    return p;
  }
  p.positions = gather(out, 3, {0, 1, 2});
  p.normals = gather(out, 3, {3, 4, 5});
  return p;
}

Tensor MaskSurfModel::pooled_feature(const Tensor& tokens) const {
  check_shape(tokens, 3, "classify");
  const Tensor parts[] = {max_reduce(tokens, 1), mean_reduce(tokens, 1)};
  return concat(parts, 1);
}

Tensor MaskSurfModel::classify_pooled(const Tensor& pooled,
                                      std::mt19937_64* dropout_rng) const {
  if (!classifier_) throw InvalidArgument("classify: model has no classifier");
  if (pooled.dim() != 2 || pooled.size(1) != 2 * config_.embed_dim) {
    throw InvalidArgument("classify: pooled feature must be [B, 2D]");
  }
  auto dropout = [&](const Tensor& x) {
    if (!dropout_rng || config_.dropout <= 0.0) return x;
    std::bernoulli_distribution keep(1.0 - config_.dropout);
    const Real s = Real(1.0 / (1.0 - config_.dropout));
    std::vector<Real> m(x.numel());
    for (auto& v : m) v = keep(*dropout_rng) ? s : Real(0);
    return multiply(x, Tensor::constant(x.shape(), std::move(m)));
  };
  const auto& layers = classifier_->layers;
  Tensor x = pooled;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](x);
    if (i + 1 < layers.size()) x = dropout(gelu(x));
  }
  return x;
}

Tensor MaskSurfModel::classify(const Tensor& tokens, std::mt19937_64* dropout_rng) const {
  return classify_pooled(pooled_feature(tokens), dropout_rng);
}

std::vector<NamedTensor> MaskSurfModel::encoder_parameters() const {
  std::vector<NamedTensor> out;
  push(out, "embed.layer1", embed1_);
  push(out, "embed.layer2", embed2_);
  push(out, "embed.out", embed_out_);
  push(out, "pe_encoder.fc1", pe_enc1_);
  push(out, "pe_encoder.fc2", pe_enc2_);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    push_block(out, "encoder.blocks." + std::to_string(i), encoder_[i]);
  }
  return out;
}

std::vector<NamedTensor> MaskSurfModel::decoder_parameters() const {
  std::vector<NamedTensor> out;
  push(out, "pe_decoder.fc1", pe_dec1_);
  push(out, "pe_decoder.fc2", pe_dec2_);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    push_block(out, "decoder.blocks." + std::to_string(i), decoder_[i]);
  }
  out.emplace_back("mask_token", mask_token_);
  push(out, "head.fc", head_);
  return out;
}

std::vector<NamedTensor> MaskSurfModel::named_parameters() const {
  auto out = encoder_parameters();
  auto dec = decoder_parameters();
  out.insert(out.end(), dec.begin(), dec.end());
  if (classifier_) {
    for (std::size_t i = 0; i < classifier_->layers.size(); ++i) {
      push(out, "classifier.fc" + std::to_string(i + 1), classifier_->layers[i]);
    }
  }
  return out;
}

void MaskSurfModel::set_requires_grad(const std::vector<NamedTensor>& params, bool on) {
  for (auto [name, t] : params) t.set_requires_grad(on);
}

void MaskSurfModel::copy_parameters_from(const std::vector<NamedTensor>& other) {
  for (auto [name, dst] : named_parameters()) {
    for (const auto& [oname, src] : other) {
      if (oname != name) continue;
      if (src.shape() != dst.shape()) {
        throw InvalidArgument("parameter '" + name + "' has shape " +
                              to_string(src.shape()) + ", expected " +
                              to_string(dst.shape()));
      }
      auto v = dst.mutable_values();
      std::copy(src.values().begin(), src.values().end(), v.begin());
      break;
    }
  }
}

std::size_t MaskSurfModel::parameter_count(Stage stage) const {
  if (stage == Stage::pretrain) {
    return count_of(encoder_parameters()) + count_of(decoder_parameters());
  }
  std::size_t n = count_of(encoder_parameters());
  if (classifier_) {
    for (const auto& l : classifier_->layers) n += l.weight.numel() + l.bias.numel();
  }
  return n;
}

std::size_t param_count(const ModelConfig& c, Stage stage) {
  const std::size_t d = c.embed_dim;
  const std::size_t embed = linear_count(3, c.embed_hidden1) +
                            linear_count(c.embed_hidden1, c.embed_hidden2) +
                            linear_count(c.embed_hidden2, d);
  const std::size_t pe = linear_count(3, c.pe_hidden) + linear_count(c.pe_hidden, d);
  const std::size_t encoder = c.encoder_depth * block_count(c);
  if (stage == Stage::pretrain) {
    const std::size_t channels = c.predict_normals ? 6 : 3;
    return embed + 2 * pe + encoder + c.decoder_depth * block_count(c) + d +
           linear_count(d, c.patch_size * channels);
  }
  const std::size_t cls = linear_count(2 * d, c.cls_hidden1) +
                          linear_count(c.cls_hidden1, c.cls_hidden2) +
                          linear_count(c.cls_hidden2, c.num_classes);
  return embed + pe + encoder + cls;
}

}  // namespace masksurf
