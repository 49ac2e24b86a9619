#include <doctest.h>

#include <numeric>
#include <random>

#include "masksurf/autodiff/gradcheck.hpp"
#include "masksurf/autodiff/ops.hpp"
#include "masksurf/network.hpp"

using namespace masksurf;
using ad::Shape;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.embed_dim = 8;
  c.encoder_depth = 1;
  c.decoder_depth = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.patch_count = 4;
  c.patch_size = 4;
  c.embed_hidden1 = 5;
  c.embed_hidden2 = 7;
  c.pe_hidden = 6;
  c.num_classes = 3;
  c.cls_hidden1 = 10;
  c.cls_hidden2 = 9;
  return c;
}

Tensor random_tensor(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Real> v(ad::numel(s));
  for (auto& x : v) x = u(rng);
  return Tensor::constant(s, v);
}

/// Reorders axis 1 of a [B, n, ...] tensor: out[:, i] = in[:, perm[i]].
Tensor permute_axis1(const Tensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t b = t.size(0), n = t.size(1), inner = t.numel() / (b * n);
  std::vector<Real> out(t.numel());
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < inner; ++j)
        out[(bi * n + i) * inner + j] = t.at((bi * n + perm[i]) * inner + j);
  return Tensor::constant(t.shape(), out);
}

double max_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

std::size_t total_numel(const std::vector<NamedTensor>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

}  // namespace

TEST_CASE("parameter count closed form on a toy configuration") {
  const ModelConfig c = toy_config();
  // embed 20 + 42 + 64, pe 24 + 56, block 32 + 192 + 72 + 144 + 136,
  // head 8 * 24 + 24, classifier 170 + 99 + 30
  CHECK(param_count(c, Stage::pretrain) == 126 + 2 * 80 + 2 * 576 + 8 + 216);
  CHECK(param_count(c, Stage::finetune) == 126 + 80 + 576 + 299);
  ModelConfig points_only = c;
  points_only.predict_normals = false;
  CHECK(param_count(c, Stage::pretrain) - param_count(points_only, Stage::pretrain) == 8 * 12 + 12);
}

TEST_CASE("parameter count agrees with the instantiated model") {
  for (const ModelConfig& c : {toy_config(), ModelConfig::tiny()}) {
    MaskSurfModel m(c, 3);
    m.reset_classifier(HeadKind::nonlinear, c.num_classes, 4);
    const auto all = m.named_parameters();
    std::size_t cls = 0, dec = 0;
    for (const auto& [name, t] : all) {
      if (name.rfind("classifier.", 0) == 0) cls += t.numel();
    }
    dec = total_numel(m.decoder_parameters());
    CHECK(total_numel(all) - cls == param_count(c, Stage::pretrain));
    CHECK(total_numel(all) - dec == param_count(c, Stage::finetune));
    CHECK(m.parameter_count(Stage::pretrain) == param_count(c, Stage::pretrain));
    CHECK(m.parameter_count(Stage::finetune) == param_count(c, Stage::finetune));
    CHECK(total_numel(m.encoder_parameters()) + dec + cls == total_numel(all));
  }
}

TEST_CASE("invalid configurations are rejected") {
  ModelConfig c = toy_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK_THROWS_AS(MaskSurfModel(c, 0), InvalidArgument);
}

TEST_CASE("initialization is seeded") {
  const ModelConfig c = toy_config();
  const auto a = MaskSurfModel(c, 7).named_parameters();
  const auto b = MaskSurfModel(c, 7).named_parameters();
  const auto d = MaskSurfModel(c, 8).named_parameters();
  REQUIRE(a.size() == b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(max_diff(a[i].second, b[i].second) == 0.0);
    differs = differs || max_diff(a[i].second, d[i].second) > 0.0;
  }
  CHECK(differs);
}

TEST_CASE("token embedding ignores point order inside a patch") {
  const ModelConfig c = toy_config();
  const MaskSurfModel m(c, 1);
  const Tensor patches = random_tensor({2, 3, c.patch_size, 3}, 5);
  // reverse the points of every patch
  std::vector<Real> v(patches.values().begin(), patches.values().end());
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t j = 0; j < c.patch_size / 2; ++j)
      for (std::size_t a = 0; a < 3; ++a)
        std::swap(v[(p * c.patch_size + j) * 3 + a],
                  v[(p * c.patch_size + c.patch_size - 1 - j) * 3 + a]);
  const Tensor reversed = Tensor::constant(patches.shape(), v);
  const Tensor e1 = m.embed_tokens(patches), e2 = m.embed_tokens(reversed);
  CHECK(e1.shape() == Shape{2, 3, c.embed_dim});
  CHECK(max_diff(e1, e2) == 0.0);
}

TEST_CASE("encoder is permutation equivariant and the pooled feature invariant") {
  const ModelConfig c = toy_config();
  MaskSurfModel m(c, 2);
  m.reset_classifier(HeadKind::nonlinear, 3, 9);
  const Tensor patches = random_tensor({1, 4, c.patch_size, 3}, 6);
  const Tensor centers = random_tensor({1, 4, 3}, 7);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  const Tensor enc = m.encode(m.embed_tokens(patches), m.positional_embed(centers, PeKind::encoder));
  const Tensor enc_p = m.encode(m.embed_tokens(permute_axis1(patches, perm)),
                                m.positional_embed(permute_axis1(centers, perm), PeKind::encoder));
  CHECK(max_diff(permute_axis1(enc, perm), enc_p) <= 1e-10);
  CHECK(max_diff(m.classify(enc), m.classify(enc_p)) <= 1e-10);
}

TEST_CASE("batch items are independent") {
  const ModelConfig c = toy_config();
  const MaskSurfModel m(c, 2);
  const Tensor patches = random_tensor({2, 3, c.patch_size, 3}, 11);
  const Tensor centers = random_tensor({2, 4, 3}, 12);
  const auto slice = [](const Tensor& t, std::size_t i) {
    const std::size_t per = t.numel() / t.size(0);
    Shape s = t.shape();
    s[0] = 1;
    return Tensor::constant(s, std::vector<Real>(t.values().begin() + i * per,
                                                 t.values().begin() + (i + 1) * per));
  };
  // first three of the four centers of each item are visible
  std::vector<Real> vc;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 9; ++j) vc.push_back(centers.at(b * 12 + j));
  const Tensor vis_centers = Tensor::constant({2, 3, 3}, vc);
  const auto forward = [&](const Tensor& p, const Tensor& vc, const Tensor& all_c) {
    const Tensor enc = m.encode(m.embed_tokens(p), m.positional_embed(vc, PeKind::encoder));
    const Tensor dec = m.decode(enc, 1, m.positional_embed(all_c, PeKind::decoder));
    return m.predict_surfels(dec);
  };
  const SurfelPrediction both = forward(patches, vis_centers, centers);
  CHECK(both.positions.shape() == Shape{2, 1, c.patch_size, 3});
  CHECK(both.normals.shape() == Shape{2, 1, c.patch_size, 3});
  for (std::size_t i = 0; i < 2; ++i) {
    const SurfelPrediction one =
        forward(slice(patches, i), slice(vis_centers, i), slice(centers, i));
    CHECK(max_diff(slice(both.positions, i), one.positions) <= 1e-12);
    CHECK(max_diff(slice(both.normals, i), one.normals) <= 1e-12);
  }
}

TEST_CASE("decoder uses the mask token and head layout") {
  const ModelConfig c = toy_config();
  MaskSurfModel m(c, 4);
  const Tensor enc = random_tensor({1, 2, c.embed_dim}, 1);
  const Tensor pe = random_tensor({1, 4, c.embed_dim}, 2);
  const Tensor d1 = m.decode(enc, 2, pe);
  CHECK(d1.shape() == Shape{1, 2, c.embed_dim});
  CHECK(m.decode(enc, 2, pe, true).shape() == Shape{1, 4, c.embed_dim});
  m.mask_token().mutable_values()[0] += 1.0;
  CHECK(max_diff(d1, m.decode(enc, 2, pe)) > 0.0);

  const Tensor raw = m.head_output(d1);
  const SurfelPrediction s = m.predict_surfels(d1);
  CHECK(raw.shape() == Shape{1, 2, c.patch_size, 6});
  for (std::size_t r = 0; r < 2 * c.patch_size; ++r)
    for (std::size_t a = 0; a < 3; ++a) {
      CHECK(s.positions.at(r * 3 + a) == raw.at(r * 6 + a));
      CHECK(s.normals.at(r * 3 + a) == raw.at(r * 6 + 3 + a));
    }

  ModelConfig points_only = c;
  points_only.predict_normals = false;
  const MaskSurfModel p(points_only, 4);
  const SurfelPrediction ps = p.predict_surfels(d1);
  CHECK(ps.positions.shape() == Shape{1, 2, c.patch_size, 3});
  CHECK_FALSE(ps.normals.defined());
}

TEST_CASE("dropout is active only with an rng") {
  const ModelConfig c = toy_config();
  MaskSurfModel m(c, 5);
  m.reset_classifier(HeadKind::nonlinear, 3, 1);
  const Tensor tokens = random_tensor({2, 4, c.embed_dim}, 3);
  CHECK(max_diff(m.classify(tokens), m.classify(tokens)) == 0.0);
  std::mt19937_64 rng(1);
  CHECK(max_diff(m.classify(tokens), m.classify(tokens, &rng)) > 0.0);
  m.reset_classifier(HeadKind::linear, 3, 1);
  CHECK(m.classifier().layers.size() == 1);
  CHECK(m.classify(tokens).shape() == Shape{2, 3});
}

TEST_CASE("copy_parameters_from and reset_decoder") {
  const ModelConfig c = toy_config();
  MaskSurfModel a(c, 1), b(c, 2);
  b.copy_parameters_from(a.named_parameters());
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(max_diff(pa[i].second, pb[i].second) == 0.0);
  b.reset_decoder(99);
  const auto enc_a = a.encoder_parameters(), enc_b = b.encoder_parameters();
  for (std::size_t i = 0; i < enc_a.size(); ++i)
    CHECK(max_diff(enc_a[i].second, enc_b[i].second) == 0.0);
  CHECK(max_diff(a.mask_token(), b.mask_token()) > 0.0);
}

namespace {

void zero_all(const std::vector<NamedTensor>& params) {
  for (const auto& [name, t] : params) {
    Tensor handle = t;
    for (auto& v : handle.mutable_values()) v = 0.0;
  }
}

ModelConfig shallow_config() {
  ModelConfig c = toy_config();
  c.embed_dim = 4;
  c.heads = 1;
  c.encoder_depth = 0;
  c.decoder_depth = 0;
  c.patch_size = 2;
  c.embed_hidden1 = 2;
  c.embed_hidden2 = 3;
  c.pe_hidden = 2;
  c.num_classes = 2;
  c.cls_hidden1 = 3;
  c.cls_hidden2 = 2;
  return c;
}

}  // namespace

TEST_CASE("parameter count closed form without blocks") {
  const ModelConfig c = shallow_config();
  // embed 8 + 9 + 16, pe 8 + 12, mask token 4, head 4 * 12 + 12,
  // classifier 27 + 8 + 6
  CHECK(param_count(c, Stage::pretrain) == 33 + 40 + 4 + 60);
  CHECK(param_count(c, Stage::finetune) == 33 + 20 + 41);
}

TEST_CASE("token embedding contracts") {
  const ModelConfig c = toy_config();
  const MaskSurfModel m(c, 3);
  const Tensor one = random_tensor({1, 1, c.patch_size, 3}, 21);
  std::vector<Real> v(one.values().begin(), one.values().end());
  const std::size_t n = v.size();
  v.insert(v.end(), v.begin(), v.begin() + n);
  v.insert(v.end(), n, 0.0);
  const Tensor e = m.embed_tokens(Tensor::constant({1, 3, c.patch_size, 3}, v));
  for (std::size_t j = 0; j < c.embed_dim; ++j) CHECK(e.at(j) == e.at(c.embed_dim + j));
  double diff = 0.0;
  for (std::size_t j = 0; j < c.embed_dim; ++j)
    diff = std::max(diff, std::abs(e.at(j) - e.at(2 * c.embed_dim + j)));
  CHECK(diff > 0.0);
}

TEST_CASE("positional embedding contracts") {
  const ModelConfig c = toy_config();
  MaskSurfModel m(c, 3);
  const Tensor centers = Tensor::constant({1, 2, 3}, {0.1, -0.2, 0.3, 0.1, -0.2, 0.3});
  const Tensor enc = m.positional_embed(centers, PeKind::encoder);
  const Tensor dec = m.positional_embed(centers, PeKind::decoder);
  for (std::size_t j = 0; j < c.embed_dim; ++j) CHECK(enc.at(j) == enc.at(c.embed_dim + j));
  CHECK(max_diff(enc, dec) > 0.0);

  std::vector<NamedTensor> pe;
  for (const auto& p : m.named_parameters())
    if (p.first.rfind("pe_encoder.", 0) == 0) pe.push_back(p);
  REQUIRE(pe.size() == 4);
  zero_all(pe);
  const Tensor zero = m.positional_embed(Tensor::constant({1, 1, 3}, {0, 0, 0}), PeKind::encoder);
  for (Real x : zero.values()) CHECK(x == 0.0);
}

TEST_CASE("encoder and decoder edge cases") {
  SUBCASE("single visible token") {
    const ModelConfig c = toy_config();
    const MaskSurfModel m(c, 1);
    const Tensor out = m.encode(random_tensor({1, 1, c.embed_dim}, 1),
                                random_tensor({1, 1, c.embed_dim}, 2));
    CHECK(out.shape() == Shape{1, 1, c.embed_dim});
    for (Real x : out.values()) CHECK(std::isfinite(x));
  }
  SUBCASE("zero depth is the identity") {
    const ModelConfig c = shallow_config();
    MaskSurfModel m(c, 1);
    const Tensor x = random_tensor({2, 3, c.embed_dim}, 3);
    CHECK(max_diff(m.encode(x, random_tensor({2, 3, c.embed_dim}, 4)), x) == 0.0);
    const Tensor d = m.decode(x, 2, random_tensor({2, 5, c.embed_dim}, 5));
    CHECK(d.shape() == Shape{2, 2, c.embed_dim});
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t j = 0; j < c.embed_dim; ++j)
        CHECK(d.at(r * c.embed_dim + j) == m.mask_token().at(j));
  }
  SUBCASE("decoder output follows the mask token, not the encoding alone") {
    const ModelConfig c = toy_config();
    MaskSurfModel m(c, 1);
    const Tensor zero = Tensor::full({1, 2, c.embed_dim}, 0.0);
    const Tensor pe = random_tensor({1, 3, c.embed_dim}, 6);
    const Tensor a = m.decode(zero, 1, pe);
    CHECK(a.shape() == Shape{1, 1, c.embed_dim});
    for (auto& v : m.mask_token().mutable_values()) v = -v + 0.5;
    CHECK(max_diff(a, m.decode(zero, 1, pe)) > 0.0);
  }
}

TEST_CASE("surfel head contracts") {
  const ModelConfig c = toy_config();
  MaskSurfModel m(c, 1);
  zero_all({{"w", m.head().weight}, {"b", m.head().bias}});
  const SurfelPrediction z = m.predict_surfels(random_tensor({1, 2, c.embed_dim}, 1));
  for (Real x : z.positions.values()) CHECK(x == 0.0);
  for (Real x : z.normals.values()) CHECK(x == 0.0);

  ModelConfig big = ModelConfig::full();
  big.encoder_depth = 0;
  big.decoder_depth = 0;
  const MaskSurfModel p(big, 1);
  const SurfelPrediction s = p.predict_surfels(random_tensor({1, 2, big.embed_dim}, 2));
  CHECK(s.positions.shape() == Shape{1, 2, 32, 3});
  CHECK(s.normals.shape() == Shape{1, 2, 32, 3});
}

TEST_CASE("classifier contracts") {
  const ModelConfig c = toy_config();
  MaskSurfModel m(c, 1);
  const Tensor token = random_tensor({1, 1, c.embed_dim}, 3);
  const Tensor pooled = m.pooled_feature(token);
  for (std::size_t j = 0; j < c.embed_dim; ++j) {
    CHECK(pooled.at(j) == token.at(j));
    CHECK(pooled.at(c.embed_dim + j) == token.at(j));
  }

  m.reset_classifier(HeadKind::linear, 3, 2);
  const Linear& lin = m.classifier().layers.front();
  zero_all({{"w", lin.weight}});
  Tensor bias = lin.bias;
  for (std::size_t i = 0; i < 3; ++i) bias.mutable_values()[i] = double(i) - 0.5;
  const Tensor logits = m.classify(random_tensor({2, 4, c.embed_dim}, 4));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i) CHECK(logits.at(b * 3 + i) == double(i) - 0.5);

  m.reset_classifier(HeadKind::nonlinear, 3, 5);
  std::vector<NamedTensor> leaves;
  for (const auto& p : m.named_parameters())
    if (p.first.rfind("classifier.", 0) == 0) leaves.push_back(p);
  m.set_requires_grad(leaves, true);
  const Tensor tokens = random_tensor({2, 4, c.embed_dim}, 6);
  const Tensor w = random_tensor({2, 3}, 7);
  ad::GradCheckOptions o;
  o.eps = 1e-5;
  o.tol = 1e-4;
  const auto r = ad::finite_difference_check(
      [&] { return ad::sum_all(m.classify(tokens) * w); }, leaves, o);
  INFO(r.message);
  CHECK(r.pass);
}
