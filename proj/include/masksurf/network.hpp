#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "masksurf/autodiff/tensor.hpp"

namespace masksurf {

using ad::Tensor;

struct ModelConfig {
  std::size_t embed_dim = 96;
  std::size_t encoder_depth = 6;
  std::size_t decoder_depth = 2;
  std::size_t heads = 6;
  std::size_t mlp_ratio = 4;
  std::size_t patch_count = 32;
  std::size_t patch_size = 16;
  // Mini-PointNet widths (pointwise 3 -> h1 -> h2, max-pool, h2 -> D).
  std::size_t embed_hidden1 = 128;
  std::size_t embed_hidden2 = 256;
  std::size_t pe_hidden = 128;
  // Surfel head predicts K*6 values; point-only head K*3.
  bool predict_normals = true;
  std::size_t num_classes = 0;  // 0 = taken from the dataset
  std::size_t cls_hidden1 = 512;
  std::size_t cls_hidden2 = 256;
  double dropout = 0.1;

  /// Throws InvalidArgument when, e.g., D is not divisible by heads.
  void validate() const;
  /// D=384, 12+4 blocks, 6 heads, N=64, K=32, 40 classes.
  static ModelConfig full();
  /// D=16, 2+1 blocks, 2 heads, N=4, K=8 with narrow embeddings.
  static ModelConfig tiny();
};

enum class PeKind { encoder, decoder };
enum class HeadKind { linear, nonlinear };
enum class Stage { pretrain, finetune };

HeadKind parse_head_kind(const std::string& name);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  Tensor operator()(const Tensor& x) const;
};

struct TransformerBlock {
  LayerNormParams norm1;
  Tensor wq, wk, wv;  // [D, D], no bias
  Linear proj;
  LayerNormParams norm2;
  Linear fc1;
  Linear fc2;
};

struct Classifier {
  HeadKind kind = HeadKind::linear;
  std::vector<Linear> layers;
};

struct SurfelPrediction {
  Tensor positions;  // [B, R, K, 3]
  Tensor normals;    // [B, R, K, 3]; undefined for a point-only head
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Token embedding, two positional embeddings, encoder, decoder, mask token,
/// surfel head and an optional classifier. All activations carry a leading
/// batch axis B.
class MaskSurfModel {
 public:
  MaskSurfModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// [B, V, K, 3] center-normalized patches -> [B, V, D].
  Tensor embed_tokens(const Tensor& patches) const;
  /// [B, n, 3] centers -> [B, n, D].
  Tensor positional_embed(const Tensor& centers, PeKind which) const;
  /// Encoder blocks over visible tokens; `pe` is added before every block.
  Tensor encode(const Tensor& tokens, const Tensor& pe) const;
  /// Appends `mask_count` copies of the mask token to `encoded`, runs the
  /// decoder with `pe_all` ([B, V + mask_count, D], visible first) added per
  /// block, and returns the trailing mask rows [B, mask_count, D] (or every
  /// row when `return_all`).
  Tensor decode(const Tensor& encoded, std::size_t mask_count, const Tensor& pe_all,
                bool return_all = false) const;
  /// [B, R, D] -> positions and normals, each [B, R, K, 3].
  SurfelPrediction predict_surfels(const Tensor& decoded) const;
  /// Raw head output reshaped to [B, R, K, 6] (or 3), before the split.
  Tensor head_output(const Tensor& decoded) const;

  /// concat(max, mean) over tokens -> classifier logits [B, classes].
  /// `dropout_rng` enables dropout (training); nullptr evaluates.
  Tensor classify(const Tensor& tokens, std::mt19937_64* dropout_rng = nullptr) const;
  /// Pooled 2D feature used by the classifier.
  Tensor pooled_feature(const Tensor& tokens) const;
  Tensor classify_pooled(const Tensor& pooled, std::mt19937_64* dropout_rng = nullptr) const;

  /// Replaces the classifier with a freshly initialized one.
  void reset_classifier(HeadKind kind, std::size_t classes, std::uint64_t seed);
  bool has_classifier() const { return classifier_.has_value(); }
  const Classifier& classifier() const { return *classifier_; }

  /// Fresh decoder-side parameters (decoder PE, blocks, mask token, head).
  void reset_decoder(std::uint64_t seed);

  /// Every learnable array with a stable dotted name, in a fixed order.
  /// Prefixes: embed., pe_encoder., encoder., pe_decoder., decoder.,
  /// mask_token, head., classifier.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<NamedTensor> encoder_parameters() const;
  std::vector<NamedTensor> decoder_parameters() const;

  void set_requires_grad(const std::vector<NamedTensor>& params, bool on);
  /// Copies values of every parameter present (by name) in `other`.
  void copy_parameters_from(const std::vector<NamedTensor>& other);

  std::size_t parameter_count(Stage stage) const;

  // Direct access for tests.
  Tensor& mask_token() { return mask_token_; }
  Linear& head() { return head_; }

 private:
  Tensor block_forward(const TransformerBlock& blk, const Tensor& x) const;
  Tensor attention(const TransformerBlock& blk, const Tensor& h) const;

  ModelConfig config_;
  Linear embed1_, embed2_, embed_out_;
  Linear pe_enc1_, pe_enc2_;
  Linear pe_dec1_, pe_dec2_;
  std::vector<TransformerBlock> encoder_;
  std::vector<TransformerBlock> decoder_;
  Tensor mask_token_;
  Linear head_;
  std::optional<Classifier> classifier_;
};

/// Closed-form learnable scalar count for a configuration.
/// pretrain = embedding + both PEs + encoder + decoder + mask token + head;
/// finetune = embedding + encoder PE + encoder + nonlinear classifier.
std::size_t param_count(const ModelConfig& config, Stage stage);

}  // namespace masksurf
