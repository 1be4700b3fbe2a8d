#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "catseg/synth.hpp"
#include "catseg/taxonomy.hpp"
#include "catseg/volume.hpp"

namespace catseg {

struct PromptEncoderOptions {
  Shape3 prompt_shape{16, 16, 16};
  std::int64_t anatomical_width = 64;  // C_A, even: [mean-pool | max-pool]
  std::int64_t textual_width = 64;     // C_T = number of hash buckets
  std::int64_t query_width = 32;       // C
  bool train_textual = false;
};

/// Frozen 3D pooling encoder standing in for a pretrained volume encoder:
/// three conv+SiLU stages with 2x average pooling between them, then the
/// global mean and global max of the last stage are concatenated.
class AnatomicalEncoderImpl : public torch::nn::Module {
 public:
  AnatomicalEncoderImpl(Shape3 prompt_shape, std::int64_t width);

  /// prompts: K x 1 x H_A x W_A x D_A -> K x C_A
  torch::Tensor forward(const torch::Tensor& prompts);
  torch::Tensor encode(const Volume& prompt);
  void freeze();

  Shape3 prompt_shape() const { return prompt_shape_; }

 private:
  Shape3 prompt_shape_;
  torch::nn::Conv3d c1_{nullptr}, c2_{nullptr}, c3_{nullptr};
};
TORCH_MODULE(AnatomicalEncoder);

/// Lower-cased alphanumeric runs; everything else separates tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Hashed bag-of-tokens: each token adds one to bucket hash(token) mod C_T;
/// the bucket counts are reweighted by a per-bucket vector (ones, frozen
/// unless `trainable`) and L2-normalized.
class TextualEncoderImpl : public torch::nn::Module {
 public:
  TextualEncoderImpl(std::int64_t width, bool trainable);

  /// Raw bucket counts for one text, no gradient. Throws InputError on empty text.
  torch::Tensor bag(std::string_view text) const;
  torch::Tensor forward(const std::vector<std::string>& texts);
  /// Same as forward but takes stacked bag() rows (K x C_T).
  torch::Tensor embed_bags(const torch::Tensor& bags);

  std::int64_t width() const { return width_; }

 private:
  std::int64_t width_;
  torch::Tensor bucket_weights_;
};
TORCH_MODULE(TextualEncoder);

struct PromptQueries {
  torch::Tensor anatomical;  // ... x N x C, undefined when that family is disabled
  torch::Tensor textual;
};

/// Two independent affine maps from embedding widths to the query width.
class PromptProjectorImpl : public torch::nn::Module {
 public:
  PromptProjectorImpl(std::int64_t anatomical_width, std::int64_t textual_width,
                      std::int64_t query_width);

  /// Undefined inputs pass through as undefined outputs.
  PromptQueries forward(const torch::Tensor& anatomical, const torch::Tensor& textual);

  torch::nn::Linear anatomical{nullptr};
  torch::nn::Linear textual{nullptr};
};
TORCH_MODULE(PromptProjector);

/// Long description for positive categories; a uniformly drawn instantiated
/// short template for the others. Draw for category c is keyed by (seed, c).
std::vector<std::string> assemble_textual_prompts(const Taxonomy& taxonomy, const TextCorpus& corpus,
                                                  const std::vector<bool>& positives,
                                                  std::uint64_t seed);

/// Volume -> 1 x 1 x H x W x D float32 tensor.
torch::Tensor volume_to_tensor(const Volume& v);

}  // namespace catseg
