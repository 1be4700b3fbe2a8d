#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "catseg/share_refiner.hpp"
#include "catseg/taxonomy.hpp"

namespace catseg {

/// N x 2N visibility matrix. Column j < N is anatomical prompt j, column
/// N + j is textual prompt j. Every row sees its own two prompts.
class GroupMask {
 public:
  GroupMask() = default;
  explicit GroupMask(int n);  // own prompts only

  int size() const { return n_; }
  bool allowed(int row, int col) const { return allow_[index(row, col)]; }
  void allow(int row, int col) { allow_[index(row, col)] = true; }
  int count(int row) const;

  /// Every column visible to every row (no group masking).
  static GroupMask full(int n);

  /// Copy with the columns of disabled families cleared.
  GroupMask restricted(bool anatomical, bool textual) const;

  /// N x 2N bool tensor.
  torch::Tensor to_tensor() const;
  nlohmann::json to_json(const Taxonomy& taxonomy) const;

  bool operator==(const GroupMask&) const = default;

 private:
  std::size_t index(int row, int col) const;

  int n_ = 0;
  std::vector<bool> allow_;
};

/// Row i sees {A_i, T_i}; a tumor additionally sees its host's prompts; each
/// link (a, b) lets row a see {A_b, T_b}.
GroupMask build_attention_mask(const Taxonomy& taxonomy,
                               std::span<const std::pair<int, int>> extra_links = {});

struct PromptReferOptions {
  std::int64_t query_width = 32;
  std::int64_t heads = 1;
  std::int64_t ffn_width = 64;
  int layers = 1;
  bool pre_norm = true;  // LayerNorm on queries and prompt tokens before attention
};

struct DecodedQueries {
  torch::Tensor decoded;          // O_S, B x N x C
  torch::Tensor presence_logits;  // B x N
  torch::Tensor attention;        // last layer weights, B x N x 2N (head-averaged)
};

class PromptReferLayerImpl : public torch::nn::Module {
 public:
  explicit PromptReferLayerImpl(const PromptReferOptions& options);
  torch::Tensor forward(const torch::Tensor& queries, const torch::Tensor& prompts,
                        const torch::Tensor& allow);

  torch::nn::LayerNorm query_norm{nullptr}, prompt_norm{nullptr};
  Attention cross{nullptr};
  FeedForward ffn{nullptr};

 private:
  bool pre_norm_;
};
TORCH_MODULE(PromptReferLayer);

/// Masked cross-attention from segmentation queries to the 2N prompt queries
/// [Q'_A; Q'_T]; disallowed positions get -inf logits. A missing family is
/// replaced by zeros and its columns are masked out.
class PromptReferImpl : public torch::nn::Module {
 public:
  explicit PromptReferImpl(PromptReferOptions options);

  DecodedQueries forward(const torch::Tensor& segmentation, const torch::Tensor& anatomical,
                         const torch::Tensor& textual, const GroupMask& mask);
  /// Presence logits from decoded queries (used when prompts are absent).
  torch::Tensor presence(const torch::Tensor& decoded);
  std::vector<PromptReferLayer>& layers() { return layers_; }

 private:
  PromptReferOptions options_;
  std::vector<PromptReferLayer> layers_;
  torch::nn::LayerNorm head_norm_{nullptr};
  torch::nn::Linear presence_head_{nullptr};
};
TORCH_MODULE(PromptRefer);

/// Row-wise x / max(||x||, eps). Throws NumericError when a row norm is below eps.
torch::Tensor l2_normalize_rows(const torch::Tensor& x, double eps = 1e-12);

struct ContrastEmbeddings {
  torch::Tensor segmentation;  // normalized projections, B x N x C_k
  torch::Tensor anatomical;
  torch::Tensor textual;
};

/// Three independent affine maps to width C_k followed by row normalization.
class ContrastProjectorImpl : public torch::nn::Module {
 public:
  ContrastProjectorImpl(std::int64_t query_width, std::int64_t contrast_width);
  ContrastEmbeddings forward(const torch::Tensor& decoded, const torch::Tensor& anatomical,
                             const torch::Tensor& textual);

  torch::nn::Linear segmentation{nullptr}, anatomical{nullptr}, textual{nullptr};
};
TORCH_MODULE(ContrastProjector);

}  // namespace catseg
