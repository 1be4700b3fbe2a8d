#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "catseg/backbone.hpp"

namespace catseg {

// ---------------------------------------------------------------------------
// Hard assignment primitives. Every function accepts tensors whose trailing
// two dims are (N, T) for assignments and (T, C) for features; leading dims
// are batch dims.

/// S[..., n, v] = dot(queries[..., n, :], features[..., v, :]).
torch::Tensor similarity_logits(const torch::Tensor& queries, const torch::Tensor& features);

struct HardAssignment {
  torch::Tensor gumbel;  // softmax over N of (S + G) / tau, column-stochastic
  torch::Tensor onehot;  // one-hot over N per column at argmax of `gumbel`, lowest index on ties
};

/// Gumbel(0,1) noise; the entry at flat position p is a pure function of (seed, layer, p).
torch::Tensor gumbel_noise(at::IntArrayRef sizes, std::uint64_t seed, std::uint64_t layer,
                           torch::ScalarType dtype = torch::kFloat32);

/// `tau` is a positive scalar tensor (may require grad). Throws DomainError if tau <= 0.
HardAssignment gumbel_hard_assign(const torch::Tensor& logits, const torch::Tensor& tau,
                                  std::uint64_t seed, std::uint64_t layer, bool noise);
HardAssignment gumbel_hard_assign(const torch::Tensor& logits, double tau, std::uint64_t seed,
                                  bool noise);

/// Value: `onehot`, exactly. Gradient: passed unchanged to `gumbel`.
/// Equivalent to onehot + gumbel - sg(gumbel) without the rounding of the sum.
torch::Tensor straight_through(const torch::Tensor& onehot, const torch::Tensor& gumbel);

/// gathered[n] = sum_v S'[n, v] * features[v] / max(1, |{v assigned to n}|).
/// Queries that own no voxel get a zero row.
torch::Tensor hard_gather(const torch::Tensor& assignment, const torch::Tensor& features);

// ---------------------------------------------------------------------------

enum class HardMode { kOff, kAnatomical, kAll };

/// Segmentation, textual and anatomical queries, each B x N x C. A family
/// that is switched off is left undefined.
struct QuerySet {
  torch::Tensor segmentation;
  torch::Tensor textual;
  torch::Tensor anatomical;
};

/// Per-layer assignment record used for verification. In kReplay mode every
/// hard layer uses S' = onehot_rec + (S_gumbel - S_gumbel_rec): equal to the
/// recorded one-hot at the recorded point, with the straight-through
/// derivative everywhere. Finite differences of the replayed function are an
/// independent check of the straight-through gradient.
struct AssignmentTrace {
  enum class Mode { kRecord, kReplay };
  Mode mode = Mode::kRecord;
  std::vector<HardAssignment> records;  // in evaluation order (layer, family)
  std::size_t cursor = 0;
};

struct RefineContext {
  std::uint64_t seed = 0;
  bool noise = true;
  AssignmentTrace* trace = nullptr;
};

struct RefinerOptions {
  std::int64_t query_width = 32;
  std::vector<std::int64_t> level_widths{16, 32, 64};
  std::int64_t heads = 1;
  std::int64_t ffn_width = 64;
  double tau_init = 1.0;
  HardMode hard_mode = HardMode::kAnatomical;
};

/// Scaled dot-product attention with separate query/key/value/output maps.
/// `allow` (broadcastable to B x N x T, true = visible) masks logits to -inf.
class AttentionImpl : public torch::nn::Module {
 public:
  AttentionImpl(std::int64_t width, std::int64_t heads);
  torch::Tensor forward(const torch::Tensor& queries, const torch::Tensor& tokens,
                        const torch::Tensor& allow = {});
  /// Attention weights of the last forward, B x heads x N x T.
  const torch::Tensor& last_weights() const { return last_weights_; }

  torch::nn::Linear q{nullptr}, k{nullptr}, v{nullptr}, out{nullptr};

 private:
  std::int64_t heads_;
  torch::Tensor last_weights_;
};
TORCH_MODULE(Attention);

/// LayerNorm -> Linear -> GELU -> Linear, returns the residual delta.
class FeedForwardImpl : public torch::nn::Module {
 public:
  FeedForwardImpl(std::int64_t width, std::int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(FeedForward);

class RefinerLayerImpl : public torch::nn::Module {
 public:
  RefinerLayerImpl(std::int64_t level_width, const RefinerOptions& options);

  QuerySet forward(const QuerySet& queries, const torch::Tensor& level, const torch::Tensor& tau,
                   const RefineContext& ctx, std::uint64_t layer_index);
  void zero_output_projections();

 private:
  torch::Tensor soft_update(const torch::Tensor& q, const torch::Tensor& features);
  torch::Tensor hard_update(const torch::Tensor& q, const torch::Tensor& features,
                            const torch::Tensor& tau, const RefineContext& ctx, std::uint64_t key);
  torch::Tensor regulate(const torch::Tensor& q);

  HardMode hard_mode_;
  torch::nn::Linear adapter_{nullptr};
  torch::nn::LayerNorm feature_norm_{nullptr};
  torch::nn::LayerNorm cross_norm_{nullptr};
  Attention cross_{nullptr};
  torch::nn::LayerNorm hard_norm_{nullptr};
  torch::nn::Linear hard_out_{nullptr};
  torch::nn::LayerNorm self_norm_{nullptr};
  Attention self_{nullptr};
  FeedForward ffn_{nullptr};
};
TORCH_MODULE(RefinerLayer);

/// One layer per feature level, visited coarse to fine. Segmentation and
/// textual queries take soft cross-attention; anatomical queries take the
/// Gumbel hard assignment (per HardMode). Each layer then applies
/// self-attention within each family and a feed-forward block, all residual.
class ShareRefinerImpl : public torch::nn::Module {
 public:
  explicit ShareRefinerImpl(RefinerOptions options);

  QuerySet forward(const QuerySet& queries, const MultiScaleFeatures& features,
                   const RefineContext& ctx);
  void zero_output_projections();
  /// Learnable temperature clamped to [0.01, 10].
  torch::Tensor tau() const;
  const RefinerOptions& options() const { return options_; }

 private:
  RefinerOptions options_;
  torch::Tensor tau_;
  std::vector<RefinerLayer> layers_;
};
TORCH_MODULE(ShareRefiner);

}  // namespace catseg
