#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace catseg {

/// Maps decoded query features into the pixel-embedding width before the
/// per-voxel dot product.
class MaskHeadImpl : public torch::nn::Module {
 public:
  MaskHeadImpl(std::int64_t query_width, std::int64_t pixel_width);
  /// decoded: B x N x C, pixels: B x C_o x H x W x D -> logits B x N x H x W x D.
  torch::Tensor forward(const torch::Tensor& decoded, const torch::Tensor& pixels);

  torch::nn::Linear adapter{nullptr};
};
TORCH_MODULE(MaskHead);

/// logits[b, n, x] = dot(queries[b, n], pixels[b, :, x]). Widths must match.
torch::Tensor mask_logits(const torch::Tensor& queries, const torch::Tensor& pixels);
/// sigmoid(mask_logits).
torch::Tensor predict_masks(const torch::Tensor& queries, const torch::Tensor& pixels);

/// Mean over (batch, category) of 1 - (2 sum(M gt) + smooth) / (sum M + sum gt + smooth).
/// Leading two dims are (B, N); the rest are spatial.
torch::Tensor dice_loss(const torch::Tensor& masks, const torch::Tensor& target, double smooth = 1e-5);

/// Mean binary cross-entropy of sigmoid(logits) against presence labels in {0, 1}.
torch::Tensor cls_loss(const torch::Tensor& logits, const torch::Tensor& present);

struct InfoNceOptions {
  double temperature = 0.07;
  /// Drop the logarithm: -(1/N) sum_i softmax_i(i). For comparison only.
  bool paper_literal = false;
  double norm_tolerance = 1e-4;
};

/// -(1/N) sum_i log softmax_j(a_i . p_j / temperature)[i] on N x C rows
/// (or B x N x C, averaged over B). Rows must be unit-norm.
torch::Tensor infonce(const torch::Tensor& anchors, const torch::Tensor& positives,
                      const InfoNceOptions& options = {});

enum class PromptTarget { kBoth, kAnatomical, kTextual };

struct LossReport {
  torch::Tensor dice, cls, s2p, p2p;  // undefined when disabled
  torch::Tensor total;

  double value(const torch::Tensor& t) const { return t.defined() ? t.item<double>() : 0.0; }
  /// {"dice":..,"cls":..,"s2p":..,"p2p":..,"total":..}; disabled terms are omitted.
  nlohmann::json to_json() const;
};

/// Unweighted sum of the defined components. Throws NumericError naming the
/// first non-finite component.
LossReport total_loss(torch::Tensor dice, torch::Tensor cls, torch::Tensor s2p, torch::Tensor p2p);

}  // namespace catseg
