#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace catseg {

struct BackboneOptions {
  int levels = 3;
  std::vector<std::int64_t> widths{16, 32, 64};  // channel width of each level, nondecreasing
  std::int64_t stem_width = 8;                   // full-resolution stem feeding the decoder
  std::int64_t pixel_channels = 32;              // C_o
  std::int64_t norm_groups = 4;
  bool linear_only = false;  // no bias, norm or activation: encoder/decoder become linear maps

  void validate() const;
  std::int64_t required_divisor() const { return std::int64_t{1} << levels; }
};

/// Encoder output. `levels[i]` is level i+1 with spatial extent H / 2^(i+1);
/// `stem` is the full-resolution feature the decoder fuses last. All tensors
/// are channel-first: B x C x h x w x d.
struct MultiScaleFeatures {
  torch::Tensor stem;
  std::vector<torch::Tensor> levels;

  MultiScaleFeatures scaled(double alpha) const;
};

/// conv3 -> [GroupNorm] -> [SiLU]
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(std::int64_t in, std::int64_t out, std::int64_t stride, std::int64_t groups,
                bool linear_only);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv3d conv_{nullptr};
  torch::nn::GroupNorm norm_{nullptr};
  bool linear_only_;
};
TORCH_MODULE(ConvBlock);

class VisionEncoderImpl : public torch::nn::Module {
 public:
  explicit VisionEncoderImpl(BackboneOptions options);

  /// image: B x 1 x H x W x D, each extent divisible by 2^levels.
  MultiScaleFeatures forward(const torch::Tensor& image);
  const BackboneOptions& options() const { return options_; }

 private:
  BackboneOptions options_;
  ConvBlock stem_{nullptr};
  std::vector<ConvBlock> down_;
  std::vector<ConvBlock> refine_;
};
TORCH_MODULE(VisionEncoder);

/// Top-down fusion: each coarser map is trilinearly upsampled and added to a
/// 1x1 projection of the next finer level, ending at the stem's resolution.
class PixelDecoderImpl : public torch::nn::Module {
 public:
  explicit PixelDecoderImpl(BackboneOptions options);

  /// Returns the pixel embedding map, B x C_o x H x W x D.
  torch::Tensor forward(const MultiScaleFeatures& features);

 private:
  BackboneOptions options_;
  std::vector<torch::nn::Conv3d> lateral_;
  torch::nn::Conv3d stem_lateral_{nullptr};
  ConvBlock fuse_{nullptr};
  torch::nn::Conv3d head_{nullptr};
};
TORCH_MODULE(PixelDecoder);

/// B x C x h x w x d -> B x (h*w*d) x C, tokens in row-major (h, w, d) order.
torch::Tensor flatten_tokens(const torch::Tensor& grid);

}  // namespace catseg
