#include "catseg/backbone.hpp"

#include "catseg/errors.hpp"

namespace catseg {

namespace F = torch::nn::functional;

void BackboneOptions::validate() const {
  if (levels < 1) throw ConfigError("backbone needs at least one level");
  if (static_cast<int>(widths.size()) != levels) {
    throw ConfigError("backbone widths must list one channel count per level");
  }
  for (std::size_t i = 1; i < widths.size(); ++i) {
    if (widths[i] < widths[i - 1]) throw ConfigError("backbone widths must be nondecreasing");
  }
  for (std::int64_t w : widths) {
    if (w <= 0 || w % norm_groups != 0) {
      throw ConfigError("backbone widths must be positive multiples of norm_groups");
    }
  }
  if (stem_width <= 0 || stem_width % norm_groups != 0 || pixel_channels <= 0 ||
      pixel_channels % norm_groups != 0) {
    throw ConfigError("stem and pixel widths must be positive multiples of norm_groups");
  }
}

MultiScaleFeatures MultiScaleFeatures::scaled(double alpha) const {
  MultiScaleFeatures out{stem * alpha, {}};
  for (const auto& l : levels) out.levels.push_back(l * alpha);
  return out;
}

ConvBlockImpl::ConvBlockImpl(std::int64_t in, std::int64_t out, std::int64_t stride,
                             std::int64_t groups, bool linear_only)
    : linear_only_(linear_only) {
  conv_ = register_module(
      "conv", torch::nn::Conv3d(
                  torch::nn::Conv3dOptions(in, out, 3).stride(stride).padding(1).bias(!linear_only)));
  if (!linear_only) {
    norm_ = register_module("norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, out)));
  }
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = conv_->forward(x);
  if (linear_only_) return y;
  return F::silu(norm_->forward(y));
}

VisionEncoderImpl::VisionEncoderImpl(BackboneOptions options) : options_(std::move(options)) {
  options_.validate();
  const auto g = options_.norm_groups;
  const bool lin = options_.linear_only;
  stem_ = register_module("stem", ConvBlock(1, options_.stem_width, 1, g, lin));
  std::int64_t prev = options_.stem_width;
  for (int i = 0; i < options_.levels; ++i) {
    const auto w = options_.widths[static_cast<std::size_t>(i)];
    down_.push_back(register_module("down" + std::to_string(i + 1), ConvBlock(prev, w, 2, g, lin)));
    refine_.push_back(register_module("refine" + std::to_string(i + 1), ConvBlock(w, w, 1, g, lin)));
    prev = w;
  }
}

MultiScaleFeatures VisionEncoderImpl::forward(const torch::Tensor& image) {
  if (image.dim() != 5 || image.size(1) != 1) {
    throw ShapeError("encoder expects a B x 1 x H x W x D image");
  }
  const auto div = options_.required_divisor();
  for (int a = 2; a < 5; ++a) {
    if (image.size(a) % div != 0) {
      throw ShapeError("encoder input extents must be divisible by " + std::to_string(div) +
                       " (2^levels), got " + std::to_string(image.size(a)));
    }
  }
  MultiScaleFeatures out;
  out.stem = stem_->forward(image);
  auto x = out.stem;
  for (std::size_t i = 0; i < down_.size(); ++i) {
    x = refine_[i]->forward(down_[i]->forward(x));
    out.levels.push_back(x);
  }
  return out;
}

PixelDecoderImpl::PixelDecoderImpl(BackboneOptions options) : options_(std::move(options)) {
  options_.validate();
  const auto p = options_.pixel_channels;
  const bool bias = !options_.linear_only;
  for (int i = 0; i < options_.levels; ++i) {
    lateral_.push_back(register_module(
        "lateral" + std::to_string(i + 1),
        torch::nn::Conv3d(
            torch::nn::Conv3dOptions(options_.widths[static_cast<std::size_t>(i)], p, 1).bias(bias))));
  }
  stem_lateral_ = register_module(
      "stem_lateral", torch::nn::Conv3d(torch::nn::Conv3dOptions(options_.stem_width, p, 1).bias(bias)));
  fuse_ = register_module("fuse", ConvBlock(p, p, 1, options_.norm_groups, options_.linear_only));
  head_ = register_module("head", torch::nn::Conv3d(torch::nn::Conv3dOptions(p, p, 1).bias(bias)));
}

torch::Tensor PixelDecoderImpl::forward(const MultiScaleFeatures& features) {
  const auto levels = static_cast<int>(features.levels.size());
  if (levels != options_.levels || !features.stem.defined()) {
    throw ShapeError("decoder expects " + std::to_string(options_.levels) +
                     " feature levels plus a stem, got " + std::to_string(levels));
  }
  const auto& stem = features.stem;
  for (int i = 0; i < levels; ++i) {
    const auto& l = features.levels[static_cast<std::size_t>(i)];
    if (l.dim() != 5 || l.size(0) != stem.size(0) ||
        l.size(1) != options_.widths[static_cast<std::size_t>(i)]) {
      throw ShapeError("feature level " + std::to_string(i + 1) + " has the wrong layout");
    }
    for (int a = 2; a < 5; ++a) {
      if (l.size(a) * (std::int64_t{1} << (i + 1)) != stem.size(a)) {
        throw ShapeError("feature level " + std::to_string(i + 1) +
                         " is not a 2^" + std::to_string(i + 1) + " downsampling of the stem");
      }
    }
  }

  auto up = [](const torch::Tensor& t) {
    return F::interpolate(t, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0, 2.0})
                                 .mode(torch::kTrilinear)
                                 .align_corners(false));
  };
  auto x = lateral_.back()->forward(features.levels.back());
  for (int i = levels - 2; i >= 0; --i) {
    x = up(x) + lateral_[static_cast<std::size_t>(i)]->forward(features.levels[static_cast<std::size_t>(i)]);
  }
  x = up(x) + stem_lateral_->forward(stem);
  return head_->forward(fuse_->forward(x));
}

torch::Tensor flatten_tokens(const torch::Tensor& grid) {
  if (grid.dim() != 5) throw ShapeError("flatten_tokens expects B x C x h x w x d");
  return grid.flatten(2).transpose(1, 2);
}

}  // namespace catseg
