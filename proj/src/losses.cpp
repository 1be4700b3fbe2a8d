#include "catseg/losses.hpp"

#include <cmath>
#include <utility>

#include "catseg/errors.hpp"

namespace catseg {

MaskHeadImpl::MaskHeadImpl(std::int64_t query_width, std::int64_t pixel_width) {
  adapter = register_module("adapter", torch::nn::Linear(query_width, pixel_width));
}

torch::Tensor MaskHeadImpl::forward(const torch::Tensor& decoded, const torch::Tensor& pixels) {
  return mask_logits(adapter->forward(decoded), pixels);
}

torch::Tensor mask_logits(const torch::Tensor& queries, const torch::Tensor& pixels) {
  if (queries.dim() != 3 || pixels.dim() != 5) {
    throw ShapeError("mask logits need B x N x C queries and B x C x H x W x D pixels");
  }
  if (queries.size(0) != pixels.size(0) || queries.size(2) != pixels.size(1)) {
    throw ShapeError("query width " + std::to_string(queries.size(2)) + " does not match pixel width " +
                     std::to_string(pixels.size(1)));
  }
  const auto b = pixels.size(0);
  const auto flat = pixels.reshape({b, pixels.size(1), -1});
  return torch::bmm(queries, flat).reshape({b, queries.size(1), pixels.size(2), pixels.size(3), pixels.size(4)});
}

torch::Tensor predict_masks(const torch::Tensor& queries, const torch::Tensor& pixels) {
  return torch::sigmoid(mask_logits(queries, pixels));
}

torch::Tensor dice_loss(const torch::Tensor& masks, const torch::Tensor& target, double smooth) {
  if (masks.sizes() != target.sizes()) throw ShapeError("dice loss operands differ in shape");
  if (masks.dim() < 3) throw ShapeError("dice loss expects B x N x spatial");
  const auto m = masks.flatten(2);
  const auto g = target.to(masks.scalar_type()).flatten(2);
  const auto inter = (m * g).sum(-1);
  const auto dice = (2.0 * inter + smooth) / (m.sum(-1) + g.sum(-1) + smooth);
  return (1.0 - dice).mean();
}

torch::Tensor cls_loss(const torch::Tensor& logits, const torch::Tensor& present) {
  if (logits.sizes() != present.sizes()) throw ShapeError("presence logits and labels differ in shape");
  return torch::binary_cross_entropy_with_logits(logits, present.to(logits.scalar_type()));
}

torch::Tensor infonce(const torch::Tensor& anchors, const torch::Tensor& positives,
                      const InfoNceOptions& options) {
  if (anchors.sizes() != positives.sizes() || anchors.dim() < 2) {
    throw ShapeError("InfoNCE needs equal-shape N x C anchors and positives");
  }
  if (!(options.temperature > 0.0)) throw DomainError("InfoNCE temperature must be positive");
  for (const auto* t : {&anchors, &positives}) {
    const double dev = (t->detach().norm(2, -1) - 1.0).abs().max().item<double>();
    if (!(dev <= options.norm_tolerance)) {
      throw InputError("InfoNCE rows must be L2-normalized (max deviation " + std::to_string(dev) + ")");
    }
  }
  const auto sim = torch::matmul(anchors, positives.transpose(-1, -2)) / options.temperature;
  const auto log_p = torch::log_softmax(sim, -1).diagonal(0, -2, -1);
  if (options.paper_literal) return -log_p.exp().mean();
  return -log_p.mean();
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j;
  if (dice.defined()) j["dice"] = value(dice);
  if (cls.defined()) j["cls"] = value(cls);
  if (s2p.defined()) j["s2p"] = value(s2p);
  if (p2p.defined()) j["p2p"] = value(p2p);
  j["total"] = value(total);
  return j;
}

LossReport total_loss(torch::Tensor dice, torch::Tensor cls, torch::Tensor s2p, torch::Tensor p2p) {
  LossReport r{std::move(dice), std::move(cls), std::move(s2p), std::move(p2p), {}};
  const std::pair<const char*, const torch::Tensor*> parts[] = {
      {"dice", &r.dice}, {"cls", &r.cls}, {"s2p", &r.s2p}, {"p2p", &r.p2p}};
  for (const auto& [name, t] : parts) {
    if (!t->defined()) continue;
    if (!std::isfinite(t->item<double>())) throw NumericError(std::string("non-finite loss component: ") + name);
    r.total = r.total.defined() ? r.total + *t : *t;
  }
  if (!r.total.defined()) throw ConfigError("every loss component is disabled");
  return r;
}

}  // namespace catseg
