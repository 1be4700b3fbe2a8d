#include "catseg/share_refiner.hpp"

#include <cmath>
#include <limits>

#include "catseg/errors.hpp"
#include "catseg/rng.hpp"

namespace catseg {

namespace F = torch::nn::functional;

torch::Tensor similarity_logits(const torch::Tensor& queries, const torch::Tensor& features) {
  if (queries.size(-1) != features.size(-1)) {
    throw ShapeError("similarity logits need equal channel widths, got " +
                     std::to_string(queries.size(-1)) + " and " + std::to_string(features.size(-1)));
  }
  return torch::matmul(queries, features.transpose(-1, -2));
}

torch::Tensor gumbel_noise(at::IntArrayRef sizes, std::uint64_t seed, std::uint64_t layer,
                           torch::ScalarType dtype) {
  auto noise = torch::empty(sizes, torch::kFloat64);
  double* p = noise.data_ptr<double>();
  const std::int64_t n = noise.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double u = rng::uniform_open(rng::key({seed, layer, static_cast<std::uint64_t>(i)}));
    p[i] = -std::log(-std::log(u));
  }
  return noise.to(dtype);
}

HardAssignment gumbel_hard_assign(const torch::Tensor& logits, const torch::Tensor& tau,
                                  std::uint64_t seed, std::uint64_t layer, bool noise) {
  if (logits.dim() < 2) throw ShapeError("assignment logits must be at least N x T");
  if (!(tau.item<double>() > 0.0)) throw DomainError("Gumbel-Softmax temperature must be positive");
  auto perturbed = logits;
  if (noise) perturbed = logits + gumbel_noise(logits.sizes(), seed, layer, logits.scalar_type());
  HardAssignment a;
  a.gumbel = torch::softmax(perturbed / tau, -2);
  const auto winner = a.gumbel.detach().argmax(-2, true);
  a.onehot = torch::zeros_like(a.gumbel, torch::TensorOptions().requires_grad(false))
                 .scatter_(-2, winner, 1.0);
  return a;
}

HardAssignment gumbel_hard_assign(const torch::Tensor& logits, double tau, std::uint64_t seed,
                                  bool noise) {
  if (!(tau > 0.0)) throw DomainError("Gumbel-Softmax temperature must be positive");
  return gumbel_hard_assign(logits, torch::scalar_tensor(tau, logits.options()), seed, 0, noise);
}

namespace {

struct StraightThroughFn : public torch::autograd::Function<StraightThroughFn> {
  static torch::Tensor forward(torch::autograd::AutogradContext* /*ctx*/, const torch::Tensor& onehot,
                               const torch::Tensor& gumbel) {
    (void)gumbel;
    return onehot.clone();
  }
  static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* /*ctx*/,
                                               torch::autograd::tensor_list grad) {
    return {torch::Tensor(), grad[0]};
  }
};

torch::Tensor gather_with_counts(const torch::Tensor& assignment, const torch::Tensor& onehot,
                                 const torch::Tensor& features) {
  if (assignment.size(-1) != features.size(-2)) {
    throw ShapeError("hard gather: assignment has " + std::to_string(assignment.size(-1)) +
                     " columns but there are " + std::to_string(features.size(-2)) + " features");
  }
  const auto counts = onehot.detach().sum(-1, true).clamp_min(1.0);
  return torch::matmul(assignment, features) / counts;
}

}  // namespace

torch::Tensor straight_through(const torch::Tensor& onehot, const torch::Tensor& gumbel) {
  if (onehot.sizes() != gumbel.sizes()) throw ShapeError("straight-through operands differ in shape");
  return StraightThroughFn::apply(onehot.detach(), gumbel);
}

torch::Tensor hard_gather(const torch::Tensor& assignment, const torch::Tensor& features) {
  return gather_with_counts(assignment, assignment, features);
}

AttentionImpl::AttentionImpl(std::int64_t width, std::int64_t heads) : heads_(heads) {
  if (heads <= 0 || width % heads != 0) throw ConfigError("attention width must divide into heads");
  q = register_module("q", torch::nn::Linear(width, width));
  k = register_module("k", torch::nn::Linear(width, width));
  v = register_module("v", torch::nn::Linear(width, width));
  out = register_module("out", torch::nn::Linear(width, width));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& queries, const torch::Tensor& tokens,
                                     const torch::Tensor& allow) {
  const auto b = queries.size(0);
  const auto n = queries.size(1);
  const auto t = tokens.size(1);
  const auto c = queries.size(2);
  const auto dh = c / heads_;
  auto split = [&](const torch::Tensor& x, std::int64_t len) {
    return x.view({b, len, heads_, dh}).transpose(1, 2);
  };
  const auto qh = split(q->forward(queries), n);
  const auto kh = split(k->forward(tokens), t);
  const auto vh = split(v->forward(tokens), t);
  auto logits = torch::matmul(qh, kh.transpose(-1, -2)) / std::sqrt(static_cast<double>(dh));
  if (allow.defined()) {
    auto visible = allow.dim() == 2 ? allow.unsqueeze(0) : allow;
    logits = logits.masked_fill(visible.logical_not().unsqueeze(1),
                                -std::numeric_limits<double>::infinity());
  }
  last_weights_ = torch::softmax(logits, -1);
  const auto mixed = torch::matmul(last_weights_, vh).transpose(1, 2).reshape({b, n, c});
  return out->forward(mixed);
}

FeedForwardImpl::FeedForwardImpl(std::int64_t width, std::int64_t hidden) {
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  fc1 = register_module("fc1", torch::nn::Linear(width, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, width));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) {
  return fc2->forward(F::gelu(fc1->forward(norm->forward(x))));
}

RefinerLayerImpl::RefinerLayerImpl(std::int64_t level_width, const RefinerOptions& options)
    : hard_mode_(options.hard_mode) {
  const auto c = options.query_width;
  auto ln = [&] { return torch::nn::LayerNorm(torch::nn::LayerNormOptions({c})); };
  adapter_ = register_module("adapter", torch::nn::Linear(level_width, c));
  feature_norm_ = register_module("feature_norm", ln());
  cross_norm_ = register_module("cross_norm", ln());
  cross_ = register_module("cross", Attention(c, options.heads));
  hard_norm_ = register_module("hard_norm", ln());
  hard_out_ = register_module("hard_out", torch::nn::Linear(torch::nn::LinearOptions(c, c).bias(false)));
  self_norm_ = register_module("self_norm", ln());
  self_ = register_module("self", Attention(c, options.heads));
  ffn_ = register_module("ffn", FeedForward(c, options.ffn_width));
}

torch::Tensor RefinerLayerImpl::soft_update(const torch::Tensor& q, const torch::Tensor& features) {
  return q + cross_->forward(cross_norm_->forward(q), features);
}

torch::Tensor RefinerLayerImpl::hard_update(const torch::Tensor& q, const torch::Tensor& features,
                                            const torch::Tensor& tau, const RefineContext& ctx,
                                            std::uint64_t key) {
  const auto logits = similarity_logits(hard_norm_->forward(q), features);
  HardAssignment a = gumbel_hard_assign(logits, tau, ctx.seed, key, ctx.noise);
  torch::Tensor assignment;
  torch::Tensor onehot = a.onehot;
  if (ctx.trace != nullptr && ctx.trace->mode == AssignmentTrace::Mode::kReplay) {
    if (ctx.trace->cursor >= ctx.trace->records.size()) {
      throw InputError("assignment replay ran past the recorded layers");
    }
    const HardAssignment& rec = ctx.trace->records[ctx.trace->cursor++];
    onehot = rec.onehot;
    assignment = rec.onehot + (a.gumbel - rec.gumbel);
  } else {
    if (ctx.trace != nullptr) ctx.trace->records.push_back({a.gumbel.detach().clone(), a.onehot});
    assignment = straight_through(a.onehot, a.gumbel);
  }
  return q + hard_out_->forward(gather_with_counts(assignment, onehot, features));
}

torch::Tensor RefinerLayerImpl::regulate(const torch::Tensor& q) {
  const auto normed = self_norm_->forward(q);
  auto x = q + self_->forward(normed, normed);
  return x + ffn_->forward(x);
}

QuerySet RefinerLayerImpl::forward(const QuerySet& queries, const torch::Tensor& level,
                                   const torch::Tensor& tau, const RefineContext& ctx,
                                   std::uint64_t layer_index) {
  const auto features = feature_norm_->forward(adapter_->forward(flatten_tokens(level)));
  auto step = [&](const torch::Tensor& q, bool hard, std::uint64_t family) -> torch::Tensor {
    if (!q.defined()) return q;
    auto x = hard ? hard_update(q, features, tau, ctx, layer_index * 4 + family) : soft_update(q, features);
    return regulate(x);
  };
  const bool all_hard = hard_mode_ == HardMode::kAll;
  QuerySet out;
  out.segmentation = step(queries.segmentation, all_hard, 0);
  out.textual = step(queries.textual, all_hard, 1);
  out.anatomical = step(queries.anatomical, hard_mode_ != HardMode::kOff, 2);
  return out;
}

void RefinerLayerImpl::zero_output_projections() {
  torch::NoGradGuard no_grad;
  for (auto* lin : {&cross_->out, &self_->out, &ffn_->fc2}) {
    (*lin)->weight.zero_();
    (*lin)->bias.zero_();
  }
  hard_out_->weight.zero_();
}

ShareRefinerImpl::ShareRefinerImpl(RefinerOptions options) : options_(std::move(options)) {
  if (!(options_.tau_init > 0.0)) throw ConfigError("tau_init must be positive");
  tau_ = register_parameter("tau", torch::full({}, options_.tau_init));
  // Coarsest level first.
  for (std::size_t i = options_.level_widths.size(); i-- > 0;) {
    layers_.push_back(register_module("layer" + std::to_string(i + 1),
                                      RefinerLayer(options_.level_widths[i], options_)));
  }
}

torch::Tensor ShareRefinerImpl::tau() const { return torch::clamp(tau_, 0.01, 10.0); }

QuerySet ShareRefinerImpl::forward(const QuerySet& queries, const MultiScaleFeatures& features,
                                   const RefineContext& ctx) {
  if (features.levels.size() != layers_.size()) {
    throw ShapeError("refiner has " + std::to_string(layers_.size()) + " layers but got " +
                     std::to_string(features.levels.size()) + " feature levels");
  }
  for (const auto* q : {&queries.segmentation, &queries.textual, &queries.anatomical}) {
    if (q->defined() && (q->dim() != 3 || q->size(2) != options_.query_width)) {
      throw ShapeError("refiner queries must be B x N x " + std::to_string(options_.query_width));
    }
  }
  const auto t = tau();
  QuerySet q = queries;
  const auto levels = features.levels.size();
  for (std::size_t i = 0; i < levels; ++i) {
    const auto& level = features.levels[levels - 1 - i];
    q = layers_[i]->forward(q, level, t, ctx, static_cast<std::uint64_t>(i));
  }
  return q;
}

void ShareRefinerImpl::zero_output_projections() {
  for (auto& l : layers_) l->zero_output_projections();
}

}  // namespace catseg
