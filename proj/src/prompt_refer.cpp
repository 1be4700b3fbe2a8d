#include "catseg/prompt_refer.hpp"

#include <algorithm>

#include "catseg/errors.hpp"

namespace catseg {

GroupMask::GroupMask(int n) : n_(n), allow_(static_cast<std::size_t>(2 * n * n), false) {
  if (n <= 0) throw ConfigError("group mask needs at least one category");
  for (int i = 0; i < n; ++i) {
    allow(i, i);
    allow(i, n + i);
  }
}

std::size_t GroupMask::index(int row, int col) const {
  if (row < 0 || row >= n_ || col < 0 || col >= 2 * n_) {
    throw ShapeError("group mask index out of range");
  }
  return static_cast<std::size_t>(row * 2 * n_ + col);
}

int GroupMask::count(int row) const {
  int c = 0;
  for (int j = 0; j < 2 * n_; ++j) c += allowed(row, j) ? 1 : 0;
  return c;
}

GroupMask GroupMask::full(int n) {
  GroupMask m(n);
  std::fill(m.allow_.begin(), m.allow_.end(), true);
  return m;
}

GroupMask GroupMask::restricted(bool anatomical, bool textual) const {
  GroupMask m = *this;
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < n_; ++j) {
      if (!anatomical) m.allow_[m.index(i, j)] = false;
      if (!textual) m.allow_[m.index(i, n_ + j)] = false;
    }
  }
  return m;
}

torch::Tensor GroupMask::to_tensor() const {
  auto t = torch::zeros({n_, 2 * n_}, torch::kBool);
  auto acc = t.accessor<bool, 2>();
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < 2 * n_; ++j) acc[i][j] = allowed(i, j);
  return t;
}

nlohmann::json GroupMask::to_json(const Taxonomy& taxonomy) const {
  if (taxonomy.size() != n_) throw ShapeError("group mask and taxonomy differ in size");
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < n_; ++i) {
    std::vector<bool> row;
    for (int j = 0; j < 2 * n_; ++j) row.push_back(allowed(i, j));
    rows.push_back(row);
  }
  return {{"categories", taxonomy.names()}, {"columns", "anatomical[0..N) then textual[0..N)"},
          {"allow", rows}};
}

GroupMask build_attention_mask(const Taxonomy& taxonomy, std::span<const std::pair<int, int>> extra_links) {
  const int n = taxonomy.size();
  GroupMask mask(n);
  auto link = [&](int row, int target) {
    mask.allow(row, target);
    mask.allow(row, n + target);
  };
  for (int i = 0; i < n; ++i) {
    if (taxonomy.is_tumor(i)) link(i, *taxonomy[i].host);
  }
  for (const auto& [from, to] : extra_links) {
    if (from < 0 || from >= n || to < 0 || to >= n) {
      throw ConfigError("group link (" + std::to_string(from) + ", " + std::to_string(to) +
                        ") references a category outside the taxonomy");
    }
    link(from, to);
  }
  return mask;
}

PromptReferLayerImpl::PromptReferLayerImpl(const PromptReferOptions& options)
    : pre_norm_(options.pre_norm) {
  const auto c = options.query_width;
  query_norm = register_module("query_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c})));
  prompt_norm = register_module("prompt_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c})));
  cross = register_module("cross", Attention(c, options.heads));
  ffn = register_module("ffn", FeedForward(c, options.ffn_width));
}

torch::Tensor PromptReferLayerImpl::forward(const torch::Tensor& queries, const torch::Tensor& prompts,
                                            const torch::Tensor& allow) {
  const auto q = pre_norm_ ? query_norm->forward(queries) : queries;
  const auto p = pre_norm_ ? prompt_norm->forward(prompts) : prompts;
  auto x = queries + cross->forward(q, p, allow);
  return x + ffn->forward(x);
}

PromptReferImpl::PromptReferImpl(PromptReferOptions options) : options_(options) {
  if (options_.layers < 1) throw ConfigError("prompt refer needs at least one layer");
  for (int i = 0; i < options_.layers; ++i) {
    layers_.push_back(register_module("layer" + std::to_string(i), PromptReferLayer(options_)));
  }
  head_norm_ = register_module("head_norm",
                               torch::nn::LayerNorm(torch::nn::LayerNormOptions({options_.query_width})));
  presence_head_ = register_module("presence_head", torch::nn::Linear(options_.query_width, 1));
}

torch::Tensor PromptReferImpl::presence(const torch::Tensor& decoded) {
  return presence_head_->forward(head_norm_->forward(decoded)).squeeze(-1);
}

DecodedQueries PromptReferImpl::forward(const torch::Tensor& segmentation, const torch::Tensor& anatomical,
                                        const torch::Tensor& textual, const GroupMask& mask) {
  const auto n = segmentation.size(1);
  if (mask.size() != n) {
    throw ShapeError("group mask has " + std::to_string(mask.size()) + " rows for " +
                     std::to_string(n) + " queries");
  }
  if (!anatomical.defined() && !textual.defined()) {
    throw ConfigError("prompt refer needs at least one prompt family");
  }
  const GroupMask effective = mask.restricted(anatomical.defined(), textual.defined());
  for (int i = 0; i < n; ++i) {
    if (effective.count(i) == 0) {
      throw ConfigError("group mask row " + std::to_string(i) + " has no visible prompt");
    }
  }
  const auto zeros = torch::zeros_like(segmentation);
  const auto prompts =
      torch::cat({anatomical.defined() ? anatomical : zeros, textual.defined() ? textual : zeros}, 1);
  const auto allow = effective.to_tensor().to(segmentation.device());

  DecodedQueries out;
  auto x = segmentation;
  for (auto& layer : layers_) x = layer->forward(x, prompts, allow);
  out.decoded = x;
  out.presence_logits = presence(x);
  out.attention = layers_.back()->cross->last_weights().mean(1);
  return out;
}

torch::Tensor l2_normalize_rows(const torch::Tensor& x, double eps) {
  const auto norms = x.norm(2, -1, true);
  if (norms.numel() > 0 && !(norms.detach().min().item<double>() >= eps)) {
    throw NumericError("cannot normalize a zero-norm row");
  }
  return x / norms.clamp_min(eps);
}

ContrastProjectorImpl::ContrastProjectorImpl(std::int64_t query_width, std::int64_t contrast_width) {
  segmentation = register_module("segmentation", torch::nn::Linear(query_width, contrast_width));
  anatomical = register_module("anatomical", torch::nn::Linear(query_width, contrast_width));
  textual = register_module("textual", torch::nn::Linear(query_width, contrast_width));
}

ContrastEmbeddings ContrastProjectorImpl::forward(const torch::Tensor& decoded,
                                                  const torch::Tensor& anatomical_queries,
                                                  const torch::Tensor& textual_queries) {
  ContrastEmbeddings out;
  out.segmentation = l2_normalize_rows(segmentation->forward(decoded));
  if (anatomical_queries.defined()) {
    out.anatomical = l2_normalize_rows(anatomical->forward(anatomical_queries));
  }
  if (textual_queries.defined()) out.textual = l2_normalize_rows(textual->forward(textual_queries));
  return out;
}

}  // namespace catseg
