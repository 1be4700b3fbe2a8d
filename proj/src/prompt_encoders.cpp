#include "catseg/prompt_encoders.hpp"

#include <cctype>
#include <random>

#include "catseg/errors.hpp"
#include "catseg/rng.hpp"

namespace catseg {

namespace F = torch::nn::functional;

torch::Tensor volume_to_tensor(const Volume& v) {
  const Shape3& s = v.shape();
  auto data = v.data();
  return torch::from_blob(const_cast<float*>(data.data()), {1, 1, s.h, s.w, s.d}, torch::kFloat32)
      .clone();
}

AnatomicalEncoderImpl::AnatomicalEncoderImpl(Shape3 prompt_shape, std::int64_t width)
    : prompt_shape_(prompt_shape) {
  if (width <= 0 || width % 2 != 0) throw ConfigError("anatomical embedding width must be even");
  if (prompt_shape.h < 4 || prompt_shape.w < 4 || prompt_shape.d < 4) {
    throw ConfigError("prompt volumes must be at least 4 voxels along every axis");
  }
  const std::int64_t last = width / 2;
  c1_ = register_module("c1", torch::nn::Conv3d(torch::nn::Conv3dOptions(1, 8, 3).padding(1)));
  c2_ = register_module("c2", torch::nn::Conv3d(torch::nn::Conv3dOptions(8, 16, 3).padding(1)));
  c3_ = register_module("c3", torch::nn::Conv3d(torch::nn::Conv3dOptions(16, last, 3).padding(1)));
}

torch::Tensor AnatomicalEncoderImpl::forward(const torch::Tensor& prompts) {
  if (prompts.dim() != 5 || prompts.size(1) != 1 || prompts.size(2) != prompt_shape_.h ||
      prompts.size(3) != prompt_shape_.w || prompts.size(4) != prompt_shape_.d) {
    throw ShapeError("anatomical prompts must be K x 1 x " + prompt_shape_.str());
  }
  auto x = F::silu(c1_->forward(prompts));
  x = F::avg_pool3d(x, F::AvgPool3dFuncOptions(2));
  x = F::silu(c2_->forward(x));
  x = F::avg_pool3d(x, F::AvgPool3dFuncOptions(2));
  x = F::silu(c3_->forward(x));
  auto flat = x.flatten(2);
  return torch::cat({flat.mean(2), std::get<0>(flat.max(2))}, 1);
}

torch::Tensor AnatomicalEncoderImpl::encode(const Volume& prompt) {
  if (!(prompt.shape() == prompt_shape_)) {
    throw ShapeError("prompt volume is " + prompt.shape().str() + ", expected " + prompt_shape_.str());
  }
  auto p = parameters();
  const auto dtype = p.empty() ? torch::kFloat32 : p.front().scalar_type();
  return forward(volume_to_tensor(prompt).to(dtype)).squeeze(0);
}

void AnatomicalEncoderImpl::freeze() {
  for (auto& p : parameters()) p.set_requires_grad(false);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

TextualEncoderImpl::TextualEncoderImpl(std::int64_t width, bool trainable) : width_(width) {
  if (width <= 0) throw ConfigError("textual embedding width must be positive");
  bucket_weights_ = register_parameter("bucket_weights", torch::ones({width}), trainable);
}

torch::Tensor TextualEncoderImpl::bag(std::string_view text) const {
  if (text.empty()) throw InputError("textual prompt is empty");
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw InputError("textual prompt has no tokens: '" + std::string(text) + "'");
  auto counts = torch::zeros({width_}, torch::kFloat64);
  auto acc = counts.accessor<double, 1>();
  for (const auto& t : tokens) {
    acc[static_cast<std::int64_t>(rng::hash_string(t) % static_cast<std::uint64_t>(width_))] += 1.0;
  }
  return counts;
}

torch::Tensor TextualEncoderImpl::embed_bags(const torch::Tensor& bags) {
  auto weighted = bags.to(bucket_weights_.scalar_type()) * bucket_weights_;
  return weighted / weighted.norm(2, -1, true).clamp_min(1e-12);
}

torch::Tensor TextualEncoderImpl::forward(const std::vector<std::string>& texts) {
  if (texts.empty()) throw InputError("no textual prompts given");
  std::vector<torch::Tensor> rows;
  rows.reserve(texts.size());
  for (const auto& t : texts) rows.push_back(bag(t));
  return embed_bags(torch::stack(rows));
}

PromptProjectorImpl::PromptProjectorImpl(std::int64_t anatomical_width, std::int64_t textual_width,
                                         std::int64_t query_width) {
  anatomical = register_module("anatomical", torch::nn::Linear(anatomical_width, query_width));
  textual = register_module("textual", torch::nn::Linear(textual_width, query_width));
}

PromptQueries PromptProjectorImpl::forward(const torch::Tensor& a, const torch::Tensor& t) {
  PromptQueries q;
  if (a.defined()) {
    if (a.size(-1) != anatomical->options.in_features()) throw ShapeError("anatomical embedding width mismatch");
    q.anatomical = anatomical->forward(a);
  }
  if (t.defined()) {
    if (t.size(-1) != textual->options.in_features()) throw ShapeError("textual embedding width mismatch");
    q.textual = textual->forward(t);
  }
  return q;
}

std::vector<std::string> assemble_textual_prompts(const Taxonomy& taxonomy, const TextCorpus& corpus,
                                                  const std::vector<bool>& positives,
                                                  std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(taxonomy.size());
  if (positives.size() != n || corpus.long_descriptions.size() != n) {
    throw ShapeError("textual prompt assembly needs one entry per category");
  }
  if (corpus.short_templates.empty()) throw ConfigError("text corpus has no short templates");
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t c = 0; c < n; ++c) {
    if (positives[c]) {
      out.push_back(corpus.long_descriptions[c]);
      continue;
    }
    auto gen = rng::engine(seed, rng::Role::kTextualPrompt, 0, c);
    const auto pick =
        std::uniform_int_distribution<std::size_t>(0, corpus.short_templates.size() - 1)(gen);
    out.push_back(instantiate_template(corpus.short_templates[pick], taxonomy[static_cast<int>(c)].name));
  }
  return out;
}

}  // namespace catseg
