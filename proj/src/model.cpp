#include "catseg/model.hpp"

#include "catseg/errors.hpp"

namespace catseg {

namespace {

// The frozen anatomical encoder is initialized identically for every run.
constexpr std::uint64_t kAnatomicalEncoderSeed = 0x5eed;

std::string hard_mode_name(HardMode m) {
  switch (m) {
    case HardMode::kOff: return "off";
    case HardMode::kAnatomical: return "anatomical";
    case HardMode::kAll: return "all";
  }
  return "off";
}

}  // namespace

void BranchFlags::validate() const {
  if (group_mask && !any_prompt()) throw ConfigError("group_mask requires at least one prompt family");
  if (hard && !hard_all && !anatomical) throw ConfigError("hard assignment for anatomical queries requires anatomical prompts");
}

HardMode BranchFlags::hard_mode() const {
  if (hard_all) return HardMode::kAll;
  return hard ? HardMode::kAnatomical : HardMode::kOff;
}

void ModelOptions::validate() const {
  if (categories < 1) throw ConfigError("model needs at least one category");
  backbone.validate();
  if (contrast_width < 1 || ffn_width < 1 || heads < 1) throw ConfigError("model widths must be positive");
  flags.validate();
}

nlohmann::json ModelOptions::to_json() const {
  const auto& p = prompts.prompt_shape;
  return {{"categories", categories},
          {"levels", backbone.levels},
          {"widths", backbone.widths},
          {"stem_width", backbone.stem_width},
          {"pixel_channels", backbone.pixel_channels},
          {"norm_groups", backbone.norm_groups},
          {"prompt_shape", {p.h, p.w, p.d}},
          {"anatomical_width", prompts.anatomical_width},
          {"textual_width", prompts.textual_width},
          {"query_width", prompts.query_width},
          {"train_textual", prompts.train_textual},
          {"heads", heads},
          {"ffn_width", ffn_width},
          {"refer_layers", refer_layers},
          {"contrast_width", contrast_width},
          {"tau_init", tau_init},
          {"use_anatomical", flags.anatomical},
          {"use_textual", flags.textual},
          {"hard_assign", flags.hard},
          {"hard_all", flags.hard_all},
          {"group_mask", flags.group_mask},
          {"hard_mode", hard_mode_name(flags.hard_mode())},
          {"init_seed", init_seed}};
}

ModelOptions ModelOptions::from_json(const nlohmann::json& j) {
  ModelOptions o;
  try {
    o.categories = j.value("categories", o.categories);
    o.backbone.levels = j.value("levels", o.backbone.levels);
    o.backbone.widths = j.value("widths", o.backbone.widths);
    o.backbone.stem_width = j.value("stem_width", o.backbone.stem_width);
    o.backbone.pixel_channels = j.value("pixel_channels", o.backbone.pixel_channels);
    o.backbone.norm_groups = j.value("norm_groups", o.backbone.norm_groups);
    if (j.contains("prompt_shape")) {
      const auto s = j.at("prompt_shape").get<std::vector<std::int64_t>>();
      if (s.size() != 3) throw ConfigError("prompt_shape needs three extents");
      o.prompts.prompt_shape = {s[0], s[1], s[2]};
    }
    o.prompts.anatomical_width = j.value("anatomical_width", o.prompts.anatomical_width);
    o.prompts.textual_width = j.value("textual_width", o.prompts.textual_width);
    o.prompts.query_width = j.value("query_width", o.prompts.query_width);
    o.prompts.train_textual = j.value("train_textual", o.prompts.train_textual);
    o.heads = j.value("heads", o.heads);
    o.ffn_width = j.value("ffn_width", o.ffn_width);
    o.refer_layers = j.value("refer_layers", o.refer_layers);
    o.contrast_width = j.value("contrast_width", o.contrast_width);
    o.tau_init = j.value("tau_init", o.tau_init);
    o.flags.anatomical = j.value("use_anatomical", o.flags.anatomical);
    o.flags.textual = j.value("use_textual", o.flags.textual);
    o.flags.hard = j.value("hard_assign", o.flags.hard);
    o.flags.hard_all = j.value("hard_all", o.flags.hard_all);
    o.flags.group_mask = j.value("group_mask", o.flags.group_mask);
    o.init_seed = j.value("init_seed", o.init_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model options: ") + e.what());
  }
  o.validate();
  return o;
}

GroupMask make_group_mask(const Taxonomy& taxonomy, const BranchFlags& flags) {
  if (!flags.group_mask) return GroupMask::full(taxonomy.size());
  return build_attention_mask(taxonomy, taxonomy.extra_links());
}

CatModelImpl::CatModelImpl(ModelOptions options) : options_(std::move(options)) {
  options_.validate();
  const auto c = options_.prompts.query_width;
  {
    torch::manual_seed(kAnatomicalEncoderSeed);
    anatomical_encoder_ = register_module(
        "anatomical_encoder", AnatomicalEncoder(options_.prompts.prompt_shape, options_.prompts.anatomical_width));
    anatomical_encoder_->freeze();
  }
  torch::manual_seed(options_.init_seed);
  encoder_ = register_module("encoder", VisionEncoder(options_.backbone));
  decoder_ = register_module("decoder", PixelDecoder(options_.backbone));
  segmentation_queries_ = register_parameter("segmentation_queries", 0.5 * torch::randn({options_.categories, c}));
  textual_encoder_ = register_module(
      "textual_encoder", TextualEncoder(options_.prompts.textual_width, options_.prompts.train_textual));
  projector_ = register_module(
      "projector", PromptProjector(options_.prompts.anatomical_width, options_.prompts.textual_width, c));
  RefinerOptions ro;
  ro.query_width = c;
  ro.level_widths = options_.backbone.widths;
  ro.heads = options_.heads;
  ro.ffn_width = options_.ffn_width;
  ro.tau_init = options_.tau_init;
  ro.hard_mode = options_.flags.hard_mode();
  refiner_ = register_module("refiner", ShareRefiner(ro));
  PromptReferOptions po;
  po.query_width = c;
  po.heads = options_.heads;
  po.ffn_width = options_.ffn_width;
  po.layers = options_.refer_layers;
  refer_ = register_module("refer", PromptRefer(po));
  contrast_ = register_module("contrast", ContrastProjector(c, options_.contrast_width));
  mask_head_ = register_module("mask_head", MaskHead(c, options_.backbone.pixel_channels));
}

std::vector<torch::Tensor> CatModelImpl::trainable_parameters() {
  std::vector<torch::Tensor> out;
  for (auto& p : parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

ModelOutput CatModelImpl::forward(const torch::Tensor& image, const PromptBatch& prompts, const GroupMask& mask,
                                  const RefineContext& ctx) {
  const auto& flags = options_.flags;
  const auto b = image.size(0);
  const auto n = options_.categories;
  auto check = [&](const torch::Tensor& t, std::int64_t width, const char* what) {
    if (t.dim() != 3 || t.size(0) != b || t.size(1) != n || t.size(2) != width) {
      throw ShapeError(std::string(what) + " must be B x N x " + std::to_string(width));
    }
  };
  torch::Tensor anatomical, textual;
  if (flags.anatomical) {
    if (!prompts.anatomical.defined()) throw InputError("anatomical prompts are enabled but missing");
    check(prompts.anatomical, options_.prompts.anatomical_width, "anatomical embeddings");
    anatomical = prompts.anatomical;
  }
  if (flags.textual) {
    if (!prompts.textual_bags.defined()) throw InputError("textual prompts are enabled but missing");
    check(prompts.textual_bags, options_.prompts.textual_width, "textual bags");
    textual = textual_encoder_->embed_bags(prompts.textual_bags);
  }

  const auto features = encoder_->forward(image);
  const auto pixels = decoder_->forward(features);

  ModelOutput out;
  const auto projected = projector_->forward(anatomical, textual);
  out.initial.segmentation = segmentation_queries_.unsqueeze(0).expand({b, n, options_.prompts.query_width});
  out.initial.anatomical = projected.anatomical;
  out.initial.textual = projected.textual;
  out.refined = refiner_->forward(out.initial, features, ctx);

  if (flags.any_prompt()) {
    auto dq = refer_->forward(out.refined.segmentation, out.refined.anatomical, out.refined.textual, mask);
    out.decoded = dq.decoded;
    out.presence_logits = dq.presence_logits;
  } else {
    out.decoded = out.refined.segmentation;
    out.presence_logits = refer_->presence(out.decoded);
  }
  out.mask_logits = mask_head_->forward(out.decoded, pixels);
  out.contrast = contrast_->forward(out.decoded, out.refined.anatomical, out.refined.textual);
  return out;
}

LossReport compute_losses(const ModelOutput& out, const torch::Tensor& target, const torch::Tensor& present,
                          const LossOptions& options) {
  torch::Tensor dice, cls, s2p, p2p;
  if (options.dice) dice = dice_loss(torch::sigmoid(out.mask_logits), target, options.dice_smooth);
  if (options.cls) cls = cls_loss(out.presence_logits, present);
  const auto& ce = out.contrast;
  if (options.s2p) {
    std::vector<torch::Tensor> terms;
    const bool want_a = options.s2p_target != PromptTarget::kTextual;
    const bool want_t = options.s2p_target != PromptTarget::kAnatomical;
    if (want_a && ce.anatomical.defined()) terms.push_back(infonce(ce.segmentation, ce.anatomical, options.infonce));
    if (want_t && ce.textual.defined()) terms.push_back(infonce(ce.segmentation, ce.textual, options.infonce));
    if (terms.size() == 1) s2p = terms[0];
    if (terms.size() == 2) s2p = 0.5 * (terms[0] + terms[1]);
  }
  if (options.p2p && ce.anatomical.defined() && ce.textual.defined()) {
    p2p = infonce(ce.anatomical, ce.textual, options.infonce);
  }
  return total_loss(dice, cls, s2p, p2p);
}

}  // namespace catseg
