#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "catseg/backbone.hpp"
#include "catseg/losses.hpp"
#include "catseg/prompt_encoders.hpp"
#include "catseg/prompt_refer.hpp"
#include "catseg/share_refiner.hpp"

namespace catseg {

/// Which pipeline branches are active. Mirrors the ablation grid columns.
struct BranchFlags {
  bool anatomical = true;  // anatomical prompts
  bool textual = true;     // textual prompts
  bool hard = true;        // hard assignment for anatomical queries
  bool hard_all = false;   // hard assignment for every query family
  bool group_mask = true;  // restrict PromptRefer attention to each category's group

  void validate() const;
  HardMode hard_mode() const;
  bool any_prompt() const { return anatomical || textual; }
};

struct ModelOptions {
  int categories = 1;
  BackboneOptions backbone;
  PromptEncoderOptions prompts;
  std::int64_t heads = 1;
  std::int64_t ffn_width = 64;
  int refer_layers = 1;
  std::int64_t contrast_width = 32;
  double tau_init = 1.0;
  BranchFlags flags;
  std::uint64_t init_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelOptions from_json(const nlohmann::json& j);
};

/// Prompt inputs for one batch: frozen anatomical embeddings B x N x C_A and
/// textual bucket counts B x N x C_T (see TextualEncoder::bag). A disabled
/// family may be left undefined; it is ignored either way.
struct PromptBatch {
  torch::Tensor anatomical;
  torch::Tensor textual_bags;
};

/// The taxonomy group mask when flags.group_mask is set, otherwise all-visible.
GroupMask make_group_mask(const Taxonomy& taxonomy, const BranchFlags& flags);

struct ModelOutput {
  torch::Tensor mask_logits;      // B x N x H x W x D
  torch::Tensor presence_logits;  // B x N
  QuerySet initial;               // queries entering the refiner
  QuerySet refined;               // Q'_S, Q'_T, Q'_A
  torch::Tensor decoded;          // O_S
  ContrastEmbeddings contrast;    // defined only for the active families
};

class CatModelImpl : public torch::nn::Module {
 public:
  explicit CatModelImpl(ModelOptions options);

  ModelOutput forward(const torch::Tensor& image, const PromptBatch& prompts, const GroupMask& mask,
                      const RefineContext& ctx);

  const ModelOptions& options() const { return options_; }
  AnatomicalEncoder& anatomical_encoder() { return anatomical_encoder_; }
  TextualEncoder& textual_encoder() { return textual_encoder_; }
  /// Parameters updated by the optimizer (frozen encoders excluded).
  std::vector<torch::Tensor> trainable_parameters();

 private:
  ModelOptions options_;
  AnatomicalEncoder anatomical_encoder_{nullptr};
  VisionEncoder encoder_{nullptr};
  PixelDecoder decoder_{nullptr};
  torch::Tensor segmentation_queries_;
  TextualEncoder textual_encoder_{nullptr};
  PromptProjector projector_{nullptr};
  ShareRefiner refiner_{nullptr};
  PromptRefer refer_{nullptr};
  ContrastProjector contrast_{nullptr};
  MaskHead mask_head_{nullptr};
};
TORCH_MODULE(CatModel);

struct LossOptions {
  bool dice = true;
  bool cls = true;
  bool s2p = true;
  bool p2p = true;
  double dice_smooth = 1e-5;
  PromptTarget s2p_target = PromptTarget::kBoth;
  InfoNceOptions infonce;
};

/// Assembles the enabled loss terms. Contrastive terms whose families are
/// unavailable are left undefined. present: B x N in {0, 1}; target: B x N x spatial.
LossReport compute_losses(const ModelOutput& out, const torch::Tensor& target, const torch::Tensor& present,
                          const LossOptions& options);

}  // namespace catseg
