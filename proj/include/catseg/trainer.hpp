#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "catseg/config.hpp"
#include "catseg/metrics.hpp"
#include "catseg/model.hpp"
#include "catseg/synth.hpp"
#include "catseg/taxonomy.hpp"

namespace catseg {

struct TrainData {
  Taxonomy taxonomy;
  std::vector<LabeledCase> cases;
  PromptBank bank;
  TextCorpus text;
};

/// Reads taxonomy, corpus, bank and text corpus from the config paths.
TrainData load_train_data(const TrainConfig& config);

/// Index into bank.entries[category] of a uniform draw over entries whose
/// source case differs from `current_case_id`. Throws SamplingError when none qualify.
std::size_t sample_anatomical_prompt(const PromptBank& bank, int category, const std::string& current_case_id,
                                     std::uint64_t seed);

/// Frozen anatomical embeddings of every bank entry, computed once.
class PromptSource {
 public:
  PromptSource(const TrainData& data, CatModel& model);

  /// B x N x C_A for the given cases; entry for (b, c) is drawn with key index b * N + c.
  torch::Tensor anatomical(const std::vector<std::string>& case_ids, std::uint64_t seed);
  /// Raw embedding of bank entry `index` of `category` (C_A).
  const torch::Tensor& embedding(int category, std::size_t index) const;
  /// B x N x C_T bucket counts. positives[b][c] selects the long description,
  /// otherwise a sampled short template.
  torch::Tensor textual_bags(const std::vector<std::vector<bool>>& positives, std::uint64_t seed) const;
  std::vector<std::string> texts(const std::vector<bool>& positives, std::uint64_t seed) const;

  /// Test-time prompts for a single case: anatomical entries drawn with the
  /// inference role, long descriptions for every category.
  PromptBatch inference_batch(const std::string& case_id, std::uint64_t seed);

 private:
  const TrainData& data_;
  TextualEncoder textual_;
  std::vector<std::vector<torch::Tensor>> cache_;  // [category][entry]
};

struct AugmentParams {
  std::array<double, 3> shift{0.0, 0.0, 0.0};  // voxels
  double zoom = 1.0;
  double scale = 1.0;
};

AugmentParams draw_augment(const AugmentRanges& ranges, Shape3 extent, std::uint64_t seed);
/// Output voxel p samples the source at c + (p - c) / zoom - shift, c the grid
/// centre. Image: trilinear, zero outside; masks: nearest neighbour. The
/// image is then multiplied by `scale`.
LabeledCase apply_augment(const LabeledCase& lc, const AugmentParams& params);
LabeledCase augment(const LabeledCase& lc, const AugmentRanges& ranges, std::uint64_t seed);

/// Copies `box` out of the image and every mask; presence is recomputed.
LabeledCase crop_case(const LabeledCase& lc, const BoundingBox& box);
/// Uniformly placed patch box. Throws ConfigError if the case is smaller than the patch.
BoundingBox random_patch(Shape3 shape, Shape3 patch, std::uint64_t seed);

/// Linear warmup over max(1, round(warmup_fraction * steps)) steps, then
/// polynomial decay to zero at `steps`.
double learning_rate(const TrainConfig& config, int step);

struct TrainResult {
  CatModel model{nullptr};
  int steps_done = 0;
  std::vector<nlohmann::json> log;  // one record per step
  std::optional<MetricsReport> metrics;
};

using StepCallback = std::function<void(const nlohmann::json&)>;

/// Runs the full training loop in memory. If config.out_dir is set, writes
/// config.json, train_log.jsonl, checkpoint/ (every checkpoint_every steps and
/// at the end) and train_metrics.{json,csv}. On a non-finite loss the last
/// checkpoint is left in place and NumericError propagates.
TrainResult train(const TrainConfig& config, const TrainData& data, const StepCallback& on_step = {});

/// Checkpoint config block: model options, taxonomy, patch and step.
nlohmann::json checkpoint_metadata(const TrainConfig& config, const Taxonomy& taxonomy, int step);

}  // namespace catseg
