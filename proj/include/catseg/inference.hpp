#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "catseg/metrics.hpp"
#include "catseg/model.hpp"
#include "catseg/trainer.hpp"

namespace catseg {

/// Window start offsets along one axis: stride = patch * (1 - overlap), last
/// window flush with the end. A single window at 0 when extent <= patch.
std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch, double overlap = 0.5);

struct Prediction {
  std::vector<Volume> probabilities;  // one per category, on the input grid
  bool padded = false;                // input was smaller than the patch along some axis
  int windows = 0;
};

/// Sliding-window inference, averaging sigmoid outputs where windows overlap.
/// Inputs smaller than the patch are zero-padded (flagged) and cropped back.
/// Hard assignment runs without Gumbel noise.
Prediction infer_volume(CatModel& model, const Volume& image, const PromptBatch& prompts, const GroupMask& mask,
                        Shape3 patch, double overlap = 0.5);

/// Predicts every case with test-time prompts and scores it.
MetricsReport evaluate_model(CatModel& model, PromptSource& prompts, const Taxonomy& taxonomy,
                             const std::vector<LabeledCase>& cases, Shape3 patch, double threshold, HdMode mode,
                             std::uint64_t seed);

/// Rebuilds a model from a checkpoint directory. Returns the stored metadata.
CatModel load_model(const std::filesystem::path& checkpoint_dir, nlohmann::json* metadata = nullptr);

/// CSV with header "case_id,category,family,width,vector"; families E_A, E_T,
/// Q'_A, Q'_T, O_S (disabled families are skipped); vector entries joined by ';'.
/// Each case is run on its central patch (zero-padded if smaller).
std::string export_embeddings(CatModel& model, PromptSource& prompts, const Taxonomy& taxonomy,
                              const std::vector<LabeledCase>& cases, Shape3 patch, std::uint64_t seed);

struct AblationRow {
  std::string label;
  BranchFlags flags;
};

/// The nine prompt/assignment/mask configurations, baseline first, full model last.
std::vector<AblationRow> ablation_grid();
/// Rows selected by label; throws ConfigError for unknown labels.
std::vector<AblationRow> ablation_rows(const std::vector<std::string>& labels);

struct AblationResult {
  AblationRow row;
  std::vector<MetricsReport> per_seed;
  MetricsReport merged;  // case table over all seeds
};

using AblationProgress = std::function<void(const std::string& label, std::uint64_t seed)>;

/// Trains each row once per seed on `data` (no files written) and evaluates on `heldout`.
std::vector<AblationResult> run_ablation(const TrainConfig& base, const TrainData& data,
                                         const std::vector<LabeledCase>& heldout,
                                         const std::vector<std::uint64_t>& seeds,
                                         const std::vector<AblationRow>& rows, const AblationProgress& progress = {});

nlohmann::json ablation_json(const std::vector<AblationResult>& results);
std::string ablation_csv(const std::vector<AblationResult>& results);

}  // namespace catseg
