#include "catseg/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "catseg/checkpoint.hpp"
#include "catseg/errors.hpp"
#include "catseg/prompt_encoders.hpp"

namespace catseg {

using torch::indexing::Slice;

std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch, double overlap) {
  if (patch <= 0) throw ConfigError("patch extent must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("window overlap must lie in [0, 1)");
  if (extent <= patch) return {0};
  const auto stride = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(patch * (1.0 - overlap))));
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0;; s += stride) {
    if (s + patch >= extent) {
      starts.push_back(extent - patch);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

namespace {

Volume pad_to(const Volume& image, Shape3 shape) {
  if (image.shape() == shape) return image;
  Volume out(shape, image.spacing(), 0.0F);
  const Shape3& s = image.shape();
  for (std::int64_t i = 0; i < s.h; ++i)
    for (std::int64_t j = 0; j < s.w; ++j)
      for (std::int64_t k = 0; k < s.d; ++k) out.at(i, j, k) = image.at(i, j, k);
  return out;
}

Volume tensor_to_volume(const torch::Tensor& t, const Spacing& spacing) {
  const auto c = t.to(torch::kFloat32).contiguous();
  const Shape3 shape{c.size(0), c.size(1), c.size(2)};
  const float* p = c.data_ptr<float>();
  return Volume(shape, spacing, std::vector<float>(p, p + c.numel()));
}

RefineContext inference_context() {
  RefineContext ctx;
  ctx.noise = false;
  return ctx;
}

std::string format_vector(const torch::Tensor& row) {
  const auto r = row.to(torch::kFloat64).contiguous();
  const double* p = r.data_ptr<double>();
  std::string out;
  char buf[32];
  for (std::int64_t i = 0; i < r.numel(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", p[i]);
    if (i > 0) out.push_back(';');
    out += buf;
  }
  return out;
}

}  // namespace

Prediction infer_volume(CatModel& model, const Volume& image, const PromptBatch& prompts, const GroupMask& mask,
                        Shape3 patch, double overlap) {
  torch::NoGradGuard no_grad;
  const Shape3& s = image.shape();
  const Shape3 padded{std::max(s.h, patch.h), std::max(s.w, patch.w), std::max(s.d, patch.d)};
  Prediction pred;
  pred.padded = !(padded == s);
  const Volume input = pad_to(image, padded);
  const auto full = volume_to_tensor(input);
  const auto n = model->options().categories;
  auto acc = torch::zeros({n, padded.h, padded.w, padded.d});
  auto count = torch::zeros({1, padded.h, padded.w, padded.d});
  const auto ctx = inference_context();
  for (auto i : window_starts(padded.h, patch.h, overlap))
    for (auto j : window_starts(padded.w, patch.w, overlap))
      for (auto k : window_starts(padded.d, patch.d, overlap)) {
        const auto window = full.index({Slice(), Slice(), Slice(i, i + patch.h), Slice(j, j + patch.w),
                                        Slice(k, k + patch.d)});
        const auto out = model->forward(window, prompts, mask, ctx);
        const auto probs = torch::sigmoid(out.mask_logits[0]);
        const auto region = std::vector<at::indexing::TensorIndex>{
            Slice(), Slice(i, i + patch.h), Slice(j, j + patch.w), Slice(k, k + patch.d)};
        acc.index(region) += probs;
        count.index(region) += 1.0;
        ++pred.windows;
      }
  const auto mean = (acc / count).index({Slice(), Slice(0, s.h), Slice(0, s.w), Slice(0, s.d)});
  for (std::int64_t c = 0; c < n; ++c) pred.probabilities.push_back(tensor_to_volume(mean[c], image.spacing()));
  return pred;
}

MetricsReport evaluate_model(CatModel& model, PromptSource& prompts, const Taxonomy& taxonomy,
                             const std::vector<LabeledCase>& cases, Shape3 patch, double threshold, HdMode mode,
                             std::uint64_t seed) {
  if (cases.empty()) throw InputError("no cases to evaluate");
  const GroupMask mask = make_group_mask(taxonomy, model->options().flags);
  std::vector<EvaluatedCase> evaluated;
  for (const auto& c : cases) {
    auto pred = infer_volume(model, c.image, prompts.inference_batch(c.case_id, seed), mask, patch);
    evaluated.push_back({std::move(pred.probabilities), c});
  }
  return evaluate(std::move(evaluated), taxonomy, threshold, mode);
}

CatModel load_model(const std::filesystem::path& checkpoint_dir, nlohmann::json* metadata) {
  const auto meta = read_checkpoint_config(checkpoint_dir);
  if (!meta.contains("model")) throw ConfigError(checkpoint_dir.string() + ": checkpoint lacks model options");
  CatModel model(ModelOptions::from_json(meta.at("model")));
  load_checkpoint(checkpoint_dir, *model);
  model->eval();
  if (metadata != nullptr) *metadata = meta;
  return model;
}

std::string export_embeddings(CatModel& model, PromptSource& prompts, const Taxonomy& taxonomy,
                              const std::vector<LabeledCase>& cases, Shape3 patch, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  const auto& flags = model->options().flags;
  const GroupMask mask = make_group_mask(taxonomy, flags);
  std::ostringstream csv;
  csv << "case_id,category,family,width,vector\n";
  for (const auto& c : cases) {
    const Shape3& s = c.image.shape();
    BoundingBox box;
    for (int a = 0; a < 3; ++a) {
      box.lo[a] = std::max<std::int64_t>(0, (s[a] - patch[a]) / 2);
      box.hi[a] = std::min(s[a], box.lo[a] + patch[a]);
    }
    const Volume window = pad_to(crop(c.image, box), patch);
    const auto batch = prompts.inference_batch(c.case_id, seed);
    const auto out = model->forward(volume_to_tensor(window), batch, mask, inference_context());
    std::vector<std::pair<std::string, torch::Tensor>> families;
    if (flags.anatomical) families.emplace_back("E_A", batch.anatomical[0]);
    if (flags.textual) families.emplace_back("E_T", model->textual_encoder()->embed_bags(batch.textual_bags)[0]);
    if (out.refined.anatomical.defined()) families.emplace_back("Q'_A", out.refined.anatomical[0]);
    if (out.refined.textual.defined()) families.emplace_back("Q'_T", out.refined.textual[0]);
    families.emplace_back("O_S", out.decoded[0]);
    for (const auto& [family, rows] : families) {
      for (int k = 0; k < taxonomy.size(); ++k) {
        csv << c.case_id << ',' << taxonomy[k].name << ',' << family << ',' << rows.size(1) << ','
            << format_vector(rows[k]) << '\n';
      }
    }
  }
  return csv.str();
}

std::vector<AblationRow> ablation_grid() {
  auto flags = [](bool a, bool t, bool hard, bool hard_all, bool mask) {
    BranchFlags f;
    f.anatomical = a;
    f.textual = t;
    f.hard = hard;
    f.hard_all = hard_all;
    f.group_mask = mask;
    return f;
  };
  return {
      {"baseline", flags(false, false, false, false, false)},
      {"AP", flags(true, false, false, false, false)},
      {"TP", flags(false, true, false, false, false)},
      {"AP+TP", flags(true, true, false, false, false)},
      {"TP+Mask", flags(false, true, false, false, true)},
      {"AP+TP+Hard", flags(true, true, true, false, false)},
      {"AP+TP+Mask", flags(true, true, false, false, true)},
      {"AP+TP+HardAll+Mask", flags(true, true, true, true, true)},
      {"AP+TP+Hard+Mask", flags(true, true, true, false, true)},
  };
}

std::vector<AblationRow> ablation_rows(const std::vector<std::string>& labels) {
  const auto grid = ablation_grid();
  if (labels.empty()) return grid;
  std::vector<AblationRow> out;
  for (const auto& l : labels) {
    const auto it = std::find_if(grid.begin(), grid.end(), [&](const AblationRow& r) { return r.label == l; });
    if (it == grid.end()) throw ConfigError("unknown ablation row '" + l + "'");
    out.push_back(*it);
  }
  return out;
}

std::vector<AblationResult> run_ablation(const TrainConfig& base, const TrainData& data,
                                         const std::vector<LabeledCase>& heldout,
                                         const std::vector<std::uint64_t>& seeds,
                                         const std::vector<AblationRow>& rows, const AblationProgress& progress) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (heldout.empty()) throw InputError("ablation needs held-out cases");
  std::vector<AblationResult> results;
  for (const auto& row : rows) {
    AblationResult r{row, {}, {}};
    std::vector<CaseMetrics> merged;
    for (auto seed : seeds) {
      if (progress) progress(row.label, seed);
      TrainConfig cfg = base;
      cfg.model.flags = row.flags;
      cfg.seed = seed;
      cfg.out_dir.clear();
      cfg.evaluate_after_training = false;
      auto trained = train(cfg, data);
      trained.model->eval();
      PromptSource prompts(data, trained.model);
      auto report = evaluate_model(trained.model, prompts, data.taxonomy, heldout, cfg.patch, cfg.threshold,
                                   cfg.hd_mode, seed);
      for (auto m : report.case_table) {
        m.case_id = "seed" + std::to_string(seed) + "/" + m.case_id;
        merged.push_back(std::move(m));
      }
      r.per_seed.push_back(std::move(report));
    }
    r.merged = aggregate_cases(std::move(merged), data.taxonomy);
    results.push_back(std::move(r));
  }
  return results;
}

nlohmann::json ablation_json(const std::vector<AblationResult>& results) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results) {
    const auto& f = r.row.flags;
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& rep : r.per_seed) per_seed.push_back(rep.to_json());
    rows.push_back({{"label", r.row.label},
                    {"flags",
                     {{"use_anatomical", f.anatomical},
                      {"use_textual", f.textual},
                      {"hard_assign", f.hard},
                      {"hard_all", f.hard_all},
                      {"group_mask", f.group_mask}}},
                    {"merged", r.merged.to_json()},
                    {"per_seed", per_seed}});
  }
  return {{"rows", rows}};
}

std::string ablation_csv(const std::vector<AblationResult>& results) {
  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (const auto& r : results) rows.emplace_back(r.row.label, r.merged);
  return metrics_csv(rows);
}

}  // namespace catseg
