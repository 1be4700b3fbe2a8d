#include "catseg/trainer.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "catseg/checkpoint.hpp"
#include "catseg/corpus_io.hpp"
#include "catseg/errors.hpp"
#include "catseg/inference.hpp"
#include "catseg/prompt_encoders.hpp"
#include "catseg/rng.hpp"

namespace catseg {

namespace fs = std::filesystem;

TrainData load_train_data(const TrainConfig& config) {
  TrainData d;
  d.taxonomy = io::read_taxonomy(config.taxonomy);
  d.cases = io::read_corpus(config.corpus, d.taxonomy);
  if (d.cases.empty()) throw InputError("corpus " + config.corpus.string() + " has no cases");
  d.bank = io::read_bank(config.bank, d.taxonomy);
  d.text = io::read_text_corpus(config.text_corpus, d.taxonomy);
  return d;
}

std::size_t sample_anatomical_prompt(const PromptBank& bank, int category, const std::string& current_case_id,
                                     std::uint64_t seed) {
  if (category < 0 || category >= static_cast<int>(bank.entries.size())) {
    throw SamplingError("no prompt bank entries for category index " + std::to_string(category));
  }
  const auto& entries = bank.entries[static_cast<std::size_t>(category)];
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].case_id != current_case_id) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw SamplingError("no anatomical prompt for category " + std::to_string(category) + " outside case '" +
                        current_case_id + "'");
  }
  auto gen = rng::engine(seed);
  return eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(gen)];
}

PromptSource::PromptSource(const TrainData& data, CatModel& model)
    : data_(data), textual_(model->textual_encoder()) {
  torch::NoGradGuard no_grad;
  auto& encoder = model->anatomical_encoder();
  cache_.resize(data.bank.entries.size());
  for (std::size_t c = 0; c < data.bank.entries.size(); ++c) {
    for (const auto& e : data.bank.entries[c]) cache_[c].push_back(encoder->encode(e.volume));
  }
}

const torch::Tensor& PromptSource::embedding(int category, std::size_t index) const {
  return cache_.at(static_cast<std::size_t>(category)).at(index);
}

torch::Tensor PromptSource::anatomical(const std::vector<std::string>& case_ids, std::uint64_t seed) {
  const auto n = static_cast<std::uint64_t>(data_.taxonomy.size());
  std::vector<torch::Tensor> rows;
  for (std::size_t b = 0; b < case_ids.size(); ++b) {
    std::vector<torch::Tensor> per;
    for (std::uint64_t c = 0; c < n; ++c) {
      const auto k = rng::key({seed, b * n + c});
      per.push_back(embedding(static_cast<int>(c), sample_anatomical_prompt(data_.bank, static_cast<int>(c),
                                                                             case_ids[b], k)));
    }
    rows.push_back(torch::stack(per));
  }
  return torch::stack(rows);
}

std::vector<std::string> PromptSource::texts(const std::vector<bool>& positives, std::uint64_t seed) const {
  return assemble_textual_prompts(data_.taxonomy, data_.text, positives, seed);
}

torch::Tensor PromptSource::textual_bags(const std::vector<std::vector<bool>>& positives, std::uint64_t seed) const {
  std::vector<torch::Tensor> rows;
  for (std::size_t b = 0; b < positives.size(); ++b) {
    std::vector<torch::Tensor> per;
    for (const auto& t : texts(positives[b], rng::key({seed, b}))) per.push_back(textual_->bag(t));
    rows.push_back(torch::stack(per));
  }
  return torch::stack(rows);
}

PromptBatch PromptSource::inference_batch(const std::string& case_id, std::uint64_t seed) {
  const int n = data_.taxonomy.size();
  PromptBatch p;
  std::vector<torch::Tensor> per;
  for (int c = 0; c < n; ++c) {
    const auto k = rng::key(seed, rng::Role::kInference, 0, static_cast<std::uint64_t>(c));
    per.push_back(embedding(c, sample_anatomical_prompt(data_.bank, c, case_id, k)));
  }
  p.anatomical = torch::stack(per).unsqueeze(0);
  p.textual_bags = textual_bags({std::vector<bool>(static_cast<std::size_t>(n), true)}, seed);
  return p;
}

AugmentParams draw_augment(const AugmentRanges& ranges, Shape3 extent, std::uint64_t seed) {
  AugmentParams p;
  auto gen = rng::engine(seed);
  auto uniform = [&](double lo, double hi) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(gen);
    return lo + (hi - lo) * u;
  };
  for (int a = 0; a < 3; ++a) {
    const double r = ranges.shift * static_cast<double>(extent[a]);
    p.shift[a] = uniform(-r, r);
  }
  p.zoom = uniform(ranges.zoom_min, ranges.zoom_max);
  p.scale = uniform(ranges.scale_min, ranges.scale_max);
  return p;
}

namespace {

float sample_trilinear(const Volume& v, double x, double y, double z) {
  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const auto i0 = static_cast<std::int64_t>(fx), j0 = static_cast<std::int64_t>(fy),
             k0 = static_cast<std::int64_t>(fz);
  const double tx = x - fx, ty = y - fy, tz = z - fz;
  auto at = [&](std::int64_t i, std::int64_t j, std::int64_t k) -> double {
    return v.contains(i, j, k) ? v.at(i, j, k) : 0.0;
  };
  if (tx == 0.0 && ty == 0.0 && tz == 0.0) return static_cast<float>(at(i0, j0, k0));
  double acc = 0.0;
  for (int di = 0; di < 2; ++di)
    for (int dj = 0; dj < 2; ++dj)
      for (int dk = 0; dk < 2; ++dk) {
        const double w = (di ? tx : 1.0 - tx) * (dj ? ty : 1.0 - ty) * (dk ? tz : 1.0 - tz);
        if (w != 0.0) acc += w * at(i0 + di, j0 + dj, k0 + dk);
      }
  return static_cast<float>(acc);
}

void refresh_presence(LabeledCase& lc) {
  for (std::size_t c = 0; c < lc.masks.size(); ++c) lc.present[c] = lc.masks[c].count_nonzero() > 0;
}

}  // namespace

LabeledCase apply_augment(const LabeledCase& lc, const AugmentParams& params) {
  const Shape3& s = lc.image.shape();
  LabeledCase out = lc;
  const double centre[3] = {(s.h - 1) / 2.0, (s.w - 1) / 2.0, (s.d - 1) / 2.0};
  for (std::int64_t i = 0; i < s.h; ++i)
    for (std::int64_t j = 0; j < s.w; ++j)
      for (std::int64_t k = 0; k < s.d; ++k) {
        const double p[3] = {static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
        double src[3];
        for (int a = 0; a < 3; ++a) src[a] = centre[a] + (p[a] - centre[a]) / params.zoom - params.shift[a];
        out.image.at(i, j, k) =
            static_cast<float>(params.scale * sample_trilinear(lc.image, src[0], src[1], src[2]));
        const auto ni = static_cast<std::int64_t>(std::floor(src[0] + 0.5));
        const auto nj = static_cast<std::int64_t>(std::floor(src[1] + 0.5));
        const auto nk = static_cast<std::int64_t>(std::floor(src[2] + 0.5));
        const bool inside = lc.image.contains(ni, nj, nk);
        for (std::size_t c = 0; c < lc.masks.size(); ++c) {
          out.masks[c].at(i, j, k) = inside ? lc.masks[c].at(ni, nj, nk) : 0.0F;
        }
      }
  refresh_presence(out);
  return out;
}

LabeledCase augment(const LabeledCase& lc, const AugmentRanges& ranges, std::uint64_t seed) {
  return apply_augment(lc, draw_augment(ranges, lc.image.shape(), seed));
}

LabeledCase crop_case(const LabeledCase& lc, const BoundingBox& box) {
  LabeledCase out;
  out.case_id = lc.case_id;
  out.seed = lc.seed;
  out.invasive = lc.invasive;
  out.image = crop(lc.image, box);
  for (const auto& m : lc.masks) out.masks.push_back(crop(m, box));
  out.present.assign(lc.masks.size(), false);
  refresh_presence(out);
  return out;
}

BoundingBox random_patch(Shape3 shape, Shape3 patch, std::uint64_t seed) {
  BoundingBox box;
  auto gen = rng::engine(seed);
  for (int a = 0; a < 3; ++a) {
    if (shape[a] < patch[a]) {
      throw ConfigError("case extent " + shape.str() + " is smaller than the patch " + patch.str());
    }
    box.lo[a] = std::uniform_int_distribution<std::int64_t>(0, shape[a] - patch[a])(gen);
    box.hi[a] = box.lo[a] + patch[a];
  }
  return box;
}

double learning_rate(const TrainConfig& config, int step) {
  const int total = std::max(config.steps, 1);
  const int warm = std::max(1, static_cast<int>(std::lround(config.warmup_fraction * total)));
  if (step < warm) return config.lr * static_cast<double>(step + 1) / warm;
  if (total <= warm) return config.lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return config.lr * std::pow(std::max(0.0, 1.0 - progress), config.poly_power);
}

nlohmann::json checkpoint_metadata(const TrainConfig& config, const Taxonomy& taxonomy, int step) {
  auto model = config.model;
  model.categories = taxonomy.size();
  return {{"model", model.to_json()},
          {"taxonomy", taxonomy.to_json()},
          {"patch", {config.patch.h, config.patch.w, config.patch.d}},
          {"step", step}};
}

namespace {

void save_atomically(const fs::path& out_dir, const torch::nn::Module& model, const nlohmann::json& meta) {
  const auto tmp = out_dir / "checkpoint.tmp";
  const auto dst = out_dir / "checkpoint";
  fs::remove_all(tmp);
  save_checkpoint(tmp, model, meta);
  fs::remove_all(dst);
  fs::rename(tmp, dst);
}

torch::Tensor stack_masks(const LabeledCase& lc) {
  std::vector<torch::Tensor> per;
  for (const auto& m : lc.masks) per.push_back(volume_to_tensor(m).squeeze(0).squeeze(0));
  return torch::stack(per);
}

}  // namespace

TrainResult train(const TrainConfig& config, const TrainData& data, const StepCallback& on_step) {
  config.validate();
  torch::set_num_threads(config.threads);
  const int n = data.taxonomy.size();
  if (data.cases.empty()) throw InputError("no training cases");
  for (const auto& c : data.cases) {
    if (static_cast<int>(c.masks.size()) != n) throw ShapeError("case " + c.case_id + " does not match the taxonomy");
  }
  ModelOptions mo = config.model;
  mo.categories = n;
  mo.init_seed = config.seed;

  TrainResult result;
  result.model = CatModel(mo);
  auto& model = result.model;
  model->train();
  PromptSource prompts(data, model);
  const GroupMask mask = make_group_mask(data.taxonomy, mo.flags);
  torch::optim::AdamW optimizer(model->trainable_parameters(),
                                torch::optim::AdamWOptions(config.lr).weight_decay(config.weight_decay));

  const bool persist = !config.out_dir.empty();
  std::ofstream log_file;
  if (persist) {
    fs::create_directories(config.out_dir);
    io::write_json(config.out_dir / "config.json", config.to_json());
    log_file.open(config.out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log_file) throw InputError("cannot write " + (config.out_dir / "train_log.jsonl").string());
    save_atomically(config.out_dir, *model, checkpoint_metadata(config, data.taxonomy, 0));
  }

  const auto seed = config.seed;
  for (int step = 0; step < config.steps; ++step) {
    const double lr = learning_rate(config, step);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
    }
    const auto s = static_cast<std::uint64_t>(step);
    std::vector<torch::Tensor> images, targets;
    std::vector<std::vector<bool>> present;
    std::vector<std::string> ids;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto bi = static_cast<std::uint64_t>(b);
      auto gen = rng::engine(seed, rng::Role::kCaseChoice, s, bi);
      const auto& src = data.cases[std::uniform_int_distribution<std::size_t>(0, data.cases.size() - 1)(gen)];
      LabeledCase patch =
          crop_case(src, random_patch(src.image.shape(), config.patch, rng::key(seed, rng::Role::kCrop, s, bi)));
      if (config.augment.enabled) patch = augment(patch, config.augment, rng::key(seed, rng::Role::kAugment, s, bi));
      images.push_back(volume_to_tensor(patch.image).squeeze(0));
      targets.push_back(stack_masks(patch));
      present.push_back(patch.present);
      ids.push_back(patch.case_id);
    }
    PromptBatch batch;
    if (mo.flags.anatomical) batch.anatomical = prompts.anatomical(ids, rng::key(seed, rng::Role::kAnatomicalPrompt, s));
    if (mo.flags.textual) batch.textual_bags = prompts.textual_bags(present, rng::key(seed, rng::Role::kTextualPrompt, s));
    auto present_t = torch::zeros({config.batch_size, n});
    for (int b = 0; b < config.batch_size; ++b)
      for (int c = 0; c < n; ++c) present_t[b][c] = present[b][c] ? 1.0 : 0.0;

    RefineContext ctx;
    ctx.seed = rng::key(seed, rng::Role::kGumbel, s);
    ctx.noise = config.gumbel_noise;
    const auto out = model->forward(torch::stack(images), batch, mask, ctx);

    nlohmann::json record = {{"step", step + 1}, {"lr", lr}};
    LossReport report;
    try {
      report = compute_losses(out, torch::stack(targets), present_t, config.losses);
    } catch (const NumericError& e) {
      record["abort"] = e.what();
      if (persist) log_file << record.dump() << '\n';
      throw;
    }
    optimizer.zero_grad();
    report.total.backward();
    if (config.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(model->trainable_parameters(), config.grad_clip);
    optimizer.step();

    record.update(report.to_json());
    result.log.push_back(record);
    result.steps_done = step + 1;
    if (persist) log_file << record.dump() << '\n';
    if (on_step) on_step(record);
    if (persist && (step + 1) % config.checkpoint_every == 0) {
      save_atomically(config.out_dir, *model, checkpoint_metadata(config, data.taxonomy, step + 1));
    }
  }
  if (persist) save_atomically(config.out_dir, *model, checkpoint_metadata(config, data.taxonomy, result.steps_done));

  if (config.evaluate_after_training) {
    model->eval();
    result.metrics = evaluate_model(model, prompts, data.taxonomy, data.cases, config.patch, config.threshold,
                                    config.hd_mode, config.seed);
    if (persist) {
      io::write_json(config.out_dir / "train_metrics.json", result.metrics->to_json());
      std::ofstream csv(config.out_dir / "train_metrics.csv", std::ios::trunc);
      csv << metrics_csv({{"train", *result.metrics}});
    }
  }
  return result;
}

}  // namespace catseg
