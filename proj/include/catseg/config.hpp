#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "catseg/metrics.hpp"
#include "catseg/model.hpp"
#include "catseg/volume.hpp"

namespace catseg {

struct AugmentRanges {
  bool enabled = true;
  double shift = 0.25;  // max |shift| as a fraction of the patch extent, per axis
  double zoom_min = 0.8;
  double zoom_max = 1.2;
  double scale_min = 0.9;  // intensity multiplier
  double scale_max = 1.1;

  void validate() const;
  /// All ranges collapsed to the identity transform.
  static AugmentRanges identity();
};

struct TrainConfig {
  std::filesystem::path taxonomy;
  std::filesystem::path corpus;
  std::filesystem::path bank;
  std::filesystem::path text_corpus;
  std::filesystem::path out_dir;  // empty: keep everything in memory

  Shape3 patch{32, 32, 32};
  int batch_size = 1;
  int steps = 2000;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double warmup_fraction = 0.05;
  double poly_power = 0.9;
  double grad_clip = 0.0;  // max global gradient norm, 0 = off
  std::uint64_t seed = 0;
  int threads = 1;
  int checkpoint_every = 500;
  bool gumbel_noise = true;

  double threshold = 0.5;
  HdMode hd_mode = HdMode::kPooled;
  bool evaluate_after_training = true;

  AugmentRanges augment;
  LossOptions losses;
  ModelOptions model;  // `categories` is filled from the taxonomy

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Applies "--key=value" overrides to a config document. Dotted keys address
/// nested objects ("augment.shift"). Values are parsed as JSON when possible,
/// otherwise taken as strings. Unknown keys raise ConfigError.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides);

/// Default config document, listing every recognised key.
nlohmann::json default_config_json();

/// Reads the file (if non-empty), applies overrides and validates.
TrainConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

}  // namespace catseg
