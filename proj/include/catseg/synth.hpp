#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "catseg/taxonomy.hpp"
#include "catseg/volume.hpp"

namespace catseg {

struct LabeledCase {
  Volume image;
  std::vector<Volume> masks;  // one binary volume per category
  std::string case_id;
  std::vector<bool> present;
  std::vector<bool> invasive;  // tumor voxels outside the host (T4 only)
  std::uint64_t seed = 0;
};

struct SynthOptions {
  Spacing spacing{0.8, 0.8, 1.5};
  double organ_radius_fraction = 0.2;  // of the smallest extent
  double t4_protrusion = 0.3;          // target fraction of tumor volume outside the host
  double noise_sigma = 0.03;
  double background = 0.05;
  double tumor_contrast = 0.3;
};

/// Intensity band centre of the k-th organ among `organ_count` organs.
double organ_intensity(int organ_rank, int organ_count);

/// Organs are unions of randomized ellipsoids placed on a ring around the
/// volume centre; each organ claims only voxels not claimed by an earlier one.
/// Tumors are smaller blobs seeded inside their host. Non-T4 tumors are
/// clipped to the host; T4 tumors are centred near the host boundary so that
/// roughly `t4_protrusion` of their volume lies outside it.
LabeledCase generate_case(const Taxonomy& taxonomy, Shape3 shape, std::uint64_t seed,
                          const SynthOptions& options = {}, std::string case_id = "case");

/// Case i gets id "<prefix>_NNNN" and seed derived from (base_seed, i).
std::vector<LabeledCase> generate_corpus(const Taxonomy& taxonomy, Shape3 shape, int count,
                                         std::uint64_t base_seed, const SynthOptions& options = {},
                                         const std::string& prefix = "case");

struct PromptEntry {
  Volume volume;
  std::string case_id;
  int category = 0;
  BoundingBox box;  // source box in the case's voxel grid
};

struct PromptBank {
  Shape3 prompt_shape;
  std::vector<std::vector<PromptEntry>> entries;  // [category][entry]
  std::vector<std::string> warnings;
};

PromptBank build_prompt_bank(std::span<const LabeledCase> cases, const Taxonomy& taxonomy,
                             Shape3 prompt_shape);

inline constexpr const char* kClassPlaceholder = "[CLS]";

struct TextCorpus {
  std::vector<std::string> long_descriptions;  // one per category
  std::vector<std::string> short_templates;    // each holds kClassPlaceholder once
};

/// Human-readable category name ("liver_tumor" -> "liver tumor").
std::string display_name(const std::string& category_name);

/// Replaces the placeholder in `templ` with the display name.
std::string instantiate_template(const std::string& templ, const std::string& category_name);

TextCorpus make_text_corpus(const Taxonomy& taxonomy, std::uint64_t seed);

}  // namespace catseg
