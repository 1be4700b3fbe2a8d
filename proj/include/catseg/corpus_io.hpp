#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "catseg/synth.hpp"
#include "catseg/taxonomy.hpp"
#include "catseg/volume.hpp"

// On-disk layout:
//   corpus/<case_id>/{image.raw, mask_<k>.raw, meta.json}
//   bank/<category>/<case_id>.raw + bank/index.json
//   text corpus: one JSON file
// Every .raw blob is little-endian float32 in row-major (h, w, d) order.
namespace catseg::io {

namespace fs = std::filesystem;

void write_raw(const fs::path& path, std::span<const float> values);
std::vector<float> read_raw(const fs::path& path, std::int64_t expected_count);

nlohmann::json read_json(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& j);

Taxonomy read_taxonomy(const fs::path& path);

void write_case(const fs::path& corpus_root, const LabeledCase& lc, const Taxonomy& taxonomy);
/// Reads one case directory; category names in meta.json must match the taxonomy.
LabeledCase read_case(const fs::path& case_dir, const Taxonomy& taxonomy);
/// Case directories (those holding meta.json) sorted by name.
std::vector<fs::path> list_cases(const fs::path& corpus_root);
std::vector<LabeledCase> read_corpus(const fs::path& corpus_root, const Taxonomy& taxonomy);

void write_bank(const fs::path& bank_root, const PromptBank& bank, const Taxonomy& taxonomy);
PromptBank read_bank(const fs::path& bank_root, const Taxonomy& taxonomy);

void write_text_corpus(const fs::path& path, const TextCorpus& corpus, const Taxonomy& taxonomy);
TextCorpus read_text_corpus(const fs::path& path, const Taxonomy& taxonomy);

}  // namespace catseg::io
