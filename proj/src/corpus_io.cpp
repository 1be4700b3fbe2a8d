#include "catseg/corpus_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "catseg/errors.hpp"

namespace catseg::io {
namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffU) << 24) | ((v & 0xff00U) << 8) | ((v >> 8) & 0xff00U) | (v >> 24);
  }
}

nlohmann::json shape_json(const Shape3& s) { return {s.h, s.w, s.d}; }
Shape3 shape_from(const nlohmann::json& j) {
  return {j.at(0).get<std::int64_t>(), j.at(1).get<std::int64_t>(), j.at(2).get<std::int64_t>()};
}

void check_names(const nlohmann::json& names, const Taxonomy& taxonomy, const fs::path& where) {
  if (names.get<std::vector<std::string>>() != taxonomy.names()) {
    throw ConfigError(where.string() + ": category list does not match the taxonomy");
  }
}

}  // namespace

void write_raw(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    words[i] = to_little(std::bit_cast<std::uint32_t>(values[i]));
  }
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<float> read_raw(const fs::path& path, std::int64_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<std::uint32_t> words(static_cast<std::size_t>(expected_count));
  in.read(reinterpret_cast<char*>(words.data()),
          static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (in.gcount() != static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)) ||
      in.peek() != std::ifstream::traits_type::eof()) {
    throw ShapeError(path.string() + ": expected " + std::to_string(expected_count) + " floats");
  }
  std::vector<float> values(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    values[i] = std::bit_cast<float>(to_little(words[i]));
  }
  return values;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

Taxonomy read_taxonomy(const fs::path& path) { return Taxonomy::from_json(read_json(path)); }

void write_case(const fs::path& corpus_root, const LabeledCase& lc, const Taxonomy& taxonomy) {
  const fs::path dir = corpus_root / lc.case_id;
  fs::create_directories(dir);
  write_raw(dir / "image.raw", lc.image.data());
  nlohmann::json stages = nlohmann::json::array();
  for (int c = 0; c < taxonomy.size(); ++c) {
    write_raw(dir / ("mask_" + std::to_string(c) + ".raw"), lc.masks[static_cast<std::size_t>(c)].data());
    stages.push_back(to_string(taxonomy[c].stage));
  }
  const Spacing& sp = lc.image.spacing();
  nlohmann::json meta{
      {"case_id", lc.case_id},
      {"shape", shape_json(lc.image.shape())},
      {"spacing", {sp.x, sp.y, sp.z}},
      {"categories", taxonomy.names()},
      {"present", lc.present},
      {"invasive", lc.invasive},
      {"stage", stages},
      {"seed", lc.seed},
  };
  write_json(dir / "meta.json", meta);
}

LabeledCase read_case(const fs::path& case_dir, const Taxonomy& taxonomy) {
  const nlohmann::json meta = read_json(case_dir / "meta.json");
  check_names(meta.at("categories"), taxonomy, case_dir);
  const Shape3 shape = shape_from(meta.at("shape"));
  const auto& sp = meta.at("spacing");
  const Spacing spacing{sp.at(0).get<double>(), sp.at(1).get<double>(), sp.at(2).get<double>()};

  LabeledCase lc;
  lc.case_id = meta.at("case_id").get<std::string>();
  lc.seed = meta.value("seed", std::uint64_t{0});
  lc.image = Volume(shape, spacing, read_raw(case_dir / "image.raw", shape.voxels()));
  for (int c = 0; c < taxonomy.size(); ++c) {
    lc.masks.emplace_back(shape, spacing,
                          read_raw(case_dir / ("mask_" + std::to_string(c) + ".raw"), shape.voxels()));
    lc.present.push_back(lc.masks.back().count_nonzero() > 0);
  }
  lc.invasive = meta.value("invasive", std::vector<bool>(static_cast<std::size_t>(taxonomy.size()), false));
  return lc;
}

std::vector<fs::path> list_cases(const fs::path& corpus_root) {
  if (!fs::is_directory(corpus_root)) throw InputError("no corpus directory " + corpus_root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(corpus_root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

std::vector<LabeledCase> read_corpus(const fs::path& corpus_root, const Taxonomy& taxonomy) {
  std::vector<LabeledCase> cases;
  for (const auto& dir : list_cases(corpus_root)) cases.push_back(read_case(dir, taxonomy));
  return cases;
}

void write_bank(const fs::path& bank_root, const PromptBank& bank, const Taxonomy& taxonomy) {
  fs::create_directories(bank_root);
  nlohmann::json entries = nlohmann::json::array();
  for (int c = 0; c < taxonomy.size(); ++c) {
    const fs::path dir = bank_root / taxonomy[c].name;
    fs::create_directories(dir);
    for (const PromptEntry& e : bank.entries[static_cast<std::size_t>(c)]) {
      const std::string file = taxonomy[c].name + "/" + e.case_id + ".raw";
      write_raw(bank_root / file, e.volume.data());
      entries.push_back({{"category", taxonomy[c].name},
                         {"case_id", e.case_id},
                         {"file", file},
                         {"box_lo", e.box.lo},
                         {"box_hi", e.box.hi},
                         {"spacing", {e.volume.spacing().x, e.volume.spacing().y, e.volume.spacing().z}}});
    }
  }
  write_json(bank_root / "index.json", {{"prompt_shape", shape_json(bank.prompt_shape)},
                                        {"categories", taxonomy.names()},
                                        {"entries", entries},
                                        {"warnings", bank.warnings}});
}

PromptBank read_bank(const fs::path& bank_root, const Taxonomy& taxonomy) {
  const nlohmann::json index = read_json(bank_root / "index.json");
  check_names(index.at("categories"), taxonomy, bank_root);
  PromptBank bank;
  bank.prompt_shape = shape_from(index.at("prompt_shape"));
  bank.entries.resize(static_cast<std::size_t>(taxonomy.size()));
  bank.warnings = index.value("warnings", std::vector<std::string>{});
  for (const auto& e : index.at("entries")) {
    PromptEntry entry;
    entry.category = taxonomy.index_of(e.at("category").get<std::string>());
    entry.case_id = e.at("case_id").get<std::string>();
    entry.box.lo = e.at("box_lo").get<std::array<std::int64_t, 3>>();
    entry.box.hi = e.at("box_hi").get<std::array<std::int64_t, 3>>();
    Spacing spacing;
    if (e.contains("spacing")) {
      const auto sp = e.at("spacing").get<std::array<double, 3>>();
      spacing = {sp[0], sp[1], sp[2]};
    }
    entry.volume = Volume(bank.prompt_shape, spacing,
                          read_raw(bank_root / e.at("file").get<std::string>(),
                                   bank.prompt_shape.voxels()));
    bank.entries[static_cast<std::size_t>(entry.category)].push_back(std::move(entry));
  }
  return bank;
}

void write_text_corpus(const fs::path& path, const TextCorpus& corpus, const Taxonomy& taxonomy) {
  nlohmann::json longs = nlohmann::json::object();
  for (int c = 0; c < taxonomy.size(); ++c) {
    longs[taxonomy[c].name] = corpus.long_descriptions.at(static_cast<std::size_t>(c));
  }
  write_json(path, {{"categories", taxonomy.names()},
                    {"long_descriptions", longs},
                    {"short_templates", corpus.short_templates}});
}

TextCorpus read_text_corpus(const fs::path& path, const Taxonomy& taxonomy) {
  const nlohmann::json j = read_json(path);
  TextCorpus corpus;
  for (int c = 0; c < taxonomy.size(); ++c) {
    const auto& longs = j.at("long_descriptions");
    if (!longs.contains(taxonomy[c].name)) {
      throw ConfigError(path.string() + ": no long description for '" + taxonomy[c].name + "'");
    }
    corpus.long_descriptions.push_back(longs.at(taxonomy[c].name).get<std::string>());
  }
  corpus.short_templates = j.at("short_templates").get<std::vector<std::string>>();
  if (corpus.short_templates.empty()) throw ConfigError(path.string() + ": no short templates");
  return corpus;
}

}  // namespace catseg::io
