#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "catseg/taxonomy.hpp"

namespace testutil {

inline catseg::Taxonomy organs(int n) {
  nlohmann::json cats = nlohmann::json::array();
  for (int i = 0; i < n; ++i) cats.push_back({{"name", "organ" + std::to_string(i)}, {"kind", "organ"}});
  return catseg::Taxonomy::from_json({{"categories", cats}});
}

/// liver, kidney, spleen, liver_tumor (T2 in liver).
inline catseg::Taxonomy small_abdomen() {
  return catseg::Taxonomy::from_json(nlohmann::json::parse(R"({
    "categories": [
      {"name": "liver", "kind": "organ"},
      {"name": "kidney", "kind": "organ"},
      {"name": "spleen", "kind": "organ"},
      {"name": "liver_tumor", "kind": "tumor", "host": "liver", "stage": "T2"}
    ]})"));
}

inline catseg::Taxonomy organ_with_tumor(const std::string& stage) {
  return catseg::Taxonomy::from_json(nlohmann::json::parse(R"({
    "categories": [
      {"name": "colon", "kind": "organ"},
      {"name": "intestine", "kind": "organ"},
      {"name": "colon_tumor", "kind": "tumor", "host": "colon", "stage": ")" + stage + R"("}
    ]})"));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("catseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
