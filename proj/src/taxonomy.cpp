#include "catseg/taxonomy.hpp"

#include <set>

#include "catseg/errors.hpp"

namespace catseg {

std::string to_string(CategoryKind kind) {
  return kind == CategoryKind::kOrgan ? "organ" : "tumor";
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kT1: return "T1";
    case Stage::kT2: return "T2";
    case Stage::kT3: return "T3";
    case Stage::kT4: return "T4";
    case Stage::kNone: break;
  }
  return "";
}

Stage parse_stage(std::string_view text) {
  if (text.empty()) return Stage::kNone;
  if (text == "T1") return Stage::kT1;
  if (text == "T2") return Stage::kT2;
  if (text == "T3") return Stage::kT3;
  if (text == "T4") return Stage::kT4;
  throw ConfigError("unknown stage tag '" + std::string(text) + "'");
}

Taxonomy::Taxonomy(std::vector<Category> categories, std::vector<std::pair<int, int>> extra_links)
    : categories_(std::move(categories)), extra_links_(std::move(extra_links)) {
  if (categories_.empty()) throw ConfigError("taxonomy needs at least one category");
  std::set<std::string> seen;
  const int n = size();
  for (int i = 0; i < n; ++i) {
    const Category& c = categories_[static_cast<std::size_t>(i)];
    if (c.name.empty()) throw ConfigError("category " + std::to_string(i) + " has an empty name");
    if (!seen.insert(c.name).second) throw ConfigError("duplicate category name '" + c.name + "'");
    if (c.kind == CategoryKind::kTumor) {
      if (!c.host) throw ConfigError("tumor '" + c.name + "' has no host organ");
      const int h = *c.host;
      if (h < 0 || h >= i) {
        throw ConfigError("host of tumor '" + c.name + "' must be an earlier category");
      }
      if (categories_[static_cast<std::size_t>(h)].kind != CategoryKind::kOrgan) {
        throw ConfigError("host of tumor '" + c.name + "' is not an organ");
      }
    } else {
      if (c.host) throw ConfigError("organ '" + c.name + "' cannot have a host");
      if (c.stage != Stage::kNone) throw ConfigError("organ '" + c.name + "' cannot carry a stage");
    }
  }
  for (const auto& [a, b] : extra_links_) {
    if (a < 0 || a >= n || b < 0 || b >= n) {
      throw ConfigError("extra link references a category outside the taxonomy");
    }
    if (a == b) throw ConfigError("extra link from a category to itself");
  }
}

int Taxonomy::index_of(std::string_view name) const {
  for (int i = 0; i < size(); ++i) {
    if (categories_[static_cast<std::size_t>(i)].name == name) return i;
  }
  throw ConfigError("unknown category '" + std::string(name) + "'");
}

std::vector<std::string> Taxonomy::names() const {
  std::vector<std::string> out;
  out.reserve(categories_.size());
  for (const auto& c : categories_) out.push_back(c.name);
  return out;
}

Taxonomy Taxonomy::from_json(const nlohmann::json& j) {
  if (!j.contains("categories") || !j["categories"].is_array()) {
    throw ConfigError("taxonomy JSON needs a 'categories' array");
  }
  std::vector<std::string> names;
  for (const auto& c : j["categories"]) names.push_back(c.at("name").get<std::string>());
  auto lookup = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return static_cast<int>(i);
    }
    throw ConfigError("taxonomy references unknown category '" + name + "'");
  };

  std::vector<Category> categories;
  for (const auto& c : j["categories"]) {
    Category cat;
    cat.name = c.at("name").get<std::string>();
    const std::string kind = c.value("kind", "organ");
    if (kind == "organ") {
      cat.kind = CategoryKind::kOrgan;
    } else if (kind == "tumor") {
      cat.kind = CategoryKind::kTumor;
    } else {
      throw ConfigError("category '" + cat.name + "' has unknown kind '" + kind + "'");
    }
    if (c.contains("host") && !c["host"].is_null()) cat.host = lookup(c["host"].get<std::string>());
    cat.stage = parse_stage(c.value("stage", ""));
    categories.push_back(std::move(cat));
  }
  std::vector<std::pair<int, int>> links;
  if (j.contains("extra_links")) {
    for (const auto& l : j["extra_links"]) {
      if (!l.is_array() || l.size() != 2) throw ConfigError("extra link must be a [from, to] pair");
      links.emplace_back(lookup(l[0].get<std::string>()), lookup(l[1].get<std::string>()));
    }
  }
  return Taxonomy(std::move(categories), std::move(links));
}

nlohmann::json Taxonomy::to_json() const {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : categories_) {
    nlohmann::json e{{"name", c.name}, {"kind", to_string(c.kind)}};
    if (c.host) e["host"] = categories_[static_cast<std::size_t>(*c.host)].name;
    if (c.stage != Stage::kNone) e["stage"] = to_string(c.stage);
    cats.push_back(std::move(e));
  }
  nlohmann::json j{{"categories", cats}};
  if (!extra_links_.empty()) {
    nlohmann::json links = nlohmann::json::array();
    for (const auto& [a, b] : extra_links_) links.push_back({(*this)[a].name, (*this)[b].name});
    j["extra_links"] = links;
  }
  return j;
}

}  // namespace catseg
