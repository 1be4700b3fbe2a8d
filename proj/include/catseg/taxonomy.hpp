#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace catseg {

enum class CategoryKind { kOrgan, kTumor };

/// Tumor T-stage. kNone for organs and unstaged tumors.
enum class Stage { kNone, kT1, kT2, kT3, kT4 };

std::string to_string(CategoryKind kind);
std::string to_string(Stage stage);
Stage parse_stage(std::string_view text);

struct Category {
  std::string name;
  CategoryKind kind = CategoryKind::kOrgan;
  std::optional<int> host;  // index of the host organ, tumors only
  Stage stage = Stage::kNone;
};

/// Ordered category list; row i of every per-category structure refers to
/// category i. Hosts precede their tumors.
class Taxonomy {
 public:
  Taxonomy() = default;
  explicit Taxonomy(std::vector<Category> categories,
                    std::vector<std::pair<int, int>> extra_links = {});

  /// {"categories": [{"name", "kind", "host"?, "stage"?}], "extra_links"?: [[a, b]]}
  /// Hosts and links are given by name.
  static Taxonomy from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  int size() const { return static_cast<int>(categories_.size()); }
  const Category& operator[](int i) const { return categories_.at(static_cast<std::size_t>(i)); }
  const std::vector<Category>& categories() const { return categories_; }
  const std::vector<std::pair<int, int>>& extra_links() const { return extra_links_; }
  bool is_tumor(int i) const { return (*this)[i].kind == CategoryKind::kTumor; }

  /// Throws ConfigError for unknown names.
  int index_of(std::string_view name) const;
  std::vector<std::string> names() const;

 private:
  std::vector<Category> categories_;
  std::vector<std::pair<int, int>> extra_links_;
};

}  // namespace catseg
