#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "catseg/synth.hpp"
#include "catseg/taxonomy.hpp"
#include "catseg/volume.hpp"

namespace catseg {

/// 2|a & b| / (|a| + |b|); 1 when both are empty. Nonzero voxels count as foreground.
double dsc(const Volume& pred, const Volume& gt);

enum class HdMode {
  kPooled,       // percentile of both directed distance sets merged
  kDirectionalMax  // max of the two directed percentiles
};

/// Foreground voxels with a 6-neighbour that is background or outside the grid.
std::vector<std::array<std::int64_t, 3>> surface_voxels(const Volume& mask);

/// Squared Euclidean distance (mm^2) from every voxel to the nearest voxel of
/// `sites`, exact for anisotropic spacing. +inf everywhere if `sites` is empty.
std::vector<double> squared_distance_transform(const Volume& sites, const Spacing& spacing);

/// Linear interpolation between order statistics: rank q * (n - 1). Sorts in place.
double percentile(std::vector<double>& values, double q);

/// 95th percentile surface distance in mm; nullopt when either mask is empty.
std::optional<double> hd95(const Volume& pred, const Volume& gt, HdMode mode = HdMode::kPooled);
/// Maximum surface distance in mm; nullopt when either mask is empty.
std::optional<double> hausdorff(const Volume& pred, const Volume& gt);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // population
  int count = 0;
};
Summary summarize(const std::vector<double>& values);

struct CaseMetrics {
  std::string case_id;
  std::string category;
  double dsc = 0.0;
  std::optional<double> hd95;
};

struct CategoryMetrics {
  Summary dsc;
  Summary hd95;
  int hd95_undefined = 0;
};

struct MetricsReport {
  std::vector<std::string> categories;
  std::map<std::string, CategoryMetrics> per_category;
  std::map<std::string, Summary> per_stage;  // DSC of staged tumor categories, keyed "T1".."T4"
  std::vector<CaseMetrics> case_table;       // sorted by (case_id, category order)

  nlohmann::json to_json() const;
};

struct EvaluatedCase {
  std::vector<Volume> probabilities;  // one per category, values in [0, 1]
  LabeledCase truth;
};

/// Aggregates a case table: per-category summaries over defined values and
/// per-stage DSC for staged tumor categories. Rows are sorted by case_id.
MetricsReport aggregate_cases(std::vector<CaseMetrics> table, const Taxonomy& taxonomy);

/// Binarizes at `threshold` (strictly greater is foreground), scores every
/// (case, category) and aggregates in case_id order.
MetricsReport evaluate(std::vector<EvaluatedCase> cases, const Taxonomy& taxonomy,
                       double threshold = 0.5, HdMode mode = HdMode::kPooled);

/// One row per labelled report, columns "<category> DSC", "<category> HD95" in taxonomy order.
std::string metrics_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace catseg
