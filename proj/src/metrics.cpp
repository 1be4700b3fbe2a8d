#include "catseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "catseg/errors.hpp"

namespace catseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_grid(const Volume& a, const Volume& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("mask shapes differ: " + a.shape().str() + " vs " + b.shape().str());
  }
  if (!(a.spacing() == b.spacing())) throw ShapeError("mask spacings differ");
}

// Exact 1D squared distance along a line of `n` samples with stride `stride`,
// sample spacing `s`. Lower envelope of parabolas over finite entries only.
void edt_line(std::vector<double>& f, std::int64_t offset, std::int64_t stride, std::int64_t n, double s,
              std::vector<double>& in, std::vector<std::int64_t>& v, std::vector<double>& z) {
  const double s2 = s * s;
  for (std::int64_t q = 0; q < n; ++q) in[q] = f[offset + q * stride];
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    if (in[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double cut = 0.0;
    for (;;) {
      const auto p = v[k];
      cut = ((in[q] + s2 * q * q) - (in[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
      if (cut > z[k]) break;
      if (--k < 0) break;
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf : cut;
    z[k + 1] = kInf;
  }
  if (k < 0) return;  // no finite site on this line
  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double d = s * static_cast<double>(q - v[j]);
    f[offset + q * stride] = d * d + in[v[j]];
  }
}

std::vector<double> directed(const std::vector<std::array<std::int64_t, 3>>& from, const std::vector<double>& dist2,
                             const Volume& grid) {
  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& p : from) out.push_back(std::sqrt(dist2[grid.index(p[0], p[1], p[2])]));
  return out;
}

Volume surface_mask(const Volume& mask) {
  Volume out(mask.shape(), mask.spacing(), 0.0F);
  for (const auto& p : surface_voxels(mask)) out.at(p[0], p[1], p[2]) = 1.0F;
  return out;
}

}  // namespace

double dsc(const Volume& pred, const Volume& gt) {
  if (!(pred.shape() == gt.shape())) {
    throw ShapeError("mask shapes differ: " + pred.shape().str() + " vs " + gt.shape().str());
  }
  std::int64_t a = 0, b = 0, both = 0;
  const auto pa = pred.data();
  const auto pb = gt.data();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const bool x = pa[i] != 0.0F;
    const bool y = pb[i] != 0.0F;
    a += x;
    b += y;
    both += x && y;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::vector<std::array<std::int64_t, 3>> surface_voxels(const Volume& mask) {
  const Shape3& s = mask.shape();
  static constexpr int kSteps[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  std::vector<std::array<std::int64_t, 3>> out;
  for (std::int64_t i = 0; i < s.h; ++i)
    for (std::int64_t j = 0; j < s.w; ++j)
      for (std::int64_t k = 0; k < s.d; ++k) {
        if (mask.at(i, j, k) == 0.0F) continue;
        for (const auto& st : kSteps) {
          const auto a = i + st[0], b = j + st[1], c = k + st[2];
          if (!mask.contains(a, b, c) || mask.at(a, b, c) == 0.0F) {
            out.push_back({i, j, k});
            break;
          }
        }
      }
  return out;
}

std::vector<double> squared_distance_transform(const Volume& sites, const Spacing& spacing) {
  const Shape3& s = sites.shape();
  std::vector<double> f(static_cast<std::size_t>(s.voxels()));
  const auto data = sites.data();
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = data[i] != 0.0F ? 0.0 : kInf;
  const std::int64_t longest = std::max({s.h, s.w, s.d});
  std::vector<double> in(longest), z(longest + 1);
  std::vector<std::int64_t> v(longest);
  for (std::int64_t j = 0; j < s.w; ++j)
    for (std::int64_t k = 0; k < s.d; ++k) edt_line(f, sites.index(0, j, k), s.w * s.d, s.h, spacing.x, in, v, z);
  for (std::int64_t i = 0; i < s.h; ++i)
    for (std::int64_t k = 0; k < s.d; ++k) edt_line(f, sites.index(i, 0, k), s.d, s.w, spacing.y, in, v, z);
  for (std::int64_t i = 0; i < s.h; ++i)
    for (std::int64_t j = 0; j < s.w; ++j) edt_line(f, sites.index(i, j, 0), 1, s.d, spacing.z, in, v, z);
  return f;
}

double percentile(std::vector<double>& values, double q) {
  if (values.empty()) throw InputError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> hd95(const Volume& pred, const Volume& gt, HdMode mode) {
  require_same_grid(pred, gt);
  const auto sp = surface_voxels(pred);
  const auto sg = surface_voxels(gt);
  if (sp.empty() || sg.empty()) return std::nullopt;
  auto p2g = directed(sp, squared_distance_transform(surface_mask(gt), gt.spacing()), gt);
  auto g2p = directed(sg, squared_distance_transform(surface_mask(pred), pred.spacing()), pred);
  if (mode == HdMode::kDirectionalMax) return std::max(percentile(p2g, 0.95), percentile(g2p, 0.95));
  p2g.insert(p2g.end(), g2p.begin(), g2p.end());
  return percentile(p2g, 0.95);
}

std::optional<double> hausdorff(const Volume& pred, const Volume& gt) {
  require_same_grid(pred, gt);
  const auto sp = surface_voxels(pred);
  const auto sg = surface_voxels(gt);
  if (sp.empty() || sg.empty()) return std::nullopt;
  const auto p2g = directed(sp, squared_distance_transform(surface_mask(gt), gt.spacing()), gt);
  const auto g2p = directed(sg, squared_distance_transform(surface_mask(pred), pred.spacing()), pred);
  return std::max(*std::max_element(p2g.begin(), p2g.end()), *std::max_element(g2p.begin(), g2p.end()));
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

MetricsReport aggregate_cases(std::vector<CaseMetrics> table, const Taxonomy& taxonomy) {
  if (table.empty()) throw InputError("no cases to aggregate");
  std::stable_sort(table.begin(), table.end(),
                   [](const CaseMetrics& a, const CaseMetrics& b) { return a.case_id < b.case_id; });
  const int n = taxonomy.size();
  std::vector<std::vector<double>> dscs(n), hds(n);
  std::vector<int> undefined(n, 0);
  std::map<std::string, std::vector<double>> stage_dsc;
  for (const auto& m : table) {
    const int k = taxonomy.index_of(m.category);
    dscs[k].push_back(m.dsc);
    if (m.hd95) {
      hds[k].push_back(*m.hd95);
    } else {
      ++undefined[k];
    }
    if (taxonomy.is_tumor(k) && taxonomy[k].stage != Stage::kNone) {
      stage_dsc[to_string(taxonomy[k].stage)].push_back(m.dsc);
    }
  }
  MetricsReport report;
  report.categories = taxonomy.names();
  for (int k = 0; k < n; ++k) {
    report.per_category[taxonomy[k].name] = {summarize(dscs[k]), summarize(hds[k]), undefined[k]};
  }
  for (const auto& [stage, values] : stage_dsc) report.per_stage[stage] = summarize(values);
  report.case_table = std::move(table);
  return report;
}

MetricsReport evaluate(std::vector<EvaluatedCase> cases, const Taxonomy& taxonomy, double threshold,
                       HdMode mode) {
  if (cases.empty()) throw InputError("no cases to evaluate");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  const int n = taxonomy.size();
  std::vector<CaseMetrics> table;
  for (const auto& c : cases) {
    if (static_cast<int>(c.probabilities.size()) != n || static_cast<int>(c.truth.masks.size()) != n) {
      throw ShapeError("case " + c.truth.case_id + " does not carry one volume per category");
    }
    for (int k = 0; k < n; ++k) {
      const Volume pred = binarize(c.probabilities[k], static_cast<float>(threshold));
      table.push_back({c.truth.case_id, taxonomy[k].name, dsc(pred, c.truth.masks[k]),
                       hd95(pred, c.truth.masks[k], mode)});
    }
  }
  return aggregate_cases(std::move(table), taxonomy);
}

nlohmann::json MetricsReport::to_json() const {
  auto summary = [](const Summary& s) { return nlohmann::json{{"mean", s.mean}, {"sd", s.sd}, {"n", s.count}}; };
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& name : categories) {
    const auto& m = per_category.at(name);
    cats.push_back({{"name", name},
                    {"dsc", summary(m.dsc)},
                    {"hd95", summary(m.hd95)},
                    {"hd95_undefined", m.hd95_undefined}});
  }
  nlohmann::json stages = nlohmann::json::object();
  for (const auto& [stage, s] : per_stage) stages[stage] = summary(s);
  nlohmann::json table = nlohmann::json::array();
  for (const auto& c : case_table) {
    table.push_back({{"case_id", c.case_id},
                     {"category", c.category},
                     {"dsc", c.dsc},
                     {"hd95", c.hd95 ? nlohmann::json(*c.hd95) : nlohmann::json(nullptr)}});
  }
  return {{"per_category", cats}, {"per_stage", stages}, {"case_table", table}};
}

std::string metrics_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  if (rows.empty()) return "";
  std::ostringstream out;
  out << std::setprecision(6) << std::fixed;
  const auto& cats = rows.front().second.categories;
  out << "config";
  for (const auto& c : cats) out << ',' << c << " DSC," << c << " HD95";
  out << '\n';
  for (const auto& [label, report] : rows) {
    if (report.categories != cats) throw ShapeError("metrics rows disagree on categories");
    out << label;
    for (const auto& c : cats) {
      const auto& m = report.per_category.at(c);
      out << ',' << m.dsc.mean << ',';
      if (m.hd95.count > 0) out << m.hd95.mean;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace catseg
