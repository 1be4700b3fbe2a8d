#include "catseg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "catseg/errors.hpp"
#include "catseg/rng.hpp"

namespace catseg {
namespace {

using Vec3 = std::array<double, 3>;

struct Ellipsoid {
  Vec3 center;
  Vec3 radii;

  bool contains(double i, double j, double k) const {
    const double a = (i - center[0]) / radii[0];
    const double b = (j - center[1]) / radii[1];
    const double c = (k - center[2]) / radii[2];
    return a * a + b * b + c * c <= 1.0;
  }
};

double uniform(std::mt19937_64& gen, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(gen);
}

/// Main ellipsoid plus `lobes` smaller ones offset from its centre.
std::vector<Ellipsoid> random_blob(std::mt19937_64& gen, const Vec3& center, double radius,
                                   int lobes) {
  std::vector<Ellipsoid> parts;
  parts.push_back({center,
                   {radius * uniform(gen, 0.85, 1.15), radius * uniform(gen, 0.85, 1.15),
                    radius * uniform(gen, 0.85, 1.15)}});
  for (int l = 0; l < lobes; ++l) {
    Vec3 c = center;
    for (double& x : c) x += radius * uniform(gen, -0.5, 0.5);
    const double r = radius * uniform(gen, 0.5, 0.75);
    parts.push_back({c, {r * uniform(gen, 0.85, 1.15), r * uniform(gen, 0.85, 1.15),
                         r * uniform(gen, 0.85, 1.15)}});
  }
  return parts;
}

bool blob_contains(const std::vector<Ellipsoid>& blob, double i, double j, double k) {
  return std::any_of(blob.begin(), blob.end(),
                     [&](const Ellipsoid& e) { return e.contains(i, j, k); });
}

Vec3 centroid(const Volume& mask) {
  Vec3 sum{0, 0, 0};
  double n = 0;
  const Shape3& s = mask.shape();
  for (std::int64_t i = 0; i < s.h; ++i)
    for (std::int64_t j = 0; j < s.w; ++j)
      for (std::int64_t k = 0; k < s.d; ++k)
        if (mask.at(i, j, k) != 0.0F) {
          sum[0] += static_cast<double>(i);
          sum[1] += static_cast<double>(j);
          sum[2] += static_cast<double>(k);
          n += 1;
        }
  if (n == 0) return sum;
  return {sum[0] / n, sum[1] / n, sum[2] / n};
}

double stage_radius_fraction(Stage stage) {
  switch (stage) {
    case Stage::kT1: return 0.35;
    case Stage::kT2: return 0.45;
    case Stage::kT3: return 0.55;
    case Stage::kT4: return 0.55;
    case Stage::kNone: break;
  }
  return 0.45;
}

/// True when every voxel within `radius` of (i,j,k) lies in the mask.
bool ball_inside(const Volume& mask, std::int64_t i, std::int64_t j, std::int64_t k,
                 double radius) {
  const auto r = static_cast<std::int64_t>(std::ceil(radius));
  for (std::int64_t a = -r; a <= r; ++a)
    for (std::int64_t b = -r; b <= r; ++b)
      for (std::int64_t c = -r; c <= r; ++c) {
        if (static_cast<double>(a * a + b * b + c * c) > radius * radius) continue;
        if (!mask.contains(i + a, j + b, k + c) || mask.at(i + a, j + b, k + c) == 0.0F) {
          return false;
        }
      }
  return true;
}

}  // namespace

double organ_intensity(int organ_rank, int organ_count) {
  if (organ_count <= 1) return 0.6;
  return 0.35 + 0.5 * static_cast<double>(organ_rank) / static_cast<double>(organ_count - 1);
}

LabeledCase generate_case(const Taxonomy& taxonomy, Shape3 shape, std::uint64_t seed,
                          const SynthOptions& options, std::string case_id) {
  if (shape.h < 16 || shape.w < 16 || shape.d < 16) {
    throw ShapeError("case shape must be at least 16 along every axis, got " + shape.str());
  }
  const int n = taxonomy.size();
  auto gen = rng::engine(seed, rng::Role::kCaseSeed);

  LabeledCase out;
  out.case_id = std::move(case_id);
  out.seed = seed;
  out.image = Volume(shape, options.spacing, static_cast<float>(options.background));
  out.masks.assign(static_cast<std::size_t>(n), Volume(shape, options.spacing));
  out.present.assign(static_cast<std::size_t>(n), false);
  out.invasive.assign(static_cast<std::size_t>(n), false);

  std::vector<int> organs;
  for (int c = 0; c < n; ++c)
    if (!taxonomy.is_tumor(c)) organs.push_back(c);
  const int organ_count = static_cast<int>(organs.size());

  const double extent = static_cast<double>(std::min({shape.h, shape.w, shape.d}));
  const Vec3 mid{0.5 * static_cast<double>(shape.h - 1), 0.5 * static_cast<double>(shape.w - 1),
                 0.5 * static_cast<double>(shape.d - 1)};
  const double ring = organ_count > 1 ? 0.25 * extent : 0.0;
  double base_radius = options.organ_radius_fraction * extent;
  if (organ_count > 1) {
    const double chord = 2.0 * ring * std::sin(std::numbers::pi / organ_count);
    base_radius = std::min(base_radius, 0.5 * chord);
  }

  std::vector<float> intensity(static_cast<std::size_t>(n), 0.0F);
  const double phase = uniform(gen, 0.0, 2.0 * std::numbers::pi);
  Volume claimed(shape, options.spacing);
  for (int rank = 0; rank < organ_count; ++rank) {
    const int c = organs[static_cast<std::size_t>(rank)];
    const Category& cat = taxonomy[c];
    const double radius = base_radius * uniform(gen, 0.9, 1.1);
    if (radius < 2.0) {
      throw GenerationError("shape " + shape.str() + " too small to fit organ '" + cat.name + "'");
    }
    const double angle = phase + 2.0 * std::numbers::pi * rank / std::max(1, organ_count) +
                         uniform(gen, -0.2, 0.2);
    const Vec3 center{mid[0] + ring * std::cos(angle) + uniform(gen, -1.0, 1.0),
                      mid[1] + ring * std::sin(angle) + uniform(gen, -1.0, 1.0),
                      mid[2] + 0.1 * extent * uniform(gen, -1.0, 1.0)};
    const auto blob = random_blob(gen, center, radius, 2);
    const float level =
        static_cast<float>(organ_intensity(rank, organ_count) + uniform(gen, -0.03, 0.03));
    intensity[static_cast<std::size_t>(c)] = level;

    Volume& mask = out.masks[static_cast<std::size_t>(c)];
    for (std::int64_t i = 0; i < shape.h; ++i)
      for (std::int64_t j = 0; j < shape.w; ++j)
        for (std::int64_t k = 0; k < shape.d; ++k) {
          if (claimed.at(i, j, k) != 0.0F) continue;
          if (!blob_contains(blob, static_cast<double>(i), static_cast<double>(j),
                             static_cast<double>(k)))
            continue;
          mask.at(i, j, k) = 1.0F;
          claimed.at(i, j, k) = 1.0F;
          out.image.at(i, j, k) = level;
        }
    if (mask.count_nonzero() < 8) {
      throw GenerationError("shape " + shape.str() + " too small to fit organ '" + cat.name + "'");
    }
  }

  for (int c = 0; c < n; ++c) {
    if (!taxonomy.is_tumor(c)) continue;
    const Category& cat = taxonomy[c];
    const int host = *cat.host;
    const Volume& host_mask = out.masks[static_cast<std::size_t>(host)];
    const auto host_count = static_cast<double>(host_mask.count_nonzero());
    const double host_radius = std::cbrt(3.0 * host_count / (4.0 * std::numbers::pi));
    const double radius = stage_radius_fraction(cat.stage) * host_radius * uniform(gen, 0.9, 1.1);
    if (radius < 1.5) {
      throw GenerationError("shape " + shape.str() + " too small to fit tumor '" + cat.name + "'");
    }

    Vec3 center;
    const bool invasive = cat.stage == Stage::kT4;
    if (!invasive) {
      // Seed at a random host voxel deep enough to hold most of the tumor.
      std::vector<std::array<std::int64_t, 3>> candidates;
      for (double depth : {0.8 * radius, 0.5 * radius, 0.0}) {
        for (std::int64_t i = 0; i < shape.h; ++i)
          for (std::int64_t j = 0; j < shape.w; ++j)
            for (std::int64_t k = 0; k < shape.d; ++k)
              if (host_mask.at(i, j, k) != 0.0F && ball_inside(host_mask, i, j, k, depth)) {
                candidates.push_back({i, j, k});
              }
        if (!candidates.empty()) break;
      }
      const auto pick = std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(gen);
      for (int a = 0; a < 3; ++a) center[static_cast<std::size_t>(a)] = static_cast<double>(candidates[pick][a]);
    } else {
      // Protrude toward the first linked category, else along a random direction.
      const Vec3 hc = centroid(host_mask);
      Vec3 dir{uniform(gen, -1, 1), uniform(gen, -1, 1), uniform(gen, -0.3, 0.3)};
      for (const auto& [from, to] : taxonomy.extra_links()) {
        if (from == c && out.masks[static_cast<std::size_t>(to)].count_nonzero() > 0) {
          const Vec3 tc = centroid(out.masks[static_cast<std::size_t>(to)]);
          dir = {tc[0] - hc[0], tc[1] - hc[1], tc[2] - hc[2]};
          break;
        }
      }
      const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
      for (double& x : dir) x /= norm > 0 ? norm : 1.0;
      // Walk to the last host voxel along the ray.
      double t_edge = 0.0;
      for (double t = 0.0; t < extent; t += 0.25) {
        const auto i = static_cast<std::int64_t>(std::lround(hc[0] + t * dir[0]));
        const auto j = static_cast<std::int64_t>(std::lround(hc[1] + t * dir[1]));
        const auto k = static_cast<std::int64_t>(std::lround(hc[2] + t * dir[2]));
        if (!host_mask.contains(i, j, k)) break;
        if (host_mask.at(i, j, k) != 0.0F) t_edge = t;
      }
      // A spherical cap of height h holds x^2 (3 - x) / 4 of the volume, x = h / r.
      double lo = 0.0;
      double hi = 2.0;
      for (int it = 0; it < 60; ++it) {
        const double x = 0.5 * (lo + hi);
        (x * x * (3.0 - x) / 4.0 < options.t4_protrusion ? lo : hi) = x;
      }
      const double inset = radius * (1.0 - 0.5 * (lo + hi));
      for (int a = 0; a < 3; ++a) {
        center[static_cast<std::size_t>(a)] = hc[static_cast<std::size_t>(a)] + (t_edge - inset) * dir[static_cast<std::size_t>(a)];
      }
    }

    const auto blob = random_blob(gen, center, radius, 1);
    const double host_level = intensity[static_cast<std::size_t>(host)];
    const double sign = host_level >= 0.5 ? -1.0 : 1.0;
    const auto level =
        static_cast<float>(host_level + sign * options.tumor_contrast + uniform(gen, -0.04, 0.04));
    intensity[static_cast<std::size_t>(c)] = level;

    Volume& mask = out.masks[static_cast<std::size_t>(c)];
    bool outside = false;
    for (std::int64_t i = 0; i < shape.h; ++i)
      for (std::int64_t j = 0; j < shape.w; ++j)
        for (std::int64_t k = 0; k < shape.d; ++k) {
          if (!blob_contains(blob, static_cast<double>(i), static_cast<double>(j),
                             static_cast<double>(k)))
            continue;
          const bool in_host = host_mask.at(i, j, k) != 0.0F;
          if (!invasive && !in_host) continue;
          mask.at(i, j, k) = 1.0F;
          out.image.at(i, j, k) = level;
          outside = outside || !in_host;
        }
    out.invasive[static_cast<std::size_t>(c)] = outside;
  }

  std::normal_distribution<float> noise(0.0F, static_cast<float>(options.noise_sigma));
  for (float& v : out.image.data()) v += noise(gen);
  for (int c = 0; c < n; ++c) {
    out.present[static_cast<std::size_t>(c)] = out.masks[static_cast<std::size_t>(c)].count_nonzero() > 0;
  }
  return out;
}

std::vector<LabeledCase> generate_corpus(const Taxonomy& taxonomy, Shape3 shape, int count,
                                         std::uint64_t base_seed, const SynthOptions& options,
                                         const std::string& prefix) {
  std::vector<LabeledCase> cases;
  cases.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::ostringstream id;
    id << prefix << "_" << std::setw(4) << std::setfill('0') << i;
    const std::uint64_t seed = rng::key(base_seed, rng::Role::kCaseSeed, rng::hash_string(id.str()));
    cases.push_back(generate_case(taxonomy, shape, seed, options, id.str()));
  }
  return cases;
}

PromptBank build_prompt_bank(std::span<const LabeledCase> cases, const Taxonomy& taxonomy,
                             Shape3 prompt_shape) {
  PromptBank bank;
  bank.prompt_shape = prompt_shape;
  bank.entries.resize(static_cast<std::size_t>(taxonomy.size()));
  for (const LabeledCase& lc : cases) {
    if (lc.masks.size() != static_cast<std::size_t>(taxonomy.size())) {
      throw ShapeError("case '" + lc.case_id + "' does not carry one mask per category");
    }
    bool any = false;
    for (int c = 0; c < taxonomy.size(); ++c) {
      const auto box = bounding_box(lc.masks[static_cast<std::size_t>(c)]);
      if (!box) continue;
      any = true;
      bank.entries[static_cast<std::size_t>(c)].push_back(
          {resample_trilinear(lc.image, *box, prompt_shape), lc.case_id, c, *box});
    }
    if (!any) throw InputError("case '" + lc.case_id + "' has no nonempty mask");
  }
  for (int c = 0; c < taxonomy.size(); ++c) {
    const auto count = bank.entries[static_cast<std::size_t>(c)].size();
    if (count < 2) {
      bank.warnings.push_back("category '" + taxonomy[c].name + "' has " + std::to_string(count) +
                              " prompt entr" + (count == 1 ? "y" : "ies") +
                              "; anatomical prompt sampling needs entries from another case");
    }
  }
  return bank;
}

std::string display_name(const std::string& category_name) {
  std::string out = category_name;
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

std::string instantiate_template(const std::string& templ, const std::string& category_name) {
  const std::string placeholder = kClassPlaceholder;
  const auto pos = templ.find(placeholder);
  if (pos == std::string::npos) throw InputError("template lacks the [CLS] placeholder: " + templ);
  std::string out = templ;
  out.replace(pos, placeholder.size(), display_name(category_name));
  return out;
}

TextCorpus make_text_corpus(const Taxonomy& taxonomy, std::uint64_t seed) {
  TextCorpus corpus;
  corpus.short_templates = {
      "A computerized tomography of a [CLS].",
      "A photo of a [CLS].",
      "There is [CLS] in this computerized tomography.",
      "[CLS]",
  };

  int organ_count = 0;
  for (int c = 0; c < taxonomy.size(); ++c) organ_count += taxonomy.is_tumor(c) ? 0 : 1;

  static constexpr std::array<const char*, 3> kOrganOpeners = {
      "is a solid abdominal organ", "is an abdominal organ with a well defined capsule",
      "is a compact soft tissue organ of the abdomen"};
  static constexpr std::array<const char*, 3> kTumorOpeners = {
      "is an abnormal mass", "is a focal neoplastic lesion", "is a space occupying growth"};

  int organ_rank = 0;
  for (int c = 0; c < taxonomy.size(); ++c) {
    const Category& cat = taxonomy[c];
    const std::string name = display_name(cat.name);
    auto gen = rng::engine(seed, rng::Role::kTextCorpus, static_cast<std::uint64_t>(c));
    const auto variant = std::uniform_int_distribution<std::size_t>(0, 2)(gen);
    std::ostringstream text;
    if (cat.kind == CategoryKind::kOrgan) {
      const double level = organ_intensity(organ_rank++, organ_count);
      const char* density = level < 0.5 ? "hypodense" : level < 0.7 ? "isodense" : "hyperdense";
      text << "The " << name << " " << kOrganOpeners[variant] << ". On computerized tomography the "
           << name << " appears as a " << density
           << " homogeneous region with smooth lobulated margins.";
    } else {
      const std::string host = display_name(taxonomy[*cat.host].name);
      text << "A " << name << " " << kTumorOpeners[variant] << " arising within the " << host
           << ". It appears as a rounded focus whose attenuation contrasts with the surrounding "
           << host << " parenchyma.";
      if (cat.stage != Stage::kNone) {
        text << " At stage " << to_string(cat.stage) << " the lesion is ";
        switch (cat.stage) {
          case Stage::kT1: text << "small and confined to the " << host << "."; break;
          case Stage::kT2: text << "moderate in size and confined to the " << host << "."; break;
          case Stage::kT3: text << "large and reaches the margin of the " << host << "."; break;
          default: text << "invasive and extends beyond the " << host << " into adjacent structures.";
        }
      }
    }
    corpus.long_descriptions.push_back(text.str());
  }
  return corpus;
}

}  // namespace catseg
