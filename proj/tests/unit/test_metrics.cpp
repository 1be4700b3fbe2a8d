#include "unit/doctest_torch.hpp"

#include <cmath>

#include "catseg/errors.hpp"
#include "catseg/metrics.hpp"
#include "oracles.hpp"
#include "unit/helpers.hpp"

using namespace catseg;

namespace {

Volume mask_with(Shape3 s, std::initializer_list<std::array<int, 3>> voxels, Spacing sp = {}) {
  Volume v(s, sp);
  for (const auto& p : voxels) v.at(p[0], p[1], p[2]) = 1.0F;
  return v;
}

Volume shifted(const Volume& v, int di, int dj, int dk) {
  Volume out(v.shape(), v.spacing());
  const Shape3& s = v.shape();
  for (std::int64_t i = 0; i < s.h; ++i)
    for (std::int64_t j = 0; j < s.w; ++j)
      for (std::int64_t k = 0; k < s.d; ++k)
        if (v.at(i, j, k) != 0.0F) out.at(i + di, j + dj, k + dk) = 1.0F;
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("DSC examples") {
  const Shape3 s{4, 4, 4};
  const auto a = mask_with(s, {{0, 0, 0}, {1, 0, 0}});
  CHECK(dsc(a, a) == 1.0);
  CHECK(dsc(a, mask_with(s, {{1, 0, 0}, {2, 0, 0}})) == 0.5);
  CHECK(dsc(Volume(s, {}), Volume(s, {})) == 1.0);
  CHECK(dsc(a, Volume(s, {})) == 0.0);
  CHECK_THROWS_AS(dsc(a, Volume({4, 4, 5}, {})), ShapeError);
}

TEST_CASE("HD95 examples") {
  const Shape3 s{8, 8, 8};
  const auto a = mask_with(s, {{1, 1, 1}, {1, 2, 1}, {2, 2, 2}});
  CHECK(*hd95(a, a) == 0.0);
  CHECK(*hd95(mask_with(s, {{0, 0, 0}}), mask_with(s, {{3, 0, 0}})) == 3.0);
  CHECK_FALSE(hd95(a, Volume(s, {})).has_value());
  CHECK_FALSE(hausdorff(Volume(s, {}), Volume(s, {})).has_value());
  CHECK_THROWS_AS(hd95(a, mask_with(s, {{0, 0, 0}}, Spacing{2, 1, 1})), ShapeError);
}

TEST_CASE("anisotropic spacing scales distances per axis") {
  const Shape3 s{6, 6, 6};
  const Spacing sp{0.5, 2.0, 3.0};
  CHECK(*hd95(mask_with(s, {{0, 0, 0}}, sp), mask_with(s, {{4, 0, 0}}, sp)) == doctest::Approx(2.0));
  CHECK(*hd95(mask_with(s, {{0, 0, 0}}, sp), mask_with(s, {{0, 0, 2}}, sp)) == doctest::Approx(6.0));
  CHECK(*hd95(mask_with(s, {{0, 0, 0}}, sp), mask_with(s, {{0, 3, 4}}, sp)) ==
        doctest::Approx(std::sqrt(36.0 + 144.0)));
}

TEST_CASE("surface voxels use the 6-neighbour rule") {
  Volume cube({5, 5, 5}, {});
  for (int i = 1; i < 4; ++i)
    for (int j = 1; j < 4; ++j)
      for (int k = 1; k < 4; ++k) cube.at(i, j, k) = 1.0F;
  CHECK(surface_voxels(cube).size() == 26);
  Volume full({3, 3, 3}, {}, 1.0F);
  CHECK(surface_voxels(full).size() == 26);  // grid boundary counts as background
}

TEST_CASE("distance transform matches brute force") {
  std::mt19937_64 gen(1);
  for (int t = 0; t < 10; ++t) {
    const auto sites = oracle::random_blob_mask({7, 5, 6}, gen, 0.9);
    const Spacing sp{0.7, 1.3, 2.1};
    const auto d = squared_distance_transform(sites, sp);
    std::vector<std::array<double, 3>> all;
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 5; ++j)
        for (int k = 0; k < 6; ++k)
          if (sites.at(i, j, k) != 0.0F) all.push_back({i * sp.x, j * sp.y, k * sp.z});
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 5; ++j)
        for (int k = 0; k < 6; ++k) {
          double best = std::numeric_limits<double>::infinity();
          for (const auto& p : all) {
            const double dx = i * sp.x - p[0], dy = j * sp.y - p[1], dz = k * sp.z - p[2];
            best = std::min(best, dx * dx + dy * dy + dz * dz);
          }
          const double got = d[static_cast<std::size_t>(sites.index(i, j, k))];
          if (std::isinf(best)) {
            CHECK(std::isinf(got));
          } else {
            CHECK(std::abs(got - best) <= 1e-9);
          }
        }
  }
}

TEST_CASE("percentile interpolates between order statistics") {
  std::vector<double> v{4.0, 1.0, 3.0, 2.0};
  CHECK(percentile(v, 0.5) == 2.5);
  CHECK(percentile(v, 1.0) == 4.0);
  CHECK(percentile(v, 0.0) == 1.0);
  std::vector<double> w{0.0, 10.0};
  CHECK(percentile(w, 0.95) == doctest::Approx(9.5));
  std::vector<double> none;
  CHECK_THROWS_AS(percentile(none, 0.5), InputError);
}

TEST_CASE("metrics agree with brute-force oracles and obey their properties") {
  std::mt19937_64 gen(2);
  for (int t = 0; t < 60; ++t) {
    const Shape3 s{static_cast<std::int64_t>(3 + gen() % 8), static_cast<std::int64_t>(3 + gen() % 8),
                   static_cast<std::int64_t>(3 + gen() % 8)};
    const Spacing sp{0.5 + (gen() % 4) * 0.25, 0.5 + (gen() % 4) * 0.5, 1.0 + (gen() % 3) * 0.5};
    const auto a = oracle::with_spacing(oracle::random_blob_mask(s, gen), sp);
    const auto b = oracle::with_spacing(oracle::random_blob_mask(s, gen), sp);
    CHECK(std::abs(dsc(a, b) - oracle::dsc(a, b)) <= 1e-12);
    CHECK(dsc(a, b) == dsc(b, a));
    const auto h = hd95(a, b);
    const auto ref = oracle::hd95(a, b);
    REQUIRE(h.has_value() == ref.has_value());
    if (!h) continue;
    CHECK(std::abs(*h - *ref) <= 1e-9);
    CHECK(*hd95(b, a) == *h);
    CHECK(*h <= *hausdorff(a, b) + 1e-12);
    CHECK(*hd95(a, b, HdMode::kDirectionalMax) >= 0.0);
  }
}

TEST_CASE("translating both masks leaves both metrics unchanged") {
  std::mt19937_64 gen(3);
  for (int t = 0; t < 20; ++t) {
    const Shape3 small{6, 6, 6};
    const auto a = oracle::random_blob_mask(small, gen);
    const auto b = oracle::random_blob_mask(small, gen);
    // Embed in a larger grid away from the boundary, then shift.
    Volume big_a({12, 12, 12}, {}), big_b({12, 12, 12}, {});
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        for (int k = 0; k < 6; ++k) {
          big_a.at(i + 1, j + 1, k + 1) = a.at(i, j, k);
          big_b.at(i + 1, j + 1, k + 1) = b.at(i, j, k);
        }
    const auto sa = shifted(big_a, 3, 2, 4), sb = shifted(big_b, 3, 2, 4);
    CHECK(dsc(big_a, big_b) == dsc(sa, sb));
    const auto h1 = hd95(big_a, big_b), h2 = hd95(sa, sb);
    REQUIRE(h1.has_value() == h2.has_value());
    if (h1) CHECK(std::abs(*h1 - *h2) <= 1e-12);
  }
}

TEST_CASE("directional-max variant takes the larger directed percentile") {
  const Shape3 s{10, 3, 3};
  // a: one voxel; b: a line of voxels. a->b distances are all 0; b->a spread out.
  const auto a = mask_with(s, {{0, 1, 1}});
  Volume b(s, {});
  for (int i = 0; i < 10; ++i) b.at(i, 1, 1) = 1.0F;
  std::vector<double> ba;
  for (int i = 0; i < 10; ++i) ba.push_back(static_cast<double>(i));
  CHECK(*hd95(a, b, HdMode::kDirectionalMax) == doctest::Approx(oracle::interpolated_percentile(ba, 0.95)));
  std::vector<double> pooled = ba;
  pooled.push_back(0.0);
  CHECK(*hd95(a, b, HdMode::kPooled) == doctest::Approx(oracle::interpolated_percentile(pooled, 0.95)));
}

TEST_CASE("evaluate: perfect predictions") {
  const auto tax = testutil::organs(2);
  LabeledCase lc;
  lc.case_id = "c0";
  lc.image = Volume({4, 4, 4}, {});
  lc.masks = {mask_with({4, 4, 4}, {{0, 0, 0}, {0, 1, 0}}), mask_with({4, 4, 4}, {{3, 3, 3}})};
  lc.present = {true, true};
  const auto report = evaluate({{lc.masks, lc}}, tax);
  for (const auto& name : tax.names()) {
    CHECK(report.per_category.at(name).dsc.mean == 1.0);
    CHECK(report.per_category.at(name).dsc.sd == 0.0);
    CHECK(report.per_category.at(name).hd95.mean == 0.0);
    CHECK(report.per_category.at(name).hd95.sd == 0.0);
  }
  CHECK_THROWS_AS(evaluate({}, tax), InputError);
  CHECK_THROWS_AS(evaluate({{lc.masks, lc}}, tax, 1.0), ConfigError);
}

TEST_CASE("evaluate: population standard deviation over two cases") {
  const auto tax = testutil::organs(1);
  // 2 of 5 voxels overlapping -> 0.4; 3 of 5 -> 0.6.
  const Shape3 s10{10, 1, 1};
  auto line = [&](int lo, int hi) {
    Volume v(s10, {});
    for (int i = lo; i < hi; ++i) v.at(i, 0, 0) = 1.0F;
    return v;
  };
  auto make10 = [&](std::string id, Volume pred, Volume gt) {
    LabeledCase lc;
    lc.case_id = std::move(id);
    lc.image = Volume(s10, {});
    lc.masks = {std::move(gt)};
    lc.present = {true};
    for (float& x : pred.data()) x = x > 0 ? 0.9F : 0.1F;
    return EvaluatedCase{{pred}, lc};
  };
  const auto report = evaluate({make10("b", line(3, 8), line(0, 5)), make10("a", line(2, 7), line(0, 5))}, tax);
  const auto& d = report.per_category.at("organ0").dsc;
  CHECK(d.count == 2);
  CHECK(d.mean == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d.sd == doctest::Approx(0.1).epsilon(1e-12));
  REQUIRE(report.case_table.size() == 2);
  CHECK(report.case_table[0].case_id == "a");
  CHECK(report.case_table[0].dsc == doctest::Approx(0.6));
}

TEST_CASE("aggregation: means within case range, stages and undefined HD95") {
  const auto tax = Taxonomy::from_json(nlohmann::json::parse(R"({"categories": [
      {"name": "colon", "kind": "organ"},
      {"name": "colon_tumor", "kind": "tumor", "host": "colon", "stage": "T4"}]})"));
  std::vector<CaseMetrics> table{{"z", "colon", 0.9, 1.0},
                                 {"z", "colon_tumor", 0.3, std::nullopt},
                                 {"y", "colon", 0.7, 3.0},
                                 {"y", "colon_tumor", 0.5, 2.0}};
  const auto r = aggregate_cases(table, tax);
  CHECK(r.case_table.front().case_id == "y");
  CHECK(r.per_category.at("colon_tumor").hd95_undefined == 1);
  CHECK(r.per_category.at("colon_tumor").hd95.count == 1);
  CHECK(r.per_category.at("colon").dsc.mean == doctest::Approx(0.8));
  CHECK(r.per_stage.at("T4").mean == doctest::Approx(0.4));
  CHECK(r.per_stage.count("T1") == 0);
  const auto j = r.to_json();
  CHECK(j.at("case_table").size() == 4);
  const auto csv = metrics_csv({{"row", r}});
  CHECK(csv.rfind("config,colon DSC,colon HD95,colon_tumor DSC,colon_tumor HD95\n", 0) == 0);
}

TEST_CASE("summary of a single value has zero spread") {
  const auto s = summarize({0.42});
  CHECK(s.mean == 0.42);
  CHECK(s.sd == 0.0);
  CHECK(s.count == 1);
}

}  // TEST_SUITE
