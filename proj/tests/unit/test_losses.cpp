#include "unit/doctest_torch.hpp"

#include <cmath>
#include <limits>

#include "catseg/errors.hpp"
#include "catseg/losses.hpp"
#include "catseg/prompt_refer.hpp"
#include "oracles.hpp"

using namespace catseg;

namespace {

torch::Tensor unit_rows(std::vector<std::int64_t> sizes, std::uint64_t seed) {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(seed);
  return l2_normalize_rows(torch::randn(sizes, gen, torch::kFloat64));
}

/// Closed form for identity similarities: -ln(e^{1/t} / (e^{1/t} + N - 1)).
double identity_infonce(int n, double t) { return -std::log(std::exp(1.0 / t) / (std::exp(1.0 / t) + (n - 1))); }

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("a zero query row predicts one half everywhere") {
  auto q = torch::randn({1, 2, 4}, torch::kFloat64);
  q[0][1].zero_();
  const auto m = predict_masks(q, torch::randn({1, 4, 3, 3, 3}, torch::kFloat64));
  CHECK(torch::equal(m[0][1], torch::full({3, 3, 3}, 0.5, torch::kFloat64)));
}

TEST_CASE("pixel aligned with the query gives sigmoid(10)") {
  const auto q = torch::tensor({{{1.0, 2.0, -2.0}}}, torch::kFloat64);
  auto px = torch::zeros({1, 3, 2, 1, 1}, torch::kFloat64);
  const auto dir = q[0][0] * (10.0 / q[0][0].pow(2).sum());
  px.index_put_({0, torch::indexing::Slice(), 1, 0, 0}, dir);
  const auto m = predict_masks(q, px);
  CHECK(m[0][0][1][0][0].item<double>() == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-12));
  CHECK(m[0][0][1][0][0].item<double>() == doctest::Approx(0.99995).epsilon(1e-5));
  CHECK(m[0][0][0][0][0].item<double>() == 0.5);
}

TEST_CASE("mask logits match a per-voxel dot product") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(1);
  const auto q = torch::randn({1, 2, 5}, gen, torch::kFloat64);
  const auto px = torch::randn({1, 5, 4, 4, 4}, gen, torch::kFloat64);
  const auto m = predict_masks(q, px);
  double worst = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) {
          double dot = 0.0;
          for (int c = 0; c < 5; ++c) dot += q[0][n][c].item<double>() * px[0][c][i][j][k].item<double>();
          worst = std::max(worst, std::abs(m[0][n][i][j][k].item<double>() - 1.0 / (1.0 + std::exp(-dot))));
        }
  CHECK(worst <= 1e-12);
}

TEST_CASE("width mismatch without an adapter is a shape error") {
  CHECK_THROWS_AS(mask_logits(torch::zeros({1, 2, 4}), torch::zeros({1, 5, 2, 2, 2})), ShapeError);
  MaskHead head(4, 5);
  CHECK(head->forward(torch::zeros({1, 2, 4}), torch::zeros({1, 5, 2, 2, 2})).sizes() ==
        torch::IntArrayRef({1, 2, 2, 2, 2}));
}

TEST_CASE("dice loss trivial cases") {
  auto gt = torch::zeros({1, 1, 4, 4, 4}, torch::kFloat64);
  gt[0][0][0][0][0] = 1.0;
  gt[0][0][1][0][0] = 1.0;
  CHECK(dice_loss(gt, gt).item<double>() <= 1e-5);
  auto disjoint = torch::zeros_like(gt);
  disjoint[0][0][3][3][3] = 1.0;
  disjoint[0][0][3][3][2] = 1.0;
  CHECK(dice_loss(disjoint, gt).item<double>() == doctest::Approx(1.0).epsilon(1e-5));
  auto half = torch::zeros_like(gt);
  half[0][0][0][0][0] = 1.0;
  half[0][0][2][2][2] = 1.0;
  CHECK(dice_loss(half, gt, 0.0).item<double>() == doctest::Approx(0.5).epsilon(1e-12));
  // Default smoothing stays within its 1e-5 slack of the limit.
  CHECK(std::abs(dice_loss(half, gt).item<double>() - 0.5) <= 1e-5);
  CHECK_THROWS_AS(dice_loss(half, gt.slice(2, 0, 2)), ShapeError);
}

TEST_CASE("dice loss stays in [0, 1]") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(2);
  for (int t = 0; t < 20; ++t) {
    const auto m = torch::rand({2, 3, 4, 4, 4}, gen, torch::kFloat64);
    const auto g = (torch::rand({2, 3, 4, 4, 4}, gen, torch::kFloat64) > 0.5).to(torch::kFloat64);
    const double v = dice_loss(m, g).item<double>();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("presence cross-entropy trivial cases") {
  const auto yes = torch::ones({1}, torch::kFloat64);
  CHECK(cls_loss(torch::full({1}, 20.0, torch::kFloat64), yes).item<double>() <= 1e-8);
  CHECK(std::abs(cls_loss(torch::zeros({1}, torch::kFloat64), yes).item<double>() - std::log(2.0)) <= 1e-6);
  CHECK(std::abs(cls_loss(torch::zeros({1}, torch::kFloat64), 1 - yes).item<double>() - std::log(2.0)) <= 1e-6);
}

TEST_CASE("presence cross-entropy gradient matches finite differences") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(3);
  auto logits = (torch::randn({2, 5}, gen, torch::kFloat64) * 3.0).requires_grad_(true);
  const auto labels = (torch::rand({2, 5}, gen, torch::kFloat64) > 0.5).to(torch::kFloat64);
  const auto r = oracle::gradcheck([&] { return cls_loss(logits, labels); }, {logits}, 1e-3, 3, 6);
  CHECK(r.max_rel_error <= 1e-6);
}

TEST_CASE("InfoNCE with a single row is exactly zero") {
  const auto a = unit_rows({1, 4}, 4);
  CHECK(infonce(a, unit_rows({1, 4}, 5)).item<double>() == 0.0);
}

TEST_CASE("InfoNCE identity similarities match the closed form") {
  for (int n : {2, 4, 8}) {
    for (double t : {1.0, 0.07, 0.5}) {
      const auto eye = torch::eye(n, torch::kFloat64);
      InfoNceOptions o;
      o.temperature = t;
      CHECK(std::abs(infonce(eye, eye, o).item<double>() - identity_infonce(n, t)) <= 1e-9);
    }
  }
  InfoNceOptions unit;
  unit.temperature = 1.0;
  CHECK(std::abs(infonce(torch::eye(2, torch::kFloat64), torch::eye(2, torch::kFloat64), unit).item<double>() -
                 0.31326) <= 1e-5);
}

TEST_CASE("InfoNCE is invariant to relabelling the pairs") {
  const auto a = unit_rows({5, 6}, 6), p = unit_rows({5, 6}, 7);
  const auto perm = torch::tensor({3, 0, 4, 1, 2});
  const double base = infonce(a, p).item<double>();
  CHECK(std::abs(infonce(a.index_select(0, perm), p.index_select(0, perm)).item<double>() - base) <= 1e-12);
  CHECK(base >= 0.0);
}

TEST_CASE("InfoNCE strictly decreases as a positive similarity grows") {
  // Anchors e_0..e_3; positive i = cos(th) e_i + sin(th) e_{4+i}: only a_i . p_i moves with th.
  const int n = 4;
  double prev = std::numeric_limits<double>::infinity();
  for (double th = 1.5; th >= 0.0; th -= 0.25) {
    const auto a = torch::eye(n, 2 * n, torch::kFloat64);
    auto p = torch::eye(n, 2 * n, torch::kFloat64);
    p[0][0] = std::cos(th);
    p[0][n] = std::sin(th);
    const double v = infonce(a, p).item<double>();
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("InfoNCE input checks and literal variant") {
  const auto a = unit_rows({3, 4}, 8);
  CHECK_THROWS_AS(infonce(a * 1.1, a), InputError);
  InfoNceOptions bad;
  bad.temperature = 0.0;
  CHECK_THROWS_AS(infonce(a, a, bad), DomainError);
  InfoNceOptions lit;
  lit.paper_literal = true;
  const auto p = unit_rows({3, 4}, 9);
  const auto sm = torch::softmax(torch::matmul(a, p.t()) / 0.07, -1).diagonal();
  CHECK(std::abs(infonce(a, p, lit).item<double>() + sm.mean().item<double>()) <= 1e-12);
}

TEST_CASE("InfoNCE gradient matches finite differences through normalization") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(10);
  auto x = torch::randn({2, 4, 5}, gen, torch::kFloat64).requires_grad_(true);
  auto y = torch::randn({2, 4, 5}, gen, torch::kFloat64).requires_grad_(true);
  for (bool literal : {false, true}) {
    InfoNceOptions o;
    o.temperature = 0.5;
    o.paper_literal = literal;
    const auto r = oracle::gradcheck([&] { return infonce(l2_normalize_rows(x), l2_normalize_rows(y), o); }, {x, y});
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("dice loss gradient matches finite differences") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(11);
  auto logits = torch::randn({1, 2, 3, 3, 3}, gen, torch::kFloat64).requires_grad_(true);
  const auto gt = (torch::rand({1, 2, 3, 3, 3}, gen, torch::kFloat64) > 0.5).to(torch::kFloat64);
  const auto r = oracle::gradcheck([&] { return dice_loss(torch::sigmoid(logits), gt); }, {logits});
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("mask head gradient matches finite differences") {
  torch::manual_seed(12);
  MaskHead head(4, 3);
  head->to(torch::kFloat64);
  auto q = torch::randn({1, 2, 4}, torch::kFloat64).requires_grad_(true);
  auto px = torch::randn({1, 3, 2, 2, 2}, torch::kFloat64).requires_grad_(true);
  const auto w = torch::randn({1, 2, 2, 2, 2}, torch::kFloat64);
  std::vector<torch::Tensor> inputs{q, px};
  for (auto& p : head->parameters()) inputs.push_back(p);
  const auto r = oracle::gradcheck([&] { return (torch::sigmoid(head->forward(q, px)) * w).sum(); }, inputs);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("total loss is the plain sum") {
  auto s = [](double v) { return torch::scalar_tensor(v, torch::kFloat64); };
  const auto r = total_loss(s(0.5), s(0.2), s(0.1), s(0.1));
  CHECK(r.total.item<double>() == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(total_loss(s(0), s(0), s(0), s(0)).total.item<double>() == 0.0);
  const auto partial = total_loss(s(0.25), s(0.125), {}, {});
  CHECK(partial.total.item<double>() == 0.375);
  const auto j = partial.to_json();
  CHECK(j.contains("dice"));
  CHECK(j.contains("cls"));
  CHECK_FALSE(j.contains("s2p"));
  CHECK_FALSE(j.contains("p2p"));
  CHECK_THROWS_AS(total_loss({}, {}, {}, {}), ConfigError);
}

TEST_CASE("non-finite components are named") {
  auto s = [](double v) { return torch::scalar_tensor(v, torch::kFloat64); };
  try {
    total_loss(s(0.1), s(0.1), s(std::numeric_limits<double>::quiet_NaN()), s(0.1));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("s2p") != std::string::npos);
  }
  CHECK_THROWS_AS(total_loss(s(0.1), s(std::numeric_limits<double>::infinity()), {}, {}), NumericError);
}

}  // TEST_SUITE
