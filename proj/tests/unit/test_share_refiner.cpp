#include "unit/doctest_torch.hpp"

#include <cmath>

#include "catseg/errors.hpp"
#include "catseg/share_refiner.hpp"
#include "oracles.hpp"

using namespace catseg;

namespace {

torch::Tensor integer_tensor(std::vector<std::int64_t> sizes, std::uint64_t seed) {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randint(-5, 6, sizes, gen, torch::kFloat64);
}

RefinerOptions small_options(HardMode mode) {
  RefinerOptions o;
  o.query_width = 8;
  o.level_widths = {4, 6, 8};
  o.ffn_width = 12;
  o.hard_mode = mode;
  return o;
}

MultiScaleFeatures random_levels(std::int64_t batch, std::int64_t extent, const std::vector<std::int64_t>& widths,
                                 torch::ScalarType dtype) {
  MultiScaleFeatures f;
  f.stem = torch::randn({batch, 1, extent, extent, extent}, dtype);
  std::int64_t e = extent;
  for (auto w : widths) {
    e /= 2;
    f.levels.push_back(torch::randn({batch, w, e, e, e}, dtype));
  }
  return f;
}

QuerySet random_queries(std::int64_t batch, std::int64_t n, std::int64_t c, torch::ScalarType dtype) {
  return {torch::randn({batch, n, c}, dtype), torch::randn({batch, n, c}, dtype),
          torch::randn({batch, n, c}, dtype)};
}

}  // namespace

TEST_SUITE("share_refiner") {

TEST_CASE("orthonormal queries against a constant query feature") {
  const auto q = torch::eye(3, torch::kFloat64);
  for (int n = 0; n < 3; ++n) {
    const auto features = q[n].unsqueeze(0).expand({8, 3});
    const auto s = similarity_logits(q, features);
    for (int r = 0; r < 3; ++r) {
      const double expect = r == n ? 1.0 : 0.0;
      CHECK(torch::equal(s[r], torch::full({8}, expect, torch::kFloat64)));
    }
  }
  CHECK(similarity_logits(q, torch::zeros({8, 3}, torch::kFloat64)).abs().max().item<double>() == 0.0);
  CHECK_THROWS_AS(similarity_logits(q, torch::zeros({8, 4}, torch::kFloat64)), ShapeError);
}

TEST_CASE("similarity logits match a double loop") {
  const auto q = integer_tensor({2, 4}, 1);
  const auto grid = integer_tensor({1, 4, 2, 2, 2}, 2);
  const auto s = similarity_logits(q, grid.flatten(2).transpose(1, 2)[0]);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) {
          double dot = 0.0;
          for (int c = 0; c < 4; ++c) dot += q[n][c].item<double>() * grid[0][c][i][j][k].item<double>();
          CHECK(s[n][(i * 2 + j) * 2 + k].item<double>() == dot);
        }
}

TEST_CASE("noise-free argmax example") {
  const auto s = torch::tensor({{5.0, 0.0, 0.0}, {0.0, 5.0, 5.0}}, torch::kFloat64);
  const auto a = gumbel_hard_assign(s, 1.0, 0, false);
  CHECK(torch::equal(a.onehot, torch::tensor({{1.0, 0.0, 0.0}, {0.0, 1.0, 1.0}}, torch::kFloat64)));
  CHECK((a.gumbel.sum(0) - 1.0).abs().max().item<double>() <= 1e-15);
}

TEST_CASE("ties go to the lowest query index") {
  const auto s = torch::zeros({3, 4}, torch::kFloat64);
  const auto a = gumbel_hard_assign(s, 1.0, 0, false);
  CHECK(torch::equal(a.onehot[0], torch::ones({4}, torch::kFloat64)));
}

TEST_CASE("non-positive temperature is a domain error") {
  const auto s = torch::zeros({2, 3});
  CHECK_THROWS_AS(gumbel_hard_assign(s, 0.0, 0, true), DomainError);
  CHECK_THROWS_AS(gumbel_hard_assign(s, torch::scalar_tensor(-1.0), 0, 0, true), DomainError);
}

TEST_CASE("adding a constant per column leaves the assignment unchanged") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = torch::randn({4, 16}, gen, torch::kFloat64);
    const auto shift = torch::randn({1, 16}, gen, torch::kFloat64) * 10.0;
    const auto a = gumbel_hard_assign(s, 0.7, trial, true);
    const auto b = gumbel_hard_assign(s + shift, 0.7, trial, true);
    CHECK(torch::equal(a.onehot, b.onehot));
    const auto f = torch::randn({16, 5}, gen, torch::kFloat64);
    CHECK(torch::equal(hard_gather(a.onehot, f), hard_gather(b.onehot, f)));
  }
}

TEST_CASE("every column has exactly one assigned query") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = torch::randn({2, 5, 27}, gen);
    const auto a = gumbel_hard_assign(s, 1.0, trial, true);
    CHECK(torch::equal(a.onehot.sum(-2), torch::ones({2, 27})));
    CHECK(((a.onehot == 0) | (a.onehot == 1)).all().item<bool>());
  }
}

TEST_CASE("Gumbel noise is keyed by position") {
  const auto a = gumbel_noise({20}, 5, 2, torch::kFloat64);
  const auto b = gumbel_noise({10}, 5, 2, torch::kFloat64);
  CHECK(torch::equal(a.slice(0, 0, 10), b));
  CHECK_FALSE(torch::equal(a, gumbel_noise({20}, 5, 3, torch::kFloat64)));
  CHECK(torch::isfinite(a).all().item<bool>());
}

// argmax((S + G) / tau) = argmax(S + G), so the one-hot frequencies follow
// softmax(S) for every temperature; tau only sharpens the relaxation.
TEST_CASE("Gumbel-max frequencies match the softmax over 100000 seeds") {
  const auto s = torch::tensor({{0.3, -1.0}, {1.2, 0.0}, {-0.4, 0.9}}, torch::kFloat64);
  for (double tau : {1.0, 0.5}) {
    auto counts = torch::zeros({3, 2}, torch::kFloat64);
    constexpr int kDraws = 100000;
    for (int seed = 0; seed < kDraws; ++seed) counts += gumbel_hard_assign(s, tau, seed, true).onehot;
    const auto p = torch::softmax(s, 0);
    for (int n = 0; n < 3; ++n)
      for (int v = 0; v < 2; ++v) {
        const double pv = p[n][v].item<double>();
        const double sigma = std::sqrt(kDraws * pv * (1.0 - pv));
        INFO("tau " << tau << " n " << n << " v " << v);
        CHECK(std::abs(counts[n][v].item<double>() - kDraws * pv) <= 3.0 * sigma);
      }
  }
}

TEST_CASE("straight-through forward value is the one-hot exactly") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(6);
  const auto s = torch::randn({4, 30}, gen).requires_grad_(true);
  const auto a = gumbel_hard_assign(s, 0.3, 1, true);
  const auto sp = straight_through(a.onehot, a.gumbel);
  CHECK(torch::equal(sp, a.onehot));
  CHECK(sp.requires_grad());
}

TEST_CASE("straight-through of a one-hot relaxation equals the relaxation") {
  const auto onehot = torch::tensor({{0.0, 1.0}, {1.0, 0.0}});
  CHECK(torch::equal(straight_through(onehot, onehot.clone()), onehot));
}

TEST_CASE("straight-through gradient equals the soft-path gradient") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(7);
  auto s = torch::randn({3, 10}, gen, torch::kFloat64).requires_grad_(true);
  const auto w = torch::randn({3, 10}, gen, torch::kFloat64);
  const double tau = 0.8;
  auto hard = gumbel_hard_assign(s, tau, 2, true);
  const auto g_st = torch::autograd::grad({(straight_through(hard.onehot, hard.gumbel) * w).sum()}, {s})[0];
  auto soft = gumbel_hard_assign(s, tau, 2, true);
  const auto g_soft = torch::autograd::grad({(soft.gumbel * w).sum()}, {s})[0];
  CHECK(torch::equal(g_st, g_soft));
  const auto r = oracle::gradcheck([&] { return (gumbel_hard_assign(s, tau, 2, true).gumbel * w).sum(); }, {s},
                                   1e-3, 3, 6);
  CHECK(r.max_rel_error <= 1e-6);
}

TEST_CASE("hard gather: all voxels to query 0 averages them") {
  const auto f = integer_tensor({6, 3}, 8);
  auto assign = torch::zeros({3, 6}, torch::kFloat64);
  assign[0].fill_(1.0);
  const auto g = hard_gather(assign, f);
  CHECK(torch::allclose(g[0], f.mean(0), 0.0, 1e-15));
  CHECK(g.slice(0, 1).abs().max().item<double>() == 0.0);
}

TEST_CASE("hard gather: one voxel per query returns that voxel") {
  const auto f = integer_tensor({3, 4}, 9);
  const auto assign = torch::tensor({{0.0, 0.0, 1.0}, {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}, torch::kFloat64);
  const auto g = hard_gather(assign, f);
  CHECK(torch::equal(g[0], f[2]));
  CHECK(torch::equal(g[1], f[0]));
  CHECK(torch::equal(g[2], f[1]));
}

TEST_CASE("hard gather matches a partitioned mean on 2 cubed grids") {
  std::mt19937_64 gen(10);
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = integer_tensor({8, 5}, 100 + trial);
    std::vector<int> owner(8);
    auto assign = torch::zeros({4, 8}, torch::kFloat64);
    for (int v = 0; v < 8; ++v) {
      owner[v] = static_cast<int>(gen() % 4);
      assign[owner[v]][v] = 1.0;
    }
    const auto g = hard_gather(assign, f);
    for (int n = 0; n < 4; ++n) {
      std::vector<double> sum(5, 0.0);
      int count = 0;
      for (int v = 0; v < 8; ++v) {
        if (owner[v] != n) continue;
        ++count;
        for (int c = 0; c < 5; ++c) sum[c] += f[v][c].item<double>();
      }
      for (int c = 0; c < 5; ++c) {
        const double expect = count == 0 ? 0.0 : sum[c] / count;
        CHECK(g[n][c].item<double>() == expect);
      }
    }
  }
}

TEST_CASE("zeroed output projections make the refiner a pure residual") {
  torch::manual_seed(11);
  for (auto mode : {HardMode::kOff, HardMode::kAnatomical, HardMode::kAll}) {
    ShareRefiner r(small_options(mode));
    r->zero_output_projections();
    const auto f = random_levels(2, 8, {4, 6, 8}, torch::kFloat32);
    const auto q = random_queries(2, 3, 8, torch::kFloat32);
    const auto out = r->forward(q, f, {});
    CHECK(torch::equal(out.segmentation, q.segmentation));
    CHECK(torch::equal(out.textual, q.textual));
    CHECK(torch::equal(out.anatomical, q.anatomical));
  }
}

TEST_CASE("refinement is deterministic for a fixed seed") {
  torch::manual_seed(12);
  ShareRefiner r(small_options(HardMode::kAnatomical));
  const auto f = random_levels(1, 8, {4, 6, 8}, torch::kFloat32);
  const auto q = random_queries(1, 3, 8, torch::kFloat32);
  RefineContext ctx;
  ctx.seed = 99;
  const auto a = r->forward(q, f, ctx), b = r->forward(q, f, ctx);
  CHECK(torch::equal(a.anatomical, b.anatomical));
  CHECK(torch::equal(a.segmentation, b.segmentation));
  CHECK(torch::equal(a.textual, b.textual));
  CHECK(a.anatomical.sizes() == q.anatomical.sizes());
}

TEST_CASE("toggling hard mode never touches the soft families") {
  const auto f = random_levels(1, 8, {4, 6, 8}, torch::kFloat32);
  const auto q = random_queries(1, 3, 8, torch::kFloat32);
  torch::manual_seed(13);
  ShareRefiner hard(small_options(HardMode::kAnatomical));
  torch::manual_seed(13);
  ShareRefiner soft(small_options(HardMode::kOff));
  const auto a = hard->forward(q, f, {}), b = soft->forward(q, f, {});
  CHECK(torch::equal(a.segmentation, b.segmentation));
  CHECK(torch::equal(a.textual, b.textual));
  CHECK_FALSE(torch::equal(a.anatomical, b.anatomical));
}

TEST_CASE("disabled families stay undefined") {
  torch::manual_seed(14);
  ShareRefiner r(small_options(HardMode::kAnatomical));
  auto q = random_queries(1, 2, 8, torch::kFloat32);
  q.anatomical = torch::Tensor();
  const auto out = r->forward(q, random_levels(1, 8, {4, 6, 8}, torch::kFloat32), {});
  CHECK_FALSE(out.anatomical.defined());
  CHECK(out.textual.defined());
}

TEST_CASE("wrong level count or query width is a shape error") {
  ShareRefiner r(small_options(HardMode::kAnatomical));
  auto f = random_levels(1, 8, {4, 6, 8}, torch::kFloat32);
  auto q = random_queries(1, 2, 8, torch::kFloat32);
  auto short_f = f;
  short_f.levels.pop_back();
  CHECK_THROWS_AS(r->forward(q, short_f, {}), ShapeError);
  q.segmentation = torch::zeros({1, 2, 7});
  CHECK_THROWS_AS(r->forward(q, f, {}), ShapeError);
}

TEST_CASE("temperature is clamped") {
  auto o = small_options(HardMode::kAnatomical);
  o.tau_init = 50.0;
  ShareRefiner r(o);
  CHECK(r->tau().item<double>() == doctest::Approx(10.0));
  o.tau_init = 0.0;
  CHECK_THROWS_AS((ShareRefiner(o)), ConfigError);
}

TEST_CASE("whole refiner gradient matches finite differences on a replayed assignment") {
  torch::manual_seed(15);
  for (auto mode : {HardMode::kAnatomical, HardMode::kAll}) {
    ShareRefiner r(small_options(mode));
    r->to(torch::kFloat64);
    auto f = random_levels(1, 8, {4, 6, 8}, torch::kFloat64);
    auto q = random_queries(1, 2, 8, torch::kFloat64);
    for (auto* t : {&q.segmentation, &q.textual, &q.anatomical}) t->requires_grad_(true);
    for (auto& l : f.levels) l.requires_grad_(true);
    const auto w = random_queries(1, 2, 8, torch::kFloat64);

    AssignmentTrace trace;
    RefineContext ctx;
    ctx.seed = 3;
    ctx.trace = &trace;
    r->forward(q, f, ctx);
    trace.mode = AssignmentTrace::Mode::kReplay;
    auto loss = [&] {
      trace.cursor = 0;
      const auto out = r->forward(q, f, ctx);
      return (out.segmentation * w.segmentation).sum() + (out.textual * w.textual).sum() +
             (out.anatomical * w.anatomical).sum();
    };
    std::vector<torch::Tensor> inputs{q.segmentation, q.textual, q.anatomical};
    for (auto& l : f.levels) inputs.push_back(l);
    for (auto& p : r->parameters()) inputs.push_back(p);
    const auto res = oracle::gradcheck(loss, inputs);
    INFO("analytic " << res.worst_analytic << " numeric " << res.worst_numeric);
    CHECK(res.max_rel_error <= 1e-4);
  }
}

}  // TEST_SUITE
