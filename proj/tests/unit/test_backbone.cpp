#include "unit/doctest_torch.hpp"

#include <fstream>
#include <iterator>

#include "catseg/backbone.hpp"
#include "catseg/checkpoint.hpp"
#include "catseg/errors.hpp"
#include "oracles.hpp"
#include "unit/helpers.hpp"

using namespace catseg;

namespace {

BackboneOptions tiny(int levels) {
  BackboneOptions o;
  o.levels = levels;
  o.widths.clear();
  for (int i = 0; i < levels; ++i) o.widths.push_back(4 * (i + 1));
  o.stem_width = 4;
  o.pixel_channels = 4;
  o.norm_groups = 2;
  return o;
}

void zero_biases(torch::nn::Module& m) {
  torch::NoGradGuard ng;
  for (auto& p : m.named_parameters(true)) {
    if (p.key().find("bias") != std::string::npos) p.value().zero_();
  }
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("32 cubed input with three levels gives 16, 8 and 4") {
  torch::manual_seed(0);
  VisionEncoder enc(BackboneOptions{});
  PixelDecoder dec(BackboneOptions{});
  const auto f = enc->forward(torch::randn({1, 1, 32, 32, 32}));
  REQUIRE(f.levels.size() == 3);
  const std::int64_t expect[3] = {16, 8, 4};
  const std::int64_t widths[3] = {16, 32, 64};
  for (int i = 0; i < 3; ++i) {
    CHECK(f.levels[i].sizes() == torch::IntArrayRef({1, widths[i], expect[i], expect[i], expect[i]}));
  }
  const auto o = dec->forward(f);
  CHECK(o.sizes() == torch::IntArrayRef({1, 32, 32, 32, 32}));
  CHECK(torch::isfinite(o).all().item<bool>());
}

TEST_CASE("decoder output matches input extent for anisotropic admissible shapes") {
  torch::manual_seed(1);
  VisionEncoder enc(tiny(2));
  PixelDecoder dec(tiny(2));
  for (auto shape : {std::vector<std::int64_t>{1, 1, 8, 12, 16}, {2, 1, 4, 4, 8}}) {
    const auto o = dec->forward(enc->forward(torch::randn(shape)));
    CHECK(o.size(0) == shape[0]);
    CHECK(o.size(2) == shape[2]);
    CHECK(o.size(3) == shape[3]);
    CHECK(o.size(4) == shape[4]);
  }
}

TEST_CASE("indivisible extents name the required divisor") {
  VisionEncoder enc(BackboneOptions{});
  try {
    enc->forward(torch::zeros({1, 1, 32, 30, 32}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("divisible by 8") != std::string::npos);
  }
}

TEST_CASE("zero input with zeroed affine offsets gives zero features") {
  torch::manual_seed(2);
  VisionEncoder enc(BackboneOptions{});
  PixelDecoder dec(BackboneOptions{});
  zero_biases(*enc);
  zero_biases(*dec);
  const auto f = enc->forward(torch::zeros({1, 1, 16, 16, 16}));
  CHECK(f.stem.abs().max().item<float>() == 0.0F);
  for (const auto& l : f.levels) CHECK(l.abs().max().item<float>() == 0.0F);
  CHECK(dec->forward(f).abs().max().item<float>() == 0.0F);
}

TEST_CASE("encoder and decoder are deterministic") {
  torch::manual_seed(3);
  VisionEncoder enc(BackboneOptions{});
  PixelDecoder dec(BackboneOptions{});
  const auto x = torch::randn({1, 1, 16, 16, 16});
  const auto a = dec->forward(enc->forward(x));
  const auto b = dec->forward(enc->forward(x));
  CHECK(torch::equal(a, b));
}

TEST_CASE("single level config projects to the input extent") {
  torch::manual_seed(4);
  auto o = tiny(1);
  VisionEncoder enc(o);
  PixelDecoder dec(o);
  const auto f = enc->forward(torch::randn({1, 1, 8, 8, 8}));
  REQUIRE(f.levels.size() == 1);
  CHECK(f.levels[0].size(2) == 4);
  CHECK(dec->forward(f).sizes() == torch::IntArrayRef({1, 4, 8, 8, 8}));
}

TEST_CASE("linear-only decoder is homogeneous in its features") {
  torch::manual_seed(5);
  auto o = tiny(3);
  o.linear_only = true;
  VisionEncoder enc(o);
  PixelDecoder dec(o);
  enc->to(torch::kFloat64);
  dec->to(torch::kFloat64);
  const auto f = enc->forward(torch::randn({1, 1, 8, 8, 8}, torch::kFloat64));
  for (double alpha : {-2.0, 0.5, 3.0}) {
    const auto lhs = dec->forward(f.scaled(alpha));
    const auto rhs = dec->forward(f) * alpha;
    CHECK((lhs - rhs).abs().max().item<double>() <= 1e-12 * (1.0 + rhs.abs().max().item<double>()));
  }
}

TEST_CASE("mismatched level shapes are rejected by the decoder") {
  torch::manual_seed(6);
  VisionEncoder enc(tiny(2));
  PixelDecoder dec(tiny(2));
  auto f = enc->forward(torch::randn({1, 1, 8, 8, 8}));
  auto bad = f;
  bad.levels[1] = torch::zeros({1, 8, 3, 2, 2});
  CHECK_THROWS_AS(dec->forward(bad), ShapeError);
  bad = f;
  bad.levels.pop_back();
  CHECK_THROWS_AS(dec->forward(bad), ShapeError);
}

TEST_CASE("options reject decreasing widths") {
  auto o = tiny(2);
  o.widths = {8, 4};
  CHECK_THROWS_AS(o.validate(), ConfigError);
}

TEST_CASE("flatten order is row-major over (h, w, d)") {
  const auto grid = torch::arange(2 * 2 * 3 * 4, torch::kFloat64).view({1, 2, 2, 3, 4});
  const auto tokens = flatten_tokens(grid);
  CHECK(tokens.sizes() == torch::IntArrayRef({1, 24, 2}));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k)
        for (int c = 0; c < 2; ++c)
          CHECK(tokens[0][(i * 3 + j) * 4 + k][c].item<double>() == grid[0][c][i][j][k].item<double>());
}

TEST_CASE("pixel map readout gradient matches finite differences") {
  torch::manual_seed(7);
  VisionEncoder enc(tiny(2));
  PixelDecoder dec(tiny(2));
  enc->to(torch::kFloat64);
  dec->to(torch::kFloat64);
  auto x = torch::randn({1, 1, 8, 8, 8}, torch::kFloat64).requires_grad_(true);
  const auto w = torch::randn({1, 4, 8, 8, 8}, torch::kFloat64);
  std::vector<torch::Tensor> inputs{x};
  for (auto& p : enc->parameters()) inputs.push_back(p);
  for (auto& p : dec->parameters()) inputs.push_back(p);
  const auto r = oracle::gradcheck([&] { return (dec->forward(enc->forward(x)) * w).sum(); }, inputs);
  INFO("analytic " << r.worst_analytic << " numeric " << r.worst_numeric);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("checkpoints round-trip and are byte-stable") {
  torch::manual_seed(8);
  VisionEncoder a(tiny(2));
  const auto dir = testutil::scratch_dir("ckpt");
  save_checkpoint(dir / "one", *a, {{"note", "x"}});
  save_checkpoint(dir / "two", *a, {{"note", "x"}});
  CHECK(read_bytes(dir / "one" / "weights.bin") == read_bytes(dir / "two" / "weights.bin"));
  CHECK(read_bytes(dir / "one" / "manifest.json") == read_bytes(dir / "two" / "manifest.json"));
  torch::manual_seed(9);
  VisionEncoder b(tiny(2));
  load_checkpoint(dir / "one", *b);
  const auto pa = a->named_parameters(), pb = b->named_parameters();
  for (const auto& p : pa) CHECK(torch::equal(p.value(), pb[p.key()]));
  CHECK(read_checkpoint_config(dir / "one").at("note") == "x");
  VisionEncoder c(tiny(3));
  CHECK_THROWS_AS(load_checkpoint(dir / "one", *c), ShapeError);
}

}  // TEST_SUITE
