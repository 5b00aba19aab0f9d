#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "streetlatent/editing.hpp"
#include "test_util.hpp"

using namespace streetlatent;

namespace {

ConditionedSet planted_set(std::uint64_t seed = 101) {
  const auto truth = make_ground_truth(seed, 16);
  std::vector<SemanticBoundary> bs;
  for (auto d : {Dimension::income, Dimension::education, Dimension::health}) {
    SemanticBoundary b;
    b.dimension = d;
    b.normal = truth.weight(d);
    b.offset = 0.1 * static_cast<double>(index_of(d));
    bs.push_back(b);
  }
  return orthogonalize_set(bs);
}

std::vector<LatentCode> latents(std::uint64_t seed, std::size_t n) {
  return sample_latents(SamplingConfig(seed, n, 0.5, 16));
}

}  // namespace

TEST(Walk, ZeroAlphaIsIdentityAndInputsValidated) {
  const auto z = latents(1, 1)[0];
  const auto n = normalize(latents(2, 1)[0]);
  EXPECT_EQ(walk(z, n, 0.0), z);
  EXPECT_THROW(walk(z, scaled(n, 2.0), 1.0), InvalidArgument);
  EXPECT_THROW(walk(z, LatentCode{1.0}, 1.0), LengthMismatch);
}

TEST(Walk, SelfDirectionIsLinear) {
  const auto set = planted_set();
  for (const auto& b : set.boundaries)
    for (const auto& z : latents(3, 50))
      for (double a : {-3.0, -1.5, -0.25, 0.5, 2.0, 3.0})
        EXPECT_NEAR(b.decision(walk(z, b.normal, a)) - b.decision(z), a, 1e-9);
}

TEST(Walk, OtherDecisionValuesAreInvariant) {
  const auto set = planted_set();
  for (const auto& walked : set.boundaries)
    for (const auto& other : set.boundaries) {
      if (walked.dimension == other.dimension) continue;
      for (const auto& z : latents(4, 50))
        for (double a : {-3.0, -1.0, 1.0, 3.0})
          EXPECT_LE(std::abs(other.decision(walk(z, walked.normal, a)) - other.decision(z)), 1e-8);
    }
}

TEST(Condition, SumsInConditioningOrderAndValidates) {
  const auto set = planted_set();
  const auto z = latents(5, 1)[0];
  const AlphaMap alphas{{Dimension::health, 1.5}, {Dimension::income, -2.0}, {Dimension::education, 0.5}};
  const auto out = condition(z, alphas, set);
  LatentCode expected = z;
  for (const auto& b : set.boundaries) expected = axpy(expected, alphas.at(b.dimension), b.normal);
  EXPECT_EQ(out, expected);
  for (const auto& b : set.boundaries) EXPECT_NEAR(b.decision(out) - b.decision(z), alphas.at(b.dimension), 1e-9);
  EXPECT_EQ(condition(z, {{Dimension::income, 0.0}}, set), z);
  EXPECT_THROW(condition(z, {{Dimension::income, std::nan("")}}, set), InvalidArgument);

  ConditionedSet partial = set;
  partial.boundaries.pop_back();
  partial.order.pop_back();
  EXPECT_THROW(condition(z, {{set.boundaries.back().dimension, 1.0}}, partial), InvalidArgument);

  ConditionedSet skewed = set;
  skewed.boundaries[1].normal = normalize(axpy(skewed.boundaries[1].normal, 1e-3, skewed.boundaries[0].normal));
  EXPECT_THROW(condition(z, alphas, skewed), InvalidArgument);
}

TEST(WalkSpec, SymmetricAlphaGrid) {
  WalkSpec spec;
  const auto a = spec.alphas();
  ASSERT_EQ(a.size(), 7u);
  for (int k = 0; k < 7; ++k) EXPECT_DOUBLE_EQ(a[k], k - 3.0);
  EXPECT_EQ(a[3], 0.0);
  spec.steps = 5;
  spec.alpha_max = 1.0;
  EXPECT_EQ(spec.alphas(), (std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0}));
  spec.steps = 4;
  EXPECT_THROW(spec.alphas(), InvalidArgument);
  spec.steps = 7;
  spec.alpha_max = 0.0;
  EXPECT_THROW(spec.validate(), InvalidArgument);
  spec.alpha_max = 1.0;
  spec.dimensions.clear();
  EXPECT_THROW(spec.validate(), InvalidArgument);
}

TEST(Grid, SingleImageContracts) {
  const auto set = planted_set();
  const auto z = latents(6, 1)[0];
  const auto g = render_matrix_single_image(z, set, WalkSpec{});
  const auto& m = g.manifest;
  ASSERT_EQ(m.rows, 3);
  ASSERT_EQ(m.cols, 7);
  ASSERT_EQ(g.cells.size(), 21u);
  EXPECT_EQ(m.row_labels, (std::vector<std::string>{"health", "income", "education"}));
  const auto center = png::encode(generate(z));
  for (int r = 0; r < 3; ++r) EXPECT_EQ(png::encode(g.cell(r, 3)), center) << "row " << r;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 7; ++c) {
      const auto d = WalkSpec{}.dimensions[r];
      EXPECT_EQ(g.cell(r, c), generate(walk(z, set.at(d).normal, m.column_alphas[c])));
    }
  EXPECT_LE(m.max_other_decision_drift, 1e-8);
  EXPECT_EQ(g.composite.width, 7 * kImageWidth + 6 * kGridSeparator);
  EXPECT_EQ(g.composite.height, 3 * kImageHeight + 2 * kGridSeparator);
  // Cell (1, 2) sits after one separator band in each direction.
  const auto& cell = m.cells[1 * 7 + 2];
  EXPECT_EQ(cell.x, 2 * (kImageWidth + kGridSeparator));
  EXPECT_EQ(cell.y, kImageHeight + kGridSeparator);
  const auto gray = png::to_gray(g.cell(1, 2));
  for (int y = 0; y < kImageHeight; y += 7)
    for (int x = 0; x < kImageWidth; x += 5)
      EXPECT_EQ(g.composite.pixels[static_cast<std::size_t>(cell.y + y) * g.composite.width + cell.x + x],
                gray.pixels[y * kImageWidth + x]);
  EXPECT_EQ(g.composite.pixels[kImageWidth], png::quantize(kSeparatorValue));
}

TEST(Grid, MultiImageReproducible) {
  const auto set = planted_set();
  const auto zs = latents(7, 3);
  const auto a = render_matrix_multi_image(zs, Dimension::health, set, WalkSpec{});
  const auto b = render_matrix_multi_image(zs, Dimension::health, set, WalkSpec{});
  ASSERT_EQ(a.manifest.rows, 3);
  for (std::size_t i = 0; i < a.cells.size(); ++i) EXPECT_EQ(png::encode(a.cells[i]), png::encode(b.cells[i]));
  EXPECT_EQ(a.manifest.composite_sha256, b.manifest.composite_sha256);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(a.cell(r, 3), generate(zs[r]));
  EXPECT_LE(a.manifest.max_other_decision_drift, 1e-8);
  EXPECT_THROW(render_matrix_multi_image({}, Dimension::health, set, WalkSpec{}), InvalidArgument);
}

TEST(Grid, WrittenFilesMatchManifest) {
  testutil::TempDir dir("grid");
  const auto set = planted_set();
  auto g = render_matrix_single_image(latents(8, 1)[0], set, WalkSpec{});
  write_grid(g, dir.path());
  const auto j = io::json::parse(io::read_text(dir.path() / "grid.json"));
  EXPECT_EQ(j.at("rows"), 3);
  EXPECT_EQ(j.at("cols"), 7);
  EXPECT_EQ(j.at("cells").size(), 21u);
  EXPECT_EQ(j.at("composite").at("sha256"), io::sha256(io::read_text(dir.path() / "grid.png")));
  for (const auto& c : j.at("cells")) {
    const auto bytes = io::read_text(dir.path() / c.at("image").get<std::string>());
    EXPECT_EQ(c.at("sha256"), io::sha256(bytes));
  }
  EXPECT_EQ(png::read(dir.path() / "cells/r2_c6.png"), png::to_raster(png::to_gray(g.cell(2, 6))));
}
