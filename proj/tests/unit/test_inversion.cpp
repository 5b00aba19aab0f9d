#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "streetlatent/inversion.hpp"

using namespace streetlatent;

namespace {

std::vector<LatentCode> truncated(std::uint64_t seed, std::size_t n) {
  return sample_latents(SamplingConfig(seed, n, 0.5, 16));
}

DatasetManifest manifest_for(const std::vector<LatentCode>& zs, const GroundTruthModel& truth) {
  DatasetManifest m;
  m.dim = 16;
  m.entries.resize(zs.size());
  for (auto d : kAllDimensions) {
    std::vector<double> s;
    for (std::size_t i = 0; i < zs.size(); ++i) s.push_back(score(zs[i], truth, d, noise_seed_for(1, i)));
    const auto ranks = rank_transform(s);
    for (std::size_t i = 0; i < zs.size(); ++i) m.entries[i].record.ranks[index_of(d)] = ranks[i];
  }
  return m;
}

}  // namespace

TEST(Optimize, MidpointTargetIsExact) {
  OptimizeConfig cfg;
  cfg.seed = 3;
  const auto r = project_optimize(generate(LatentCode::zeros(16)), cfg);
  EXPECT_LE(r.final_loss(), 1e-6);
  EXPECT_TRUE(is_non_increasing(r.loss_trace));
}

TEST(Optimize, RecoversMostGeneratorImages) {
  const auto zs = truncated(77, 20);
  int good = 0;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    OptimizeConfig cfg;
    cfg.seed = i;
    const auto r = project_optimize(generate(zs[i]), cfg);
    EXPECT_TRUE(is_non_increasing(r.loss_trace));
    EXPECT_EQ(r.loss_trace.size(), static_cast<std::size_t>(r.steps_used) + 1);
    good += reached_within(r.loss_trace, 1e-3, 500);
  }
  EXPECT_GE(good, 18);
}

TEST(Optimize, OutOfRangeTargetStaysFinite) {
  const RasterImage white(std::vector<double>(kPixelCount, 1.0));
  OptimizeConfig cfg;
  cfg.steps = 60;
  cfg.restarts = 2;
  const auto r = project_optimize(white, cfg);
  EXPECT_TRUE(is_non_increasing(r.loss_trace));
  EXPECT_TRUE(std::isfinite(r.final_loss()));
  EXPECT_GT(r.final_loss(), 0.0);
  EXPECT_LE(r.final_loss(), r.loss_trace.front());
}

TEST(Optimize, ReproducibleAndValidated) {
  const auto z = truncated(5, 1)[0];
  OptimizeConfig cfg;
  cfg.seed = 11;
  cfg.steps = 40;
  const auto a = project_optimize(generate(z), cfg), b = project_optimize(generate(z), cfg);
  EXPECT_EQ(a.latent, b.latent);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  cfg.pyramid = {4, 2};
  EXPECT_THROW(project_optimize(generate(z), cfg), InvalidArgument);
  cfg.pyramid = {3, 1};
  EXPECT_THROW(project_optimize(generate(z), cfg), InvalidArgument);
  OptimizeConfig zero;
  zero.steps = 0;
  EXPECT_THROW(project_optimize(generate(z), zero), InvalidArgument);
}

TEST(Optimize, RestartInitsAreSeeded) {
  OptimizeConfig cfg;
  cfg.seed = 9;
  EXPECT_EQ(restart_init(cfg, 16, 0), LatentCode::zeros(16));
  EXPECT_EQ(restart_init(cfg, 16, 1), restart_init(cfg, 16, 1));
  EXPECT_NE(restart_init(cfg, 16, 1), restart_init(cfg, 16, 2));
}

TEST(Encoder, RecoversSyntheticLinearMap) {
  // Pixels x = M z + c for a fixed random M; ridge with tiny lambda inverts it.
  std::mt19937_64 g(8);
  std::normal_distribution<double> nd;
  std::vector<double> m(kPixelCount * 16), c(kPixelCount);
  for (double& v : m) v = nd(g) * 0.05;
  for (double& v : c) v = 0.5 + 0.1 * nd(g);
  auto render = [&](const LatentCode& z) {
    std::vector<double> x(c);
    for (std::size_t p = 0; p < kPixelCount; ++p)
      for (std::size_t k = 0; k < 16; ++k) x[p] += m[p * 16 + k] * z[k];
    return x;
  };
  const auto train = truncated(1, 200);
  std::vector<std::vector<double>> px;
  for (const auto& z : train) px.push_back(render(z));
  const auto e = train_encoder_pixels(px, train, 1e-8);
  for (const auto& z : truncated(2, 50)) {
    const auto zhat = encode_pixels(e, render(z));
    EXPECT_GE(cosine(zhat, z), 0.999);
  }
}

TEST(Encoder, HugeLambdaCollapsesToBias) {
  const auto train = truncated(4, 40);
  std::vector<RasterImage> images;
  for (const auto& z : train) images.push_back(generate(z));
  const auto e = train_encoder(images, train, 1e12);
  std::vector<double> mean(16, 0.0);
  for (const auto& z : train)
    for (std::size_t k = 0; k < 16; ++k) mean[k] += z[k] / 40.0;
  const auto out = encode(e, generate(truncated(99, 1)[0]));
  for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(out[k], mean[k], 1e-6);
}

TEST(Encoder, RejectsTooFewPairsAndBadLambda) {
  const auto train = truncated(4, 16);
  std::vector<RasterImage> images;
  for (const auto& z : train) images.push_back(generate(z));
  EXPECT_THROW(train_encoder(images, train, 1e-3), InvalidArgument);
  const auto more = truncated(4, 17);
  images.push_back(generate(more[16]));
  EXPECT_NO_THROW(train_encoder(images, more, 1e-3));
  EXPECT_THROW(train_encoder(images, more, 0.0), InvalidArgument);
  EXPECT_THROW(train_encoder(std::span(images).first(10), more, 1e-3), LengthMismatch);
}

TEST(Encoder, GeneratorTrainedQualityAndJson) {
  const auto e = train_encoder_on_generator(600, 5, 1e-3);
  std::vector<double> cos;
  for (const auto& z : truncated(31, 50)) cos.push_back(cosine(encode(e, generate(z)), z));
  EXPECT_GE(median(cos), 0.8);
  const auto back = encoder_from_json(io::json::parse(to_json(e).dump()));
  EXPECT_EQ(back.weights, e.weights);
  EXPECT_EQ(back.bias, e.bias);
  auto bad = to_json(e);
  bad["bias"].erase(0);
  EXPECT_THROW(encoder_from_json(bad), IoError);
}

TEST(Refine, OneRoundEqualsEncodeAndRefiningNeverHurts) {
  const auto e = train_encoder_on_generator(400, 6, 1e-3);
  for (const auto& z : truncated(12, 10)) {
    const auto img = generate(z);
    const auto plain = encode_result(e, img);
    const auto one = encode_refine(e, img, 1);
    EXPECT_EQ(one.latent, plain.latent);
    EXPECT_EQ(one.final_loss(), plain.final_loss());
    const auto five = encode_refine(e, img, 5);
    EXPECT_LE(five.final_loss(), plain.final_loss());
    EXPECT_TRUE(is_non_increasing(five.loss_trace));
    EXPECT_EQ(five.loss_trace.size(), 5u);
  }
  EXPECT_THROW(encode_refine(e, generate(LatentCode::zeros(16)), 0), InvalidArgument);
}

TEST(InversionResult, JsonRoundTripAndMethodNames) {
  InversionResult r;
  r.latent = LatentCode{0.25, -1.0};
  r.loss_trace = {0.5, 0.125, 0.125};
  r.steps_used = 2;
  r.method = InversionMethod::encode_refined;
  const auto back = inversion_result_from_json(io::json::parse(to_json(r, "img_0001").dump()));
  EXPECT_EQ(back.latent, r.latent);
  EXPECT_EQ(back.loss_trace, r.loss_trace);
  EXPECT_EQ(back.method, r.method);
  for (auto m : {InversionMethod::optimize, InversionMethod::encode, InversionMethod::encode_refined})
    EXPECT_EQ(parse_inversion_method(to_string(m)), m);
  EXPECT_THROW(parse_inversion_method("gan"), InvalidArgument);
  EXPECT_FALSE(is_non_increasing(std::vector<double>{1.0, 0.5, 0.6}));
}

TEST(Summaries, ReachedWithinCountsStepsAcrossRestarts) {
  const std::vector<double> trace{0.1, 0.01, 0.002, 0.0009, 0.0001};
  EXPECT_FALSE(reached_within(trace, 1e-3, 2));
  EXPECT_TRUE(reached_within(trace, 1e-3, 3));
  EXPECT_TRUE(reached_within(trace, 1e-3, 500));
  EXPECT_FALSE(reached_within({}, 1e-3, 500));
  InversionResult late;
  late.latent = LatentCode{0.0};
  late.loss_trace.assign(700, 0.5);
  late.loss_trace.back() = 1e-4;
  InversionResult early = late;
  std::fill(early.loss_trace.begin() + 10, early.loss_trace.end(), 1e-4);
  const std::vector<InversionResult> rs{late, early};
  const auto s = summarize(rs, {});
  EXPECT_EQ(s.fraction_below_1e3, 1.0);
  EXPECT_EQ(s.fraction_1e3_by_step_500, 0.5);
}

TEST(Summaries, MedianAndEvalSubset) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  const auto a = eval_subset(100, 20, 7), b = eval_subset(100, 20, 7);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 20u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
  EXPECT_EQ(eval_subset(5, 20, 7).size(), 5u);
}

TEST(CompareMethods, RowsCsvAndF1Identity) {
  const auto truth = make_ground_truth(1, 16);
  const auto zs = truncated(21, 150);
  std::vector<RasterImage> images;
  for (const auto& z : zs) images.push_back(generate(z));
  const auto manifest = manifest_for(zs, truth);
  const auto e = train_encoder_on_generator(400, 8, 1e-3);
  ComparisonOptions opts;
  const std::vector<InversionMethod> methods{InversionMethod::encode, InversionMethod::encode_refined};
  const auto report = compare_methods(manifest, images, zs, methods, 40, &e, opts);
  ASSERT_EQ(report.rows.size(), 6u);
  EXPECT_EQ(report.eval_subset_size, 40u);
  for (const auto& row : report.rows) {
    const auto& m = row.metrics;
    if (m.precision + m.recall > 0) {
      EXPECT_NEAR(m.f1, 2 * m.precision * m.recall / (m.precision + m.recall), 1e-9);
    }
    EXPECT_EQ(m.tp + m.fp + m.tn + m.fn, 12u);  // a fifth of the 60 labeled entries
  }
  EXPECT_LE(report.stats(InversionMethod::encode_refined).mean_mse,
            report.stats(InversionMethod::encode).mean_mse);
  EXPECT_THROW(report.stats(InversionMethod::optimize), InvalidArgument);
  const auto csv = metrics_csv(report.rows);
  EXPECT_EQ(csv.rfind("dimension,inversion_method,precision,recall,f1\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_FALSE(to_json(report, false).dump().find("elapsed") != std::string::npos);
  EXPECT_THROW(compare_methods(manifest, std::span(images).first(10), zs, methods, 40, &e), LengthMismatch);
  EXPECT_THROW(compare_methods(manifest, images, zs, {InversionMethod::encode}, 40, nullptr), InvalidArgument);
}
