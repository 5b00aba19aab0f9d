#pragma once

// Inversion: recover latent codes for images. One optimization-based
// projector (finite-difference descent on pixel MSE) and one learned
// inverter (closed-form ridge encoder, optionally refined by residual
// iterations), plus a method comparison that feeds each method's latents to
// the boundary fit.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "streetlatent/error.hpp"
#include "streetlatent/io.hpp"
#include "streetlatent/latent.hpp"
#include "streetlatent/random.hpp"
#include "streetlatent/scenegen.hpp"
#include "streetlatent/semantics.hpp"
#include "streetlatent/world.hpp"

namespace streetlatent {

enum class InversionMethod { optimize, encode, encode_refined };

inline std::string to_string(InversionMethod m) {
  switch (m) {
    case InversionMethod::optimize: return "optimize";
    case InversionMethod::encode: return "encode";
    case InversionMethod::encode_refined: return "encode_refined";
  }
  return "?";
}

inline InversionMethod parse_inversion_method(const std::string& s) {
  for (auto m : {InversionMethod::optimize, InversionMethod::encode, InversionMethod::encode_refined})
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown inversion method '" + s + "'");
}

inline LatentSource latent_source_of(InversionMethod m) {
  switch (m) {
    case InversionMethod::optimize: return LatentSource::optimize;
    case InversionMethod::encode: return LatentSource::encode;
    case InversionMethod::encode_refined: return LatentSource::encode_refined;
  }
  return LatentSource::hidden_true;
}

struct InversionResult {
  LatentCode latent;
  std::vector<double> loss_trace;  // best-so-far pixel MSE, non-increasing
  int steps_used = 0;
  InversionMethod method = InversionMethod::optimize;
  double elapsed = 0.0;  // seconds

  double final_loss() const { return loss_trace.empty() ? 0.0 : loss_trace.back(); }
};

inline bool is_non_increasing(std::span<const double> trace) {
  for (std::size_t i = 1; i < trace.size(); ++i)
    if (trace[i] > trace[i - 1]) return false;
  return true;
}

inline io::json to_json(const InversionResult& r, const std::string& image_id) {
  io::json j;
  j["image_id"] = image_id;
  j["method"] = to_string(r.method);
  j["final_loss"] = r.final_loss();
  j["steps_used"] = r.steps_used;
  j["latent"] = io::to_json(r.latent);
  j["loss_trace"] = r.loss_trace;
  return j;
}

inline InversionResult inversion_result_from_json(const io::json& j) {
  InversionResult r;
  r.method = parse_inversion_method(j.at("method").get<std::string>());
  r.latent = io::latent_from_json(j.at("latent"));
  r.loss_trace = j.at("loss_trace").get<std::vector<double>>();
  r.steps_used = j.at("steps_used").get<int>();
  return r;
}

// ---------------------------------------------------------------------------
// Optimization-based projector

enum class Descent { gauss_newton, gradient };

struct OptimizeConfig {
  int steps = 500;          // per restart
  double step_size = 1.0;   // initial line-search multiplier on the descent direction
  int restarts = 3;
  double fd_step = 1e-2;    // central-difference step h
  std::uint64_t seed = 0;
  Descent descent = Descent::gauss_newton;
  double max_step = 1.0;    // latent-space length cap per step
  double damping = 1e-6;    // relative Levenberg-Marquardt damping
  std::vector<int> pyramid{16, 8, 4, 2, 1};  // mean-pool factors, coarse to fine
  int stage_steps = 15;     // max steps on any coarse level
  double stage_rel_tol = 1e-3;
  int stall_steps = 20;     // finest level: stop after this many steps with
  double stall_rel_tol = 1e-4;  // less than this relative improvement
  double stop_loss = 1e-5;  // finish early (and skip later restarts) at or below this MSE
  int max_halvings = 8;

  void validate() const {
    if (steps <= 0 || restarts <= 0 || !(step_size > 0) || !(fd_step > 0) || !(max_step > 0))
      throw InvalidArgument("optimize config values must be positive");
    if (pyramid.empty() || pyramid.back() != 1)
      throw InvalidArgument("pyramid must end at full resolution (factor 1)");
    for (int f : pyramid)
      if (f < 1 || kImageWidth % f != 0) throw InvalidArgument("pyramid factors must divide 64");
  }
};

namespace detail {

inline Eigen::VectorXd pooled(std::span<const double> px, int factor) {
  if (factor == 1) return Eigen::Map<const Eigen::VectorXd>(px.data(), static_cast<Eigen::Index>(px.size()));
  const int n = kImageWidth / factor;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n * n);
  const double w = 1.0 / (factor * factor);
  for (int y = 0; y < kImageHeight; ++y)
    for (int x = 0; x < kImageWidth; ++x) out[(y / factor) * n + x / factor] += w * px[y * kImageWidth + x];
  return out;
}

inline Eigen::VectorXd pooled(const RasterImage& img, int factor) { return pooled(img.pixels(), factor); }

}  // namespace detail

/// Initial latent for restart `r`: the zero vector first, then truncated
/// (psi = 0.5) normal draws.
inline LatentCode restart_init(const OptimizeConfig& config, std::size_t dim, int r) {
  if (r == 0) return LatentCode::zeros(dim);
  return sample_latent(SamplingConfig(rng::derive(config.seed, 0, static_cast<std::uint64_t>(r)), 1, 0.5, dim), 0);
}

/// Minimizes the pixel MSE of generate(z) against `target` with central
/// finite-difference derivatives. Each restart walks a mean-pool pyramid from
/// coarse to fine; on each level the descent direction comes from the pooled
/// Jacobian (damped Gauss-Newton by default, plain negative gradient
/// optionally) and trial steps are halved until the pooled loss decreases.
/// The best full-resolution iterate over all restarts is returned, and the
/// trace records its loss after every step.
inline InversionResult project_optimize(const RasterImage& target, const OptimizeConfig& config,
                                        std::size_t dim = kDefaultLatentDim) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto D = static_cast<Eigen::Index>(dim);

  InversionResult result;
  result.method = InversionMethod::optimize;
  double best = std::numeric_limits<double>::infinity();
  LatentCode best_z = LatentCode::zeros(dim);

  auto consider = [&](const LatentCode& z, const RasterImage& img) {
    const double mse = mean_squared_error(img, target);
    if (mse < best) {
      best = mse;
      best_z = z;
    }
  };

  for (int r = 0; r < config.restarts && best > config.stop_loss; ++r) {
    LatentCode z = restart_init(config, dim, r);
    RasterImage img = generate(z);
    consider(z, img);
    if (result.loss_trace.empty()) result.loss_trace.push_back(best);

    std::size_t level = 0;
    Eigen::VectorXd tgt = detail::pooled(target, config.pyramid[0]);
    auto level_loss = [&](const Eigen::VectorXd& v) { return (v - tgt).squaredNorm() / static_cast<double>(v.size()); };
    Eigen::VectorXd cur_vec = detail::pooled(img, config.pyramid[0]);
    double cur = level_loss(cur_vec);
    double step = config.step_size;
    int on_level = 0;
    std::vector<double> level_history;

    for (int s = 0; s < config.steps && best > config.stop_loss; ++s) {
      const int factor = config.pyramid[level];
      Eigen::MatrixXd jac(cur_vec.size(), D);
      for (Eigen::Index j = 0; j < D; ++j) {
        const auto e = LatentCode::basis(dim, static_cast<std::size_t>(j));
        const auto plus = detail::pooled(generate(axpy(z, config.fd_step, e)), factor);
        const auto minus = detail::pooled(generate(axpy(z, -config.fd_step, e)), factor);
        jac.col(j) = (plus - minus) / (2.0 * config.fd_step);
      }
      const Eigen::VectorXd residual = cur_vec - tgt;
      const Eigen::VectorXd grad = jac.transpose() * residual * (2.0 / static_cast<double>(residual.size()));

      Eigen::VectorXd dir;
      if (config.descent == Descent::gauss_newton) {
        Eigen::MatrixXd h = jac.transpose() * jac;
        h.diagonal().array() += config.damping * std::max(h.trace() / static_cast<double>(D), 1e-300);
        dir = -h.ldlt().solve(jac.transpose() * residual);
      } else {
        dir = -grad;
      }
      if (!dir.allFinite()) dir = -grad;
      if (dir.norm() > config.max_step) dir *= config.max_step / dir.norm();

      bool accepted = false;
      double rel = 0.0;
      double trial_step = config.descent == Descent::gauss_newton ? config.step_size : step;
      for (int k = 0; k <= config.max_halvings; ++k, trial_step *= 0.5) {
        std::vector<double> next(dim);
        for (std::size_t i = 0; i < dim; ++i) next[i] = z[i] + trial_step * dir[static_cast<Eigen::Index>(i)];
        LatentCode zn(std::move(next));
        RasterImage in = generate(zn);
        Eigen::VectorXd v = detail::pooled(in, factor);
        const double l = level_loss(v);
        if (l < cur) {
          rel = (cur - l) / std::max(cur, 1e-300);
          cur = l;
          cur_vec = std::move(v);
          z = std::move(zn);
          consider(z, in);
          accepted = true;
          if (config.descent == Descent::gradient) step = 2.0 * trial_step;
          break;
        }
      }
      result.loss_trace.push_back(best);
      ++result.steps_used;
      ++on_level;

      const bool finest = level + 1 == config.pyramid.size();
      if (finest) {
        level_history.push_back(cur);
        const auto n = level_history.size();
        const bool stalled = n > static_cast<std::size_t>(config.stall_steps) &&
                             level_history[n - 1 - config.stall_steps] - cur <
                                 config.stall_rel_tol * level_history[n - 1 - config.stall_steps];
        if (!accepted || stalled) break;
      } else if (!accepted || rel < config.stage_rel_tol || on_level >= config.stage_steps) {
        ++level;
        on_level = 0;
        tgt = detail::pooled(target, config.pyramid[level]);
        cur_vec = detail::pooled(generate(z), config.pyramid[level]);
        cur = level_loss(cur_vec);
        step = config.step_size;
      }
    }
  }

  result.latent = best_z;
  result.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Learned inverter

/// Affine map from flattened pixels to latents: z = W x + bias.
struct Encoder {
  std::size_t dim = 0;
  std::vector<double> weights;  // dim x kPixelCount, row-major
  std::vector<double> bias;     // dim
  std::size_t trained_on = 0;
  double lambda = 0.0;
};

inline LatentCode encode_pixels(const Encoder& e, std::span<const double> pixels) {
  if (pixels.size() != kPixelCount) throw LengthMismatch(pixels.size(), kPixelCount);
  std::vector<double> z(e.dim);
  for (std::size_t i = 0; i < e.dim; ++i) {
    double a = e.bias[i];
    const double* row = e.weights.data() + i * kPixelCount;
    for (std::size_t k = 0; k < kPixelCount; ++k) a += row[k] * pixels[k];
    z[i] = a;
  }
  return LatentCode(std::move(z));
}

inline LatentCode encode(const Encoder& e, const RasterImage& image) { return encode_pixels(e, image.pixels()); }

/// Closed-form ridge regression on centered pixels (the bias is not
/// penalized), solved in whichever of the primal or dual forms is smaller.
/// The objective is the mean squared error plus lambda |W|^2, so the normal
/// equations carry n * lambda on the diagonal.
inline Encoder train_encoder_pixels(std::span<const std::vector<double>> pixels, std::span<const LatentCode> latents,
                                    double lambda) {
  const std::size_t n = pixels.size();
  if (n != latents.size()) throw LengthMismatch(n, latents.size());
  if (n == 0) throw InvalidArgument("encoder needs training pairs");
  const std::size_t dim = latents[0].size();
  if (n < dim + 1) throw InvalidArgument("encoder needs at least D+1 = " + std::to_string(dim + 1) + " pairs");
  if (!(lambda > 0.0)) throw InvalidArgument("ridge lambda must be positive");

  const auto N = static_cast<Eigen::Index>(n), P = static_cast<Eigen::Index>(kPixelCount),
             Dd = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd x(N, P), z(N, Dd);
  for (Eigen::Index i = 0; i < N; ++i) {
    if (pixels[i].size() != kPixelCount) throw LengthMismatch(pixels[i].size(), kPixelCount);
    if (latents[i].size() != dim) throw LengthMismatch(latents[i].size(), dim);
    for (Eigen::Index k = 0; k < P; ++k) x(i, k) = pixels[i][k];
    for (Eigen::Index k = 0; k < Dd; ++k) z(i, k) = latents[i][k];
  }
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const Eigen::RowVectorXd z_mean = z.colwise().mean();
  x.rowwise() -= x_mean;
  z.rowwise() -= z_mean;

  Eigen::MatrixXd w;  // P x D
  if (N <= P) {
    Eigen::MatrixXd gram = x * x.transpose();
    gram.diagonal().array() += lambda * static_cast<double>(n);
    w = x.transpose() * gram.ldlt().solve(z);
  } else {
    Eigen::MatrixXd cov = x.transpose() * x;
    cov.diagonal().array() += lambda * static_cast<double>(n);
    w = cov.ldlt().solve(x.transpose() * z);
  }

  Encoder e;
  e.dim = dim;
  e.trained_on = n;
  e.lambda = lambda;
  e.weights.resize(dim * kPixelCount);
  e.bias.resize(dim);
  for (Eigen::Index i = 0; i < Dd; ++i) {
    double b = z_mean[i];
    for (Eigen::Index k = 0; k < P; ++k) {
      e.weights[i * P + k] = w(k, i);
      b -= w(k, i) * x_mean[k];
    }
    e.bias[i] = b;
  }
  for (double v : e.weights)
    if (!std::isfinite(v)) throw Error("encoder training produced non-finite weights");
  return e;
}

inline Encoder train_encoder(std::span<const RasterImage> images, std::span<const LatentCode> latents, double lambda) {
  std::vector<std::vector<double>> px;
  px.reserve(images.size());
  for (const auto& img : images) px.emplace_back(img.pixels().begin(), img.pixels().end());
  return train_encoder_pixels(px, latents, lambda);
}

/// Encoder trained on `count` fresh generator pairs (truncated latents).
inline Encoder train_encoder_on_generator(std::size_t count, std::uint64_t seed, double lambda,
                                          std::size_t dim = kDefaultLatentDim, double psi = kDefaultPsi) {
  SamplingConfig cfg(rng::derive(seed, 0, static_cast<std::uint64_t>(rng::Stream::encoder_pairs)), count, psi, dim);
  const auto zs = sample_latents(cfg);
  std::vector<RasterImage> images;
  images.reserve(zs.size());
  for (const auto& z : zs) images.push_back(generate(z));
  return train_encoder(images, zs, lambda);
}

inline InversionResult encode_result(const Encoder& e, const RasterImage& image) {
  const auto start = std::chrono::steady_clock::now();
  InversionResult r;
  r.method = InversionMethod::encode;
  r.latent = encode(e, image);
  r.loss_trace = {mean_squared_error(generate(r.latent), image)};
  r.steps_used = 1;
  r.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline constexpr double kRefineDamping = 0.5;

/// Residual refinement: z_{k+1} = z_k + 0.5 (E(x) - E(G(z_k))). Round 1 is
/// the plain encoding; the best-MSE iterate is kept.
inline InversionResult encode_refine(const Encoder& e, const RasterImage& image, int rounds) {
  if (rounds < 1) throw InvalidArgument("refinement needs at least one round");
  const auto start = std::chrono::steady_clock::now();
  InversionResult r;
  r.method = InversionMethod::encode_refined;
  const LatentCode target_code = encode(e, image);
  LatentCode z = target_code;
  RasterImage rendered = generate(z);
  double best = mean_squared_error(rendered, image);
  r.latent = z;
  r.loss_trace.push_back(best);
  for (int k = 1; k < rounds; ++k) {
    const LatentCode back = encode(e, rendered);
    std::vector<double> next(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) next[i] = z[i] + kRefineDamping * (target_code[i] - back[i]);
    z = LatentCode(std::move(next));
    rendered = generate(z);
    const double mse = mean_squared_error(rendered, image);
    if (mse < best) {
      best = mse;
      r.latent = z;
    }
    r.loss_trace.push_back(best);
  }
  r.steps_used = rounds;
  r.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline io::json to_json(const Encoder& e) {
  io::json j;
  j["dim"] = e.dim;
  j["pixels"] = kPixelCount;
  j["trained_on"] = e.trained_on;
  j["lambda"] = e.lambda;
  j["bias"] = e.bias;
  j["weights"] = e.weights;
  return j;
}

inline Encoder encoder_from_json(const io::json& j) {
  Encoder e;
  e.dim = j.at("dim").get<std::size_t>();
  e.trained_on = j.at("trained_on").get<std::size_t>();
  e.lambda = j.at("lambda").get<double>();
  e.bias = j.at("bias").get<std::vector<double>>();
  e.weights = j.at("weights").get<std::vector<double>>();
  if (e.bias.size() != e.dim || e.weights.size() != e.dim * kPixelCount) throw IoError("encoder shape mismatch");
  return e;
}

// ---------------------------------------------------------------------------
// Method comparison

struct InversionSettings {
  OptimizeConfig optimize;
  int refine_rounds = 5;
};

/// Runs one method over a batch. Optimize seeds are derived per image index.
inline std::vector<InversionResult> invert_all(InversionMethod method, std::span<const RasterImage> images,
                                               const Encoder* encoder, const InversionSettings& settings,
                                               std::size_t dim) {
  if (method != InversionMethod::optimize && encoder == nullptr)
    throw InvalidArgument(to_string(method) + " needs a trained encoder");
  std::vector<InversionResult> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    switch (method) {
      case InversionMethod::optimize: {
        OptimizeConfig cfg = settings.optimize;
        cfg.seed = rng::derive(settings.optimize.seed, i, static_cast<std::uint64_t>(rng::Stream::restart));
        out.push_back(project_optimize(images[i], cfg, dim));
        break;
      }
      case InversionMethod::encode: out.push_back(encode_result(*encoder, images[i])); break;
      case InversionMethod::encode_refined:
        out.push_back(encode_refine(*encoder, images[i], settings.refine_rounds));
        break;
    }
  }
  return out;
}

struct ReconstructionStats {
  std::size_t count = 0;
  double mean_mse = 0.0;
  double median_mse = 0.0;
  double max_mse = 0.0;
  double fraction_below_1e3 = 0.0;  // share with final MSE <= 1e-3
  double fraction_1e3_by_step_500 = 0.0;  // share whose trace reaches 1e-3 within 500 steps (all restarts)
  double monotone_fraction = 0.0;   // share with non-increasing traces
  double median_cosine = 0.0;       // against hidden latents, when known
  double mean_steps = 0.0;
  double elapsed = 0.0;             // seconds; excluded from reproducibility checks
};

inline constexpr int kStepBudget = 500;

/// True when the best-so-far trace is at or below `threshold` after at most
/// `steps` steps (entry 0 is the initial loss).
inline bool reached_within(std::span<const double> trace, double threshold, int steps) {
  const auto n = std::min(trace.size(), static_cast<std::size_t>(steps) + 1);
  return n > 0 && trace[n - 1] <= threshold;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline ReconstructionStats summarize(std::span<const InversionResult> results, std::span<const LatentCode> truth) {
  ReconstructionStats s;
  s.count = results.size();
  if (results.empty()) return s;
  std::vector<double> mse, cos;
  std::size_t below = 0, in_budget = 0, monotone = 0;
  double steps = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    mse.push_back(r.final_loss());
    below += r.final_loss() <= 1e-3;
    in_budget += reached_within(r.loss_trace, 1e-3, kStepBudget);
    monotone += is_non_increasing(r.loss_trace);
    steps += r.steps_used;
    s.elapsed += r.elapsed;
    if (i < truth.size()) cos.push_back(cosine(truth[i], r.latent));
  }
  const double n = static_cast<double>(results.size());
  s.mean_mse = std::accumulate(mse.begin(), mse.end(), 0.0) / n;
  s.median_mse = median(mse);
  s.max_mse = *std::max_element(mse.begin(), mse.end());
  s.fraction_below_1e3 = static_cast<double>(below) / n;
  s.fraction_1e3_by_step_500 = static_cast<double>(in_budget) / n;
  s.monotone_fraction = static_cast<double>(monotone) / n;
  s.median_cosine = median(cos);
  s.mean_steps = steps / n;
  return s;
}

struct ComparisonRow {
  Dimension dimension;
  InversionMethod method;
  MetricsReport metrics;
};

struct ComparisonReport {
  std::vector<InversionMethod> methods;
  std::vector<std::pair<InversionMethod, ReconstructionStats>> reconstruction;
  std::vector<ComparisonRow> rows;  // dimension-major within each method
  std::size_t eval_subset_size = 0;

  const ReconstructionStats& stats(InversionMethod m) const {
    for (const auto& [k, v] : reconstruction)
      if (k == m) return v;
    throw InvalidArgument("method not in report: " + to_string(m));
  }
};

struct ComparisonOptions {
  InversionSettings inversion;
  double label_fraction = kDefaultLabelFraction;
  SvmOptions svm;
  std::uint64_t split_seed = 0;
  std::uint64_t eval_seed = 0;
};

/// Index subset of size k chosen by a seeded partial shuffle, sorted.
inline std::vector<std::size_t> eval_subset(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, n);
  rng::Sequence seq(seed, rng::Stream::eval_subset);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(seq.uniform() * static_cast<double>(n - i));
    std::swap(idx[i], idx[std::min(j, n - 1)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Reconstruction statistics on a seeded evaluation subset, then per-method
/// boundary fits on each method's latents for the whole manifest and
/// precision/recall/F1 on the balanced validation split.
/// `precomputed[m]`, when non-empty, supplies results for every manifest
/// entry and skips re-running that method.
inline ComparisonReport compare_methods(
    const DatasetManifest& manifest, std::span<const RasterImage> images, std::span<const LatentCode> hidden,
    const std::vector<InversionMethod>& methods, std::size_t eval_subset_size, const Encoder* encoder,
    const ComparisonOptions& opts = {},
    const std::vector<std::pair<InversionMethod, std::vector<InversionResult>>>& precomputed = {}) {
  if (images.size() != manifest.size()) throw LengthMismatch(images.size(), manifest.size());
  if (methods.empty()) throw InvalidArgument("no inversion methods requested");
  ComparisonReport report;
  report.methods = methods;
  const auto subset = eval_subset(manifest.size(), eval_subset_size, opts.eval_seed);
  report.eval_subset_size = subset.size();

  for (auto method : methods) {
    std::vector<InversionResult> results;
    for (const auto& [m, r] : precomputed)
      if (m == method && r.size() == manifest.size()) results = r;
    if (results.empty()) results = invert_all(method, images, encoder, opts.inversion, manifest.dim);

    std::vector<InversionResult> sub;
    std::vector<LatentCode> sub_truth;
    for (auto i : subset) {
      sub.push_back(results[i]);
      if (i < hidden.size()) sub_truth.push_back(hidden[i]);
    }
    report.reconstruction.emplace_back(method, summarize(sub, sub_truth));

    std::vector<LatentCode> latents;
    latents.reserve(results.size());
    for (const auto& r : results) latents.push_back(r.latent);
    for (auto d : kAllDimensions) {
      auto [train, val] = label_extremes(manifest, d, latents, opts.label_fraction, opts.split_seed);
      const auto boundary = fit_boundary(train, opts.svm);
      report.rows.push_back({d, method, evaluate(boundary, val)});
    }
  }
  return report;
}

inline io::json to_json(const ReconstructionStats& s, bool with_timing = true) {
  io::json j{{"count", s.count},
             {"mean_mse", s.mean_mse},
             {"median_mse", s.median_mse},
             {"max_mse", s.max_mse},
             {"fraction_mse_le_1e-3", s.fraction_below_1e3},
             {"fraction_mse_le_1e-3_by_step_500", s.fraction_1e3_by_step_500},
             {"monotone_fraction", s.monotone_fraction},
             {"median_cosine", s.median_cosine},
             {"mean_steps", s.mean_steps}};
  if (with_timing) j["elapsed_seconds"] = s.elapsed;
  return j;
}

inline io::json to_json(const ComparisonReport& r, bool with_timing = true) {
  io::json j;
  j["eval_subset_size"] = r.eval_subset_size;
  for (const auto& [m, s] : r.reconstruction) j["reconstruction"][to_string(m)] = to_json(s, with_timing);
  io::json rows = io::json::array();
  for (const auto& row : r.rows) {
    auto x = to_json(row.metrics);
    x["dimension"] = to_string(row.dimension);
    x["inversion_method"] = to_string(row.method);
    rows.push_back(std::move(x));
  }
  j["table"] = std::move(rows);
  return j;
}

inline std::string metrics_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  out << "dimension,inversion_method,precision,recall,f1\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& r : rows)
    out << to_string(r.dimension) << "," << to_string(r.method) << "," << r.metrics.precision << ","
        << r.metrics.recall << "," << r.metrics.f1 << "\n";
  return out.str();
}

inline std::string format_table(const ComparisonReport& r) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %-15s %9s %9s %9s\n", "Dimension", "Inversion", "Precision", "Recall", "F1");
  out << buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-10s %-15s %9.3f %9.3f %9.3f\n", to_string(row.dimension).c_str(),
                  to_string(row.method).c_str(), row.metrics.precision, row.metrics.recall, row.metrics.f1);
    out << buf;
  }
  out << "\n";
  std::snprintf(buf, sizeof buf, "%-15s %11s %11s %9s %9s %9s %9s\n", "Inversion", "mean MSE", "median MSE",
                "<=1e-3", "by 500", "monotone", "cos(z)");
  out << buf;
  for (const auto& [m, s] : r.reconstruction) {
    std::snprintf(buf, sizeof buf, "%-15s %11.3e %11.3e %9.3f %9.3f %9.3f %9.3f\n", to_string(m).c_str(), s.mean_mse,
                  s.median_mse, s.fraction_below_1e3, s.fraction_1e3_by_step_500, s.monotone_fraction,
                  s.median_cosine);
    out << buf;
  }
  return out.str();
}

}  // namespace streetlatent
