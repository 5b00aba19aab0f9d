#pragma once

// Semantic boundaries: extreme-quantile labeling, a linear soft-margin SVM,
// precision/recall/F1 on a balanced validation split, and subspace
// projection of boundary normals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "streetlatent/error.hpp"
#include "streetlatent/io.hpp"
#include "streetlatent/latent.hpp"
#include "streetlatent/random.hpp"
#include "streetlatent/world.hpp"

namespace streetlatent {

enum class LatentSource { hidden_true, optimize, encode, encode_refined };

inline std::string to_string(LatentSource s) {
  switch (s) {
    case LatentSource::hidden_true: return "hidden-true";
    case LatentSource::optimize: return "optimize";
    case LatentSource::encode: return "encode";
    case LatentSource::encode_refined: return "encode_refined";
  }
  return "?";
}

inline LatentSource parse_latent_source(const std::string& s) {
  for (auto v : {LatentSource::hidden_true, LatentSource::optimize, LatentSource::encode,
                 LatentSource::encode_refined})
    if (to_string(v) == s) return v;
  throw InvalidArgument("unknown latent source '" + s + "'");
}

struct LabeledSet {
  std::vector<LatentCode> latents;
  std::vector<int> labels;  // -1 or +1
  Dimension dimension = Dimension::income;
  double fraction = 0.2;

  std::size_t size() const { return latents.size(); }
  std::size_t count(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }
};

inline constexpr double kDefaultLabelFraction = 0.2;
inline constexpr double kValidationShare = 0.2;

/// Bottom `fraction` of ranks -> -1, top `fraction` -> +1 (higher rank is
/// less deprived). A balanced kValidationShare of the labeled pool is held
/// out: the same number of each class, chosen by a seeded shuffle.
inline std::pair<LabeledSet, LabeledSet> label_extremes(const DatasetManifest& manifest, Dimension dim,
                                                        std::span<const LatentCode> latents,
                                                        double fraction = kDefaultLabelFraction,
                                                        std::uint64_t split_seed = 0) {
  if (!(fraction > 0.0 && fraction <= 0.5)) throw InvalidArgument("label fraction must lie in (0, 0.5]");
  const std::size_t n = manifest.size();
  if (static_cast<double>(n) < 10.0 / fraction - 1e-9)
    throw InvalidArgument("need at least " + std::to_string(static_cast<int>(std::ceil(10.0 / fraction))) +
                          " entries to label extremes at this fraction");
  if (latents.size() != n)
    throw InvalidArgument("missing latents for the requested source (" + std::to_string(latents.size()) +
                          " of " + std::to_string(n) + ")");

  const auto k = static_cast<int>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> neg, pos;
  for (std::size_t i = 0; i < n; ++i) {
    const int r = manifest.entries[i].record.rank(dim);
    if (r <= k) neg.push_back(i);
    else if (r > static_cast<int>(n) - k) pos.push_back(i);
  }

  // Seeded Fisher-Yates per class so the split is independent of entry order.
  auto shuffle = [&](std::vector<std::size_t>& v, std::uint64_t salt) {
    rng::Sequence seq(rng::derive(split_seed, index_of(dim), salt), rng::Stream::split);
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(seq.uniform() * static_cast<double>(i));
      std::swap(v[i - 1], v[std::min(j, i - 1)]);
    }
  };
  shuffle(neg, 0);
  shuffle(pos, 1);

  const auto pool = neg.size() + pos.size();
  auto held = static_cast<std::size_t>(std::llround(kValidationShare * static_cast<double>(pool)));
  held -= held % 2;
  const std::size_t per_class = std::min({held / 2, neg.size(), pos.size()});

  LabeledSet train, val;
  train.dimension = val.dimension = dim;
  train.fraction = val.fraction = fraction;
  auto put = [&](const std::vector<std::size_t>& idx, int label) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto& dst = i < per_class ? val : train;
      dst.latents.push_back(latents[idx[i]]);
      dst.labels.push_back(label);
    }
  };
  put(neg, -1);
  put(pos, +1);
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;

  static MetricsReport from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
    MetricsReport m{tp, fp, tn, fn};
    m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
  }
};

inline io::json to_json(const MetricsReport& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
          {"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}};
}

inline MetricsReport metrics_from_json(const io::json& j) {
  MetricsReport m;
  m.tp = j.at("tp").get<std::size_t>();
  m.fp = j.at("fp").get<std::size_t>();
  m.tn = j.at("tn").get<std::size_t>();
  m.fn = j.at("fn").get<std::size_t>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  return m;
}

// ---------------------------------------------------------------------------
// Linear SVM

struct SvmOptions {
  double c = 1.0;
  double tol = 1e-6;
  int max_iter = 100000;
  int check_every = 1000;  // iterations between convergence checks
};

struct SvmSolution {
  std::vector<double> weights;
  double bias = 0.0;
  double primal = 0.0;
  int iterations = 0;
};

/// Soft-margin primal  (1/(2 C n)) |w|^2 + (1/n) sum max(0, 1 - y (w.x + b)),
/// minimized by full-batch subgradient descent with steps 1/(lambda (t + t0)),
/// lambda = 1/(C n), projection onto |w| <= 1/sqrt(lambda), and tracking of
/// the best primal iterate. Stops when the best primal improves by less than
/// `tol` across `check_every` iterations. Fully deterministic; negating all
/// labels negates the solution exactly.
inline SvmSolution solve_linear_svm(std::span<const LatentCode> x, std::span<const int> y, const SvmOptions& opts) {
  const std::size_t n = x.size();
  if (n == 0 || n != y.size()) throw InvalidArgument("SVM needs matching, nonempty features and labels");
  const std::size_t d = x[0].size();
  for (const auto& v : x)
    if (v.size() != d) throw LengthMismatch(v.size(), d);
  const double lambda = 1.0 / (opts.c * static_cast<double>(n));
  const double radius = 1.0 / std::sqrt(lambda);

  auto primal = [&](const std::vector<double>& w, double b) {
    double hinge = 0.0;
    for (std::size_t i = 0; i < n; ++i) hinge += std::max(0.0, 1.0 - y[i] * (dot(w, x[i].values()) + b));
    return 0.5 * lambda * dot(w, w) + hinge / static_cast<double>(n);
  };

  std::vector<double> w(d, 0.0), gw(d);
  double b = 0.0;
  SvmSolution best{w, b, primal(w, b), 0};
  double checkpoint = best.primal;
  const double t0 = 2.0;  // damps the first, largest steps
  int t = 1;
  for (; t <= opts.max_iter; ++t) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = x[i].values();
      if (y[i] * (dot(w, xi) + b) < 1.0) {
        for (std::size_t k = 0; k < d; ++k) gw[k] -= y[i] * xi[k];
        gb -= y[i];
      }
    }
    const double eta = 1.0 / (lambda * (t + t0));
    for (std::size_t k = 0; k < d; ++k) w[k] -= eta * (lambda * w[k] + gw[k] / static_cast<double>(n));
    b -= eta * gb / static_cast<double>(n);
    const double wn = std::sqrt(dot(w, w));
    if (wn > radius)
      for (double& v : w) v *= radius / wn;

    const double p = primal(w, b);
    if (p < best.primal) best = {w, b, p, t};
    if (t % opts.check_every == 0) {
      if (checkpoint - best.primal < opts.tol) break;
      checkpoint = best.primal;
    }
  }
  best.iterations = std::min(t, opts.max_iter);
  return best;
}

struct SemanticBoundary {
  Dimension dimension = Dimension::income;
  LatentCode normal;      // unit length
  double offset = 0.0;    // decision value f(z) = normal . z + offset
  LatentCode raw_normal;  // SVM weights before normalization
  double raw_offset = 0.0;
  MetricsReport train_metrics;
  SvmOptions solver;
  double primal = 0.0;
  int iterations = 0;

  double decision(const LatentCode& z) const { return dot(normal, z) + offset; }
};

inline int predict_sign(double decision_value) { return decision_value >= 0.0 ? +1 : -1; }

inline MetricsReport confusion(std::span<const int> predicted, std::span<const int> actual) {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] > 0) (actual[i] > 0 ? tp : fp)++;
    else (actual[i] > 0 ? fn : tn)++;
  }
  return MetricsReport::from_counts(tp, fp, tn, fn);
}

/// Predictions sign(n.z + b) with 0 -> +1; metrics for the +1 class.
inline MetricsReport evaluate(const SemanticBoundary& boundary, const LabeledSet& set) {
  if (set.size() == 0) throw InvalidArgument("cannot evaluate on an empty set");
  std::vector<int> pred;
  pred.reserve(set.size());
  for (const auto& z : set.latents) pred.push_back(predict_sign(boundary.decision(z)));
  return confusion(pred, set.labels);
}

inline SemanticBoundary fit_boundary(const LabeledSet& train, const SvmOptions& opts = {}) {
  if (train.count(+1) == 0 || train.count(-1) == 0)
    throw InvalidArgument("SVM needs both classes in the training set");
  for (const auto& z : train.latents)
    for (double v : z.values())
      if (!std::isfinite(v)) throw InvalidArgument("non-finite feature");
  const auto sol = solve_linear_svm(train.latents, train.labels, opts);
  const double scale = std::sqrt(dot(sol.weights, sol.weights));
  if (scale < 1e-12) throw DegenerateVector("SVM returned a zero weight vector");

  SemanticBoundary b;
  b.dimension = train.dimension;
  b.raw_normal = LatentCode(sol.weights);
  b.raw_offset = sol.bias;
  b.normal = normalize(b.raw_normal);
  b.offset = sol.bias / scale;
  b.solver = opts;
  b.primal = sol.primal;
  b.iterations = sol.iterations;
  b.train_metrics = evaluate(b, train);
  return b;
}

// ---------------------------------------------------------------------------
// Subspace projection

struct ProjectedDirection {
  LatentCode normal;  // unit length
  LatentCode raw;     // before renormalization
};

inline constexpr double kParallelThreshold = 1e-8;

/// n1 - (n1 . n2) n2, renormalized. Inputs are normalized first.
inline ProjectedDirection orthogonalize(const LatentCode& n1, const LatentCode& n2) {
  const LatentCode a = normalize(n1), b = normalize(n2);
  const LatentCode raw = axpy(a, -dot(a, b), b);
  if (norm(raw) < kParallelThreshold) throw ParallelVectors("directions are (nearly) parallel");
  // Second pass removes the rounding residue of the first.
  const LatentCode cleaned = axpy(raw, -dot(raw, b), b);
  return {normalize(cleaned), raw};
}

struct ConditionedBoundary {
  Dimension dimension = Dimension::income;
  LatentCode normal;      // conditioned, unit length
  LatentCode raw_normal;  // projection before renormalization
  double offset = 0.0;
  std::vector<Dimension> conditioned_against;
  MetricsReport metrics;

  double decision(const LatentCode& z) const { return dot(normal, z) + offset; }
};

struct ConditionedSet {
  std::vector<Dimension> order;
  std::vector<ConditionedBoundary> boundaries;  // in `order`

  const ConditionedBoundary& at(Dimension d) const {
    for (const auto& b : boundaries)
      if (b.dimension == d) return b;
    throw InvalidArgument("no conditioned boundary for " + to_string(d));
  }
  bool contains(Dimension d) const {
    return std::any_of(boundaries.begin(), boundaries.end(), [&](const auto& b) { return b.dimension == d; });
  }
};

/// Sequential Gram-Schmidt in the given order: each normal is projected off
/// every previously conditioned normal and renormalized.
inline ConditionedSet orthogonalize_set(const std::vector<SemanticBoundary>& boundaries) {
  if (boundaries.size() < 2 || boundaries.size() > 3)
    throw InvalidArgument("orthogonalize_set takes 2 or 3 boundaries");
  ConditionedSet out;
  for (const auto& b : boundaries) {
    if (out.contains(b.dimension)) throw InvalidArgument("duplicate dimension " + to_string(b.dimension));
    ConditionedBoundary c;
    c.dimension = b.dimension;
    c.offset = b.offset;
    c.metrics = b.train_metrics;
    LatentCode v = normalize(b.normal);
    LatentCode raw = v;
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& prev : out.boundaries) v = axpy(v, -dot(v, prev.normal), prev.normal);
    for (const auto& prev : out.boundaries) {
      raw = axpy(raw, -dot(raw, prev.normal), prev.normal);
      c.conditioned_against.push_back(prev.dimension);
    }
    if (norm(v) < kParallelThreshold)
      throw ParallelVectors(to_string(b.dimension) + " collapses onto the span of the earlier boundaries");
    c.normal = normalize(v);
    c.raw_normal = raw;
    out.order.push_back(b.dimension);
    out.boundaries.push_back(std::move(c));
  }
  return out;
}

inline double max_pairwise_dot(const ConditionedSet& set) {
  double m = 0.0;
  for (std::size_t i = 0; i < set.boundaries.size(); ++i)
    for (std::size_t j = i + 1; j < set.boundaries.size(); ++j)
      m = std::max(m, std::abs(dot(set.boundaries[i].normal, set.boundaries[j].normal)));
  return m;
}

// ---------------------------------------------------------------------------
// Serialization

inline io::json to_json(const SvmOptions& o) {
  return {{"type", "linear-svm-subgradient"}, {"C", o.c}, {"tol", o.tol}, {"max_iter", o.max_iter}};
}

inline io::json to_json(const SemanticBoundary& b) {
  io::json j;
  j["dimension"] = to_string(b.dimension);
  j["normal"] = io::to_json(b.normal);
  j["offset"] = b.offset;
  j["conditioned_against"] = io::json::array();
  j["raw_normal"] = io::to_json(b.raw_normal);
  j["metrics"] = to_json(b.train_metrics);
  auto solver = to_json(b.solver);
  solver["iterations"] = b.iterations;
  solver["primal"] = b.primal;
  solver["raw_offset"] = b.raw_offset;
  j["solver"] = std::move(solver);
  return j;
}

inline SemanticBoundary boundary_from_json(const io::json& j) {
  SemanticBoundary b;
  b.dimension = parse_dimension(j.at("dimension").get<std::string>());
  b.normal = io::latent_from_json(j.at("normal"));
  b.offset = j.at("offset").get<double>();
  b.raw_normal = io::latent_from_json(j.at("raw_normal"));
  b.train_metrics = metrics_from_json(j.at("metrics"));
  const auto& s = j.at("solver");
  b.solver.c = s.value("C", 1.0);
  b.solver.tol = s.value("tol", 1e-6);
  b.solver.max_iter = s.value("max_iter", 100000);
  b.iterations = s.value("iterations", 0);
  b.primal = s.value("primal", 0.0);
  b.raw_offset = s.value("raw_offset", 0.0);
  if (std::abs(norm(b.normal) - 1.0) > 1e-10) throw IoError("boundary normal is not unit length");
  return b;
}

inline io::json to_json(const ConditionedBoundary& b, const SvmOptions& solver) {
  io::json j;
  j["dimension"] = to_string(b.dimension);
  j["normal"] = io::to_json(b.normal);
  j["offset"] = b.offset;
  io::json against = io::json::array();
  for (auto d : b.conditioned_against) against.push_back(to_string(d));
  j["conditioned_against"] = std::move(against);
  j["raw_normal"] = io::to_json(b.raw_normal);
  j["metrics"] = to_json(b.metrics);
  j["solver"] = to_json(solver);
  return j;
}

inline io::json to_json(const ConditionedSet& s, const SvmOptions& solver = {}) {
  io::json j;
  io::json order = io::json::array();
  for (auto d : s.order) order.push_back(to_string(d));
  j["order"] = std::move(order);
  j["max_pairwise_dot"] = max_pairwise_dot(s);
  io::json bs = io::json::array();
  for (const auto& b : s.boundaries) bs.push_back(to_json(b, solver));
  j["boundaries"] = std::move(bs);
  return j;
}

inline ConditionedSet conditioned_set_from_json(const io::json& j) {
  ConditionedSet s;
  for (const auto& d : j.at("order")) s.order.push_back(parse_dimension(d.get<std::string>()));
  for (const auto& x : j.at("boundaries")) {
    ConditionedBoundary b;
    b.dimension = parse_dimension(x.at("dimension").get<std::string>());
    b.normal = io::latent_from_json(x.at("normal"));
    b.raw_normal = io::latent_from_json(x.at("raw_normal"));
    b.offset = x.at("offset").get<double>();
    for (const auto& d : x.at("conditioned_against")) b.conditioned_against.push_back(parse_dimension(d.get<std::string>()));
    b.metrics = metrics_from_json(x.at("metrics"));
    if (std::abs(norm(b.normal) - 1.0) > 1e-10) throw IoError("conditioned normal is not unit length");
    s.boundaries.push_back(std::move(b));
  }
  if (s.order.size() != s.boundaries.size()) throw IoError("conditioning order does not match boundaries");
  return s;
}

}  // namespace streetlatent
