#pragma once

// Synthetic socioeconomic ground truth, ordinal deprivation ranks, dataset
// assembly on disk, and the logistic-regression curation filter.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "streetlatent/error.hpp"
#include "streetlatent/io.hpp"
#include "streetlatent/latent.hpp"
#include "streetlatent/png.hpp"
#include "streetlatent/random.hpp"
#include "streetlatent/scenegen.hpp"

namespace streetlatent {

enum class Dimension { income = 0, education = 1, health = 2 };

inline constexpr std::array<Dimension, 3> kAllDimensions{Dimension::income, Dimension::education,
                                                         Dimension::health};

inline std::string to_string(Dimension d) {
  switch (d) {
    case Dimension::income: return "income";
    case Dimension::education: return "education";
    case Dimension::health: return "health";
  }
  return "?";
}

inline Dimension parse_dimension(const std::string& s) {
  for (auto d : kAllDimensions)
    if (to_string(d) == s) return d;
  throw InvalidArgument("unknown dimension '" + s + "' (expected income, education or health)");
}

inline std::size_t index_of(Dimension d) { return static_cast<std::size_t>(d); }

// ---------------------------------------------------------------------------
// Ground truth

struct GroundTruthModel {
  std::array<LatentCode, 3> weights;  // unit vectors, indexed by Dimension
  double noise_sigma = 0.25;
  double target_rho = 0.3;
  std::uint64_t seed = 0;

  const LatentCode& weight(Dimension d) const { return weights[index_of(d)]; }
  std::size_t dim() const { return weights[0].size(); }
};

/// Three unit directions with every pairwise cosine equal to target_rho:
/// w_i = sqrt(rho) u + sqrt(1 - rho) v_i over an orthonormal set {u, v_1, v_2, v_3}.
inline GroundTruthModel make_ground_truth(std::uint64_t seed, std::size_t dim, double target_rho = 0.3,
                                          double noise_sigma = 0.25) {
  if (!(target_rho >= 0.0 && target_rho < 1.0)) throw InvalidArgument("target_rho must lie in [0, 1)");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw InvalidArgument("noise_sigma must be finite and >= 0");
  if (dim < 4) throw InvalidArgument("ground truth needs a latent dimension of at least 4");

  rng::Sequence seq(seed, rng::Stream::ground_truth);
  std::vector<std::vector<double>> basis;
  while (basis.size() < 4) {
    std::vector<double> v(dim);
    for (double& x : v) x = seq.normal();
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : basis) {
        const double p = dot(v, q);
        for (std::size_t i = 0; i < dim; ++i) v[i] -= p * q[i];
      }
    const double n = std::sqrt(dot(v, v));
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }

  GroundTruthModel m;
  m.noise_sigma = noise_sigma;
  m.target_rho = target_rho;
  m.seed = seed;
  const double a = std::sqrt(target_rho), b = std::sqrt(1.0 - target_rho);
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> w(dim);
    for (std::size_t i = 0; i < dim; ++i) w[i] = a * basis[0][i] + b * basis[k + 1][i];
    m.weights[k] = normalize(LatentCode(std::move(w)));
  }
  return m;
}

/// Per-image seed for score noise.
inline std::uint64_t noise_seed_for(std::uint64_t world_seed, std::size_t image_index) {
  return rng::derive(world_seed, image_index);
}

inline double score(const LatentCode& z, const GroundTruthModel& m, Dimension d, std::uint64_t noise_seed) {
  const double eps = m.noise_sigma == 0.0
                         ? 0.0
                         : m.noise_sigma * rng::standard_normal(noise_seed, rng::Stream::score_noise, index_of(d));
  return dot(m.weight(d), z) + eps;
}

inline io::json to_json(const GroundTruthModel& m) {
  io::json j;
  j["seed"] = m.seed;
  j["noise_sigma"] = m.noise_sigma;
  j["target_rho"] = m.target_rho;
  for (auto d : kAllDimensions) j["weights"][to_string(d)] = io::to_json(m.weight(d));
  return j;
}

inline GroundTruthModel ground_truth_from_json(const io::json& j) {
  GroundTruthModel m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.noise_sigma = j.at("noise_sigma").get<double>();
  m.target_rho = j.at("target_rho").get<double>();
  for (auto d : kAllDimensions) m.weights[index_of(d)] = io::latent_from_json(j.at("weights").at(to_string(d)));
  return m;
}

// ---------------------------------------------------------------------------
// Ranks

/// Rank 1 = lowest score; ties keep input order.
inline std::vector<int> rank_transform(std::span<const double> scores) {
  if (scores.empty()) throw InvalidArgument("rank_transform of an empty list");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<int> ranks(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = static_cast<int>(r + 1);
  return ranks;
}

inline bool is_permutation_of_1_to_n(std::span<const int> ranks) {
  std::vector<char> seen(ranks.size() + 1, 0);
  for (int r : ranks) {
    if (r < 1 || static_cast<std::size_t>(r) > ranks.size() || seen[r]) return false;
    seen[r] = 1;
  }
  return true;
}

struct DeprivationRecord {
  std::string image_id;
  std::string area_id;
  std::array<int, 3> ranks{};  // indexed by Dimension

  int rank(Dimension d) const { return ranks[index_of(d)]; }
  bool operator==(const DeprivationRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Dataset manifest

inline constexpr int kManifestSchemaVersion = 1;

struct ManifestEntry {
  std::string image_id;
  std::string image;  // relative to the manifest directory
  DeprivationRecord record;
  std::size_t latent_index = 0;  // row in hidden/latents.bin
  bool occluded = false;         // reference keep-label for curation
};

struct DatasetManifest {
  std::size_t dim = kDefaultLatentDim;
  double psi = kDefaultPsi;
  std::uint64_t sampling_seed = 0;
  std::uint64_t world_seed = 0;
  std::string ground_truth = "ground_truth.json";
  std::string hidden_latents = "hidden/latents.bin";
  std::string hidden_index = "hidden/latents.index";
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory holding the manifest; not serialized

  std::size_t size() const { return entries.size(); }
  std::filesystem::path image_path(std::size_t i) const { return root / entries[i].image; }
};

inline io::json to_json(const DatasetManifest& m) {
  io::json j;
  j["schema_version"] = kManifestSchemaVersion;
  j["n"] = m.entries.size();
  j["dim"] = m.dim;
  j["psi"] = m.psi;
  j["sampling_seed"] = m.sampling_seed;
  j["world_seed"] = m.world_seed;
  j["ground_truth"] = m.ground_truth;
  j["hidden_latents"] = m.hidden_latents;
  j["hidden_index"] = m.hidden_index;
  io::json entries = io::json::array();
  for (const auto& e : m.entries) {
    io::json x;
    x["image_id"] = e.image_id;
    x["image"] = e.image;
    x["area_id"] = e.record.area_id;
    for (auto d : kAllDimensions) x[to_string(d) + "_rank"] = e.record.rank(d);
    x["latent_index"] = e.latent_index;
    x["occluded"] = e.occluded;
    entries.push_back(std::move(x));
  }
  j["entries"] = std::move(entries);
  return j;
}

inline DatasetManifest manifest_from_json(const io::json& j, const std::filesystem::path& root) {
  if (j.value("schema_version", 0) != kManifestSchemaVersion)
    throw IoError("unsupported manifest schema version");
  DatasetManifest m;
  m.dim = j.at("dim").get<std::size_t>();
  m.psi = j.at("psi").get<double>();
  m.sampling_seed = j.at("sampling_seed").get<std::uint64_t>();
  m.world_seed = j.at("world_seed").get<std::uint64_t>();
  m.ground_truth = j.at("ground_truth").get<std::string>();
  m.hidden_latents = j.at("hidden_latents").get<std::string>();
  m.hidden_index = j.at("hidden_index").get<std::string>();
  m.root = root;
  for (const auto& x : j.at("entries")) {
    ManifestEntry e;
    e.image_id = x.at("image_id").get<std::string>();
    e.image = x.at("image").get<std::string>();
    e.record.image_id = e.image_id;
    e.record.area_id = x.at("area_id").get<std::string>();
    for (auto d : kAllDimensions) e.record.ranks[index_of(d)] = x.at(to_string(d) + "_rank").get<int>();
    e.latent_index = x.at("latent_index").get<std::size_t>();
    e.occluded = x.value("occluded", false);
    m.entries.push_back(std::move(e));
  }
  if (m.entries.size() != j.at("n").get<std::size_t>()) throw IoError("manifest entry count mismatch");
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("dataset manifest not found: " + path.string());
  return manifest_from_json(io::read_json(path), path.parent_path());
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  io::write_json(path, to_json(m));
}

inline const std::string kRecordsHeader = "image_id,area_id,income_rank,education_rank,health_rank";

inline std::string records_csv(const DatasetManifest& m) {
  std::ostringstream out;
  out << kRecordsHeader << "\n";
  for (const auto& e : m.entries)
    out << e.image_id << "," << e.record.area_id << "," << e.record.rank(Dimension::income) << ","
        << e.record.rank(Dimension::education) << "," << e.record.rank(Dimension::health) << "\n";
  return out.str();
}

inline std::vector<DeprivationRecord> parse_records_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty records CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRecordsHeader) throw IoError("records CSV header must be: " + kRecordsHeader);
  std::vector<DeprivationRecord> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw IoError("records CSV row with " + std::to_string(f.size()) + " fields: " + line);
    DeprivationRecord r;
    r.image_id = f[0];
    r.area_id = f[1];
    try {
      for (std::size_t k = 0; k < 3; ++k) r.ranks[k] = std::stoi(f[2 + k]);
    } catch (const std::exception&) {
      throw IoError("non-integer rank in records CSV row: " + line);
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Replace the ranks in `m` with externally supplied records (the
/// IMD-style ingestion surface). Every manifest image must appear once and
/// each rank column must be a permutation of 1..N.
inline DatasetManifest apply_records(DatasetManifest m, const std::vector<DeprivationRecord>& records) {
  if (records.size() != m.entries.size())
    throw InvalidArgument("records CSV has " + std::to_string(records.size()) + " rows for " +
                          std::to_string(m.entries.size()) + " images");
  std::map<std::string, const DeprivationRecord*> by_id;
  for (const auto& r : records)
    if (!by_id.emplace(r.image_id, &r).second) throw InvalidArgument("duplicate image_id " + r.image_id);
  for (auto& e : m.entries) {
    auto it = by_id.find(e.image_id);
    if (it == by_id.end()) throw InvalidArgument("records CSV is missing image " + e.image_id);
    e.record = *it->second;
  }
  for (auto d : kAllDimensions) {
    std::vector<int> col;
    for (const auto& e : m.entries) col.push_back(e.record.rank(d));
    if (!is_permutation_of_1_to_n(col))
      throw InvalidArgument(to_string(d) + " ranks are not a permutation of 1..N");
  }
  return m;
}

inline std::vector<LatentCode> load_hidden_latents(const DatasetManifest& m) {
  const auto path = m.root / m.hidden_latents;
  if (!std::filesystem::exists(path)) throw IoError("hidden latents not found: " + path.string());
  const auto all = io::read_latents(path, m.dim);
  std::vector<LatentCode> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    if (e.latent_index >= all.size()) throw IoError("latent index out of range for " + e.image_id);
    out.push_back(all[e.latent_index]);
  }
  return out;
}

inline std::vector<RasterImage> load_images(const DatasetManifest& m) {
  std::vector<RasterImage> out;
  out.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out.push_back(png::read(m.image_path(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset build

/// Coarse 4x4 bucket of the first two latent coordinates.
inline std::string area_id_for(const LatentCode& z) {
  auto bucket = [](double v) { return std::clamp(static_cast<int>(std::floor(v / 0.5)) + 2, 0, 3); };
  const int a = bucket(z[0]);
  const int b = z.size() > 1 ? bucket(z[1]) : 0;
  return "A" + std::to_string(a) + std::to_string(b);
}

inline std::string image_id_for(std::size_t i) {
  std::ostringstream s;
  s << "img_" << std::setw(5) << std::setfill('0') << i;
  return s.str();
}

/// Large dark block standing in for a street view blocked by a vehicle or
/// otherwise unusable; these are what the curation filter learns to reject.
inline RasterImage occlude(const RasterImage& img, std::uint64_t seed, std::size_t index) {
  rng::Sequence seq(rng::derive(seed, index), rng::Stream::occluder);
  const int size = 36 + static_cast<int>(seq.uniform() * 12);
  const int x0 = static_cast<int>(seq.uniform() * (kImageWidth - size + 1));
  const int y0 = static_cast<int>(seq.uniform() * (kImageHeight - size + 1));
  std::vector<double> px(img.pixels().begin(), img.pixels().end());
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x) px[static_cast<std::size_t>(y) * kImageWidth + x] = 0.04;
  return RasterImage(std::move(px));
}

struct BuildOptions {
  std::uint64_t world_seed = 0;        // score noise
  double occlusion_fraction = 0.0;     // share of images replaced by occluded frames
  std::uint64_t occlusion_seed = 0;
};

inline DatasetManifest build_dataset(std::size_t n, const SamplingConfig& sampling, const GroundTruthModel& model,
                                     const std::filesystem::path& out_dir, const BuildOptions& opts = {}) {
  namespace fs = std::filesystem;
  if (n < 10) throw InvalidArgument("dataset needs at least 10 images");
  if (sampling.dim != model.dim()) throw LengthMismatch(sampling.dim, model.dim());
  if (!(opts.occlusion_fraction >= 0.0 && opts.occlusion_fraction < 1.0))
    throw InvalidArgument("occlusion_fraction must lie in [0, 1)");

  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (!ec) fs::create_directories(out_dir / "hidden", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

  SamplingConfig cfg = sampling;
  cfg.count = n;
  cfg.validate();

  DatasetManifest m;
  m.dim = cfg.dim;
  m.psi = cfg.psi;
  m.sampling_seed = cfg.seed;
  m.world_seed = opts.world_seed;
  m.root = out_dir;

  std::vector<LatentCode> latents;
  std::array<std::vector<double>, 3> scores;
  std::string index_text;
  for (std::size_t i = 0; i < n; ++i) {
    LatentCode z = sample_latent(cfg, i);
    ManifestEntry e;
    e.image_id = image_id_for(i);
    e.image = "images/" + e.image_id + ".png";
    e.latent_index = i;
    e.record.image_id = e.image_id;
    e.record.area_id = area_id_for(z);
    e.occluded = opts.occlusion_fraction > 0.0 &&
                 rng::uniform(opts.occlusion_seed, rng::Stream::occluder, i) < opts.occlusion_fraction;

    RasterImage img = generate(z);
    if (e.occluded) img = occlude(img, opts.occlusion_seed, i);
    png::write(out_dir / e.image, img);

    const auto noise_seed = noise_seed_for(opts.world_seed, i);
    for (auto d : kAllDimensions) scores[index_of(d)].push_back(score(z, model, d, noise_seed));
    index_text += e.image_id + "," + std::to_string(i) + "\n";
    latents.push_back(std::move(z));
    m.entries.push_back(std::move(e));
  }
  for (auto d : kAllDimensions) {
    const auto ranks = rank_transform(scores[index_of(d)]);
    for (std::size_t i = 0; i < n; ++i) m.entries[i].record.ranks[index_of(d)] = ranks[i];
  }

  io::write_latents(out_dir / m.hidden_latents, latents);
  io::write_text(out_dir / m.hidden_index, index_text);
  io::write_json(out_dir / m.ground_truth, to_json(model));
  io::write_text(out_dir / "records.csv", records_csv(m));
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

// ---------------------------------------------------------------------------
// Curation filter

inline constexpr int kPoolCells = 16;  // 16x16 mean-pooled features
inline constexpr std::size_t kCurationFeatures = kPoolCells * kPoolCells;

inline std::vector<double> pooled_features(const RasterImage& img) {
  constexpr int block = kImageWidth / kPoolCells;
  std::vector<double> f(kCurationFeatures, 0.0);
  for (int y = 0; y < kImageHeight; ++y)
    for (int x = 0; x < kImageWidth; ++x) f[(y / block) * kPoolCells + x / block] += img.at(x, y);
  for (double& v : f) v /= block * block;
  return f;
}

struct CurationFilter {
  std::vector<double> weights;  // over pooled_features
  double bias = 0.0;
  double threshold = 0.5;
  int iterations = 0;

  double probability(const RasterImage& img) const {
    const auto f = pooled_features(img);
    const double a = bias + dot(weights, f);
    return 1.0 / (1.0 + std::exp(-a));
  }
};

struct CurationFitOptions {
  int max_iter = 10000;
  double tol = 1e-6;
  double learning_rate = 0.5;
  double threshold = 0.5;
};

/// Logistic regression by full-batch gradient descent on standardized
/// features; the standardization is folded back into the stored weights.
inline CurationFilter fit_curation_filter(std::span<const RasterImage> images, std::span<const bool> keep,
                                          const CurationFitOptions& opts = {}) {
  if (images.size() != keep.size()) throw LengthMismatch(images.size(), keep.size());
  const auto positives = std::count(keep.begin(), keep.end(), true);
  if (positives == 0 || positives == static_cast<long>(keep.size()))
    throw InvalidArgument("curation filter needs both keep and reject examples");

  const std::size_t n = images.size(), p = kCurationFeatures;
  std::vector<std::vector<double>> x;
  x.reserve(n);
  for (const auto& img : images) x.push_back(pooled_features(img));
  std::vector<double> mean(p, 0.0), scale(p, 0.0);
  for (const auto& r : x)
    for (std::size_t k = 0; k < p; ++k) mean[k] += r[k] / n;
  for (const auto& r : x)
    for (std::size_t k = 0; k < p; ++k) scale[k] += (r[k] - mean[k]) * (r[k] - mean[k]) / n;
  for (double& s : scale) s = s > 1e-12 ? std::sqrt(s) : 1.0;
  for (auto& r : x)
    for (std::size_t k = 0; k < p; ++k) r[k] = (r[k] - mean[k]) / scale[k];

  std::vector<double> w(p, 0.0), grad(p);
  double b = 0.0, prev_loss = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double gb = 0.0, loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = b + dot(w, x[i]);
      const double y = keep[i] ? 1.0 : 0.0;
      const double prob = 1.0 / (1.0 + std::exp(-a));
      // log(1 + e^a) - y a, computed without overflow
      loss += (a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a))) - y * a;
      const double r = prob - y;
      for (std::size_t k = 0; k < p; ++k) grad[k] += r * x[i][k];
      gb += r;
    }
    loss /= n;
    if (std::abs(prev_loss - loss) < opts.tol) break;
    prev_loss = loss;
    for (std::size_t k = 0; k < p; ++k) w[k] -= opts.learning_rate * grad[k] / n;
    b -= opts.learning_rate * gb / n;
  }

  CurationFilter f;
  f.weights.resize(p);
  f.bias = b;
  for (std::size_t k = 0; k < p; ++k) {
    f.weights[k] = w[k] / scale[k];
    f.bias -= w[k] * mean[k] / scale[k];
  }
  for (double v : f.weights)
    if (!std::isfinite(v)) throw Error("curation filter diverged");
  f.threshold = opts.threshold;
  f.iterations = it;
  return f;
}

inline io::json to_json(const CurationFilter& f) {
  io::json j;
  j["features"] = "mean-pooled 16x16";
  j["weights"] = f.weights;
  j["bias"] = f.bias;
  j["threshold"] = f.threshold;
  j["iterations"] = f.iterations;
  return j;
}

inline CurationFilter curation_filter_from_json(const io::json& j) {
  CurationFilter f;
  f.weights = j.at("weights").get<std::vector<double>>();
  if (f.weights.size() != kCurationFeatures) throw IoError("curation filter has the wrong feature count");
  f.bias = j.at("bias").get<double>();
  f.threshold = j.at("threshold").get<double>();
  f.iterations = j.value("iterations", 0);
  return f;
}

/// Keep entries whose predicted keep-probability is >= threshold (clamped to
/// [0, 1]) and re-rank the survivors so each column is again 1..N.
inline DatasetManifest apply_filter(const CurationFilter& filter, const DatasetManifest& manifest,
                                    std::span<const RasterImage> images, double threshold) {
  if (images.size() != manifest.size()) throw LengthMismatch(images.size(), manifest.size());
  threshold = std::clamp(threshold, 0.0, 1.0);
  DatasetManifest out = manifest;
  out.entries.clear();
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (filter.probability(images[i]) >= threshold) out.entries.push_back(manifest.entries[i]);
  if (out.entries.empty()) return out;
  for (auto d : kAllDimensions) {
    std::vector<double> old;
    for (const auto& e : out.entries) old.push_back(e.record.rank(d));
    const auto ranks = rank_transform(old);
    for (std::size_t i = 0; i < out.entries.size(); ++i) out.entries[i].record.ranks[index_of(d)] = ranks[i];
  }
  return out;
}

inline DatasetManifest apply_filter(const CurationFilter& filter, const DatasetManifest& manifest, double threshold) {
  const auto images = load_images(manifest);
  return apply_filter(filter, manifest, images, threshold);
}

}  // namespace streetlatent
