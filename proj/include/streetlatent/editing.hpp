#pragma once

// Latent walks, multi-dimension conditioned edits and the two grid layouts:
// one base image across several dimensions, or several base images along
// one dimension.

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "streetlatent/error.hpp"
#include "streetlatent/io.hpp"
#include "streetlatent/latent.hpp"
#include "streetlatent/png.hpp"
#include "streetlatent/scenegen.hpp"
#include "streetlatent/semantics.hpp"
#include "streetlatent/world.hpp"

namespace streetlatent {

inline constexpr double kUnitTolerance = 1e-10;
inline constexpr double kOrthogonalTolerance = 1e-8;

inline LatentCode walk(const LatentCode& z, const LatentCode& n, double alpha) {
  if (z.size() != n.size()) throw LengthMismatch(z.size(), n.size());
  if (std::abs(norm(n) - 1.0) > kUnitTolerance) throw InvalidArgument("walk direction must be unit length");
  if (alpha == 0.0) return z;
  return axpy(z, alpha, n);
}

using AlphaMap = std::map<Dimension, double>;

/// z + sum_i alpha_i n_i over a mutually orthogonal normal set. Terms are
/// added in the set's conditioning order regardless of the map order.
inline LatentCode condition(const LatentCode& z, const AlphaMap& alphas, const ConditionedSet& normals) {
  if (max_pairwise_dot(normals) > kOrthogonalTolerance)
    throw InvalidArgument("conditioned normals are not mutually orthogonal");
  for (const auto& [d, a] : alphas) {
    if (!normals.contains(d)) throw InvalidArgument("no conditioned normal for " + to_string(d));
    if (!std::isfinite(a)) throw InvalidArgument("alpha must be finite");
  }
  LatentCode out = z;
  for (const auto& b : normals.boundaries) {
    const auto it = alphas.find(b.dimension);
    if (it != alphas.end() && it->second != 0.0) out = walk(out, b.normal, it->second);
  }
  return out;
}

struct WalkSpec {
  int steps = 7;
  double alpha_max = 3.0;
  std::vector<Dimension> dimensions{Dimension::health, Dimension::income, Dimension::education};

  void validate() const {
    if (steps < 3 || steps % 2 == 0) throw InvalidArgument("walk steps must be odd and at least 3");
    if (!(alpha_max > 0.0) || !std::isfinite(alpha_max)) throw InvalidArgument("alpha_max must be positive");
    if (dimensions.empty()) throw InvalidArgument("walk needs at least one dimension");
  }

  /// Symmetric grid with an exact zero in the middle.
  std::vector<double> alphas() const {
    validate();
    const int c = steps / 2;
    std::vector<double> a(steps);
    for (int k = 0; k < steps; ++k) a[k] = alpha_max * static_cast<double>(k - c) / static_cast<double>(c);
    return a;
  }
};

inline constexpr int kGridSeparator = 2;
inline constexpr double kSeparatorValue = 1.0;

struct GridCell {
  int row = 0, col = 0;
  AlphaMap alphas;
  int x = 0, y = 0;  // top-left in the composite
  std::string image_path;
  std::string sha256;  // of the cell's own PNG
};

struct GridManifest {
  std::string mode;  // "single-image" or "multi-image"
  std::vector<std::string> row_labels;
  std::vector<double> column_alphas;
  std::vector<GridCell> cells;  // row-major
  int rows = 0, cols = 0;
  // Largest change along any row of a conditioned boundary other than the
  // one being walked.
  double max_other_decision_drift = 0.0;
  std::string composite_path;
  std::string composite_sha256;
};

struct Grid {
  std::vector<RasterImage> cells;  // row-major
  png::GrayImage composite;
  GridManifest manifest;

  const RasterImage& cell(int row, int col) const { return cells.at(static_cast<std::size_t>(row * manifest.cols + col)); }
};

namespace detail {

inline png::GrayImage compose(const std::vector<RasterImage>& cells, int rows, int cols) {
  png::GrayImage g;
  g.width = cols * kImageWidth + (cols - 1) * kGridSeparator;
  g.height = rows * kImageHeight + (rows - 1) * kGridSeparator;
  g.pixels.assign(static_cast<std::size_t>(g.width) * g.height, png::quantize(kSeparatorValue));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const auto gray = png::to_gray(cells[static_cast<std::size_t>(r * cols + c)]);
      const int x0 = c * (kImageWidth + kGridSeparator), y0 = r * (kImageHeight + kGridSeparator);
      for (int y = 0; y < kImageHeight; ++y)
        for (int x = 0; x < kImageWidth; ++x)
          g.pixels[static_cast<std::size_t>(y0 + y) * g.width + x0 + x] = gray.pixels[y * kImageWidth + x];
    }
  return g;
}

inline double other_drift(const std::vector<LatentCode>& row, Dimension walked, const ConditionedSet& normals) {
  double drift = 0.0;
  for (const auto& b : normals.boundaries) {
    if (b.dimension == walked) continue;
    const double f0 = b.decision(row.front());
    for (const auto& z : row) drift = std::max(drift, std::abs(b.decision(z) - f0));
  }
  return drift;
}

inline Grid assemble(std::string mode, std::vector<std::string> labels, const std::vector<double>& alphas,
                     const std::vector<std::vector<LatentCode>>& latents, const std::vector<Dimension>& walked) {
  Grid g;
  auto& m = g.manifest;
  m.mode = std::move(mode);
  m.row_labels = std::move(labels);
  m.column_alphas = alphas;
  m.rows = static_cast<int>(latents.size());
  m.cols = static_cast<int>(alphas.size());
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      g.cells.push_back(generate(latents[r][c]));
      GridCell cell;
      cell.row = r;
      cell.col = c;
      cell.alphas[walked[r]] = alphas[c];
      cell.x = c * (kImageWidth + kGridSeparator);
      cell.y = r * (kImageHeight + kGridSeparator);
      cell.sha256 = io::sha256(png::encode(g.cells.back()));
      m.cells.push_back(std::move(cell));
    }
  g.composite = compose(g.cells, m.rows, m.cols);
  m.composite_sha256 = io::sha256(png::encode(g.composite));
  return g;
}

}  // namespace detail

/// Rows are the walk spec's dimensions, columns the alpha grid; cell (d, a) is
/// generate(walk(z, n_d, a)) with the conditioned normal n_d.
inline Grid render_matrix_single_image(const LatentCode& z, const ConditionedSet& normals, const WalkSpec& spec) {
  const auto alphas = spec.alphas();
  std::vector<std::vector<LatentCode>> latents;
  std::vector<std::string> labels;
  double drift = 0.0;
  for (auto d : spec.dimensions) {
    const auto& n = normals.at(d).normal;
    std::vector<LatentCode> row;
    for (double a : alphas) row.push_back(walk(z, n, a));
    drift = std::max(drift, detail::other_drift(row, d, normals));
    latents.push_back(std::move(row));
    labels.push_back(to_string(d));
  }
  Grid g = detail::assemble("single-image", std::move(labels), alphas, latents, spec.dimensions);
  g.manifest.max_other_decision_drift = drift;
  return g;
}

/// Rows are base latents, columns the alpha grid along one dimension.
inline Grid render_matrix_multi_image(const std::vector<LatentCode>& zs, Dimension dimension,
                                      const ConditionedSet& normals, const WalkSpec& spec) {
  if (zs.empty()) throw InvalidArgument("multi-image grid needs at least one latent");
  const auto alphas = spec.alphas();
  const auto& n = normals.at(dimension).normal;
  std::vector<std::vector<LatentCode>> latents;
  std::vector<std::string> labels;
  double drift = 0.0;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    std::vector<LatentCode> row;
    for (double a : alphas) row.push_back(walk(zs[i], n, a));
    drift = std::max(drift, detail::other_drift(row, dimension, normals));
    latents.push_back(std::move(row));
    labels.push_back("latent " + std::to_string(i));
  }
  Grid g = detail::assemble("multi-image", std::move(labels), alphas, latents,
                            std::vector<Dimension>(zs.size(), dimension));
  g.manifest.max_other_decision_drift = drift;
  return g;
}

inline io::json to_json(const GridManifest& m) {
  io::json j;
  j["mode"] = m.mode;
  j["rows"] = m.rows;
  j["cols"] = m.cols;
  j["row_labels"] = m.row_labels;
  j["column_alphas"] = m.column_alphas;
  j["cell_size"] = {kImageWidth, kImageHeight};
  j["separator"] = kGridSeparator;
  j["composite"] = {{"path", m.composite_path}, {"sha256", m.composite_sha256}};
  j["max_other_decision_drift"] = m.max_other_decision_drift;
  io::json cells = io::json::array();
  for (const auto& c : m.cells) {
    io::json a;
    for (const auto& [d, v] : c.alphas) a[to_string(d)] = v;
    cells.push_back({{"row", c.row},
                     {"col", c.col},
                     {"alphas", std::move(a)},
                     {"x", c.x},
                     {"y", c.y},
                     {"image", c.image_path},
                     {"sha256", c.sha256}});
  }
  j["cells"] = std::move(cells);
  return j;
}

/// Writes <dir>/grid.png, <dir>/cells/rR_cC.png and <dir>/grid.json.
inline void write_grid(Grid& g, const std::filesystem::path& dir) {
  g.manifest.composite_path = "grid.png";
  png::write_file(dir / "grid.png", png::encode(g.composite));
  for (std::size_t i = 0; i < g.cells.size(); ++i) {
    auto& c = g.manifest.cells[i];
    c.image_path = "cells/r" + std::to_string(c.row) + "_c" + std::to_string(c.col) + ".png";
    png::write(dir / c.image_path, g.cells[i]);
  }
  io::write_json(dir / "grid.json", to_json(g.manifest));
}

}  // namespace streetlatent
