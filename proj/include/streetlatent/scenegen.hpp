#pragma once

// Procedural streetscape generator: latent code -> scene parameters -> 64x64
// grayscale raster. Stands in for a trained synthesis network.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string_view>
#include <vector>

#include "streetlatent/error.hpp"
#include "streetlatent/latent.hpp"
#include "streetlatent/random.hpp"

namespace streetlatent {

inline constexpr int kImageWidth = 64;
inline constexpr int kImageHeight = 64;
inline constexpr std::size_t kPixelCount = kImageWidth * kImageHeight;

/// 64x64 single-channel image, row-major, pixels in [0, 1].
class RasterImage {
 public:
  RasterImage() : pixels_(kPixelCount, 0.0) {}
  explicit RasterImage(std::vector<double> pixels) : pixels_(std::move(pixels)) {
    if (pixels_.size() != kPixelCount) throw LengthMismatch(pixels_.size(), kPixelCount);
    for (double v : pixels_)
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("pixel outside [0, 1]");
  }
  static RasterImage filled(double v) { return RasterImage(std::vector<double>(kPixelCount, v)); }

  static constexpr int width() { return kImageWidth; }
  static constexpr int height() { return kImageHeight; }
  double at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * kImageWidth + x]; }
  std::span<const double> pixels() const { return pixels_; }

  bool operator==(const RasterImage&) const = default;

 private:
  std::vector<double> pixels_;
};

inline double mean_squared_error(const RasterImage& a, const RasterImage& b) {
  double s = 0.0;
  const auto pa = a.pixels(), pb = b.pixels();
  for (std::size_t i = 0; i < kPixelCount; ++i) {
    const double d = pa[i] - pb[i];
    s += d * d;
  }
  return s / static_cast<double>(kPixelCount);
}

inline double mean_abs_difference(const RasterImage& a, const RasterImage& b) {
  double s = 0.0;
  const auto pa = a.pixels(), pb = b.pixels();
  for (std::size_t i = 0; i < kPixelCount; ++i) s += std::abs(pa[i] - pb[i]);
  return s / static_cast<double>(kPixelCount);
}

// ---------------------------------------------------------------------------
// Scene parameters

/// Visual attributes of one streetscape. The first nine carry the
/// socially-read features (pediments, hedges, stucco, paving, gardens); the
/// remaining seven are nuisance appearance factors that give the image one
/// degree of freedom per latent coordinate at the default dimension.
struct SceneParams {
  double floors = 2.0;            // [1, 3]
  double window_rows = 2.0;       // [1, 3]
  double window_cols = 3.5;       // [2, 5]
  double pediment = 0.5;          // [0, 1] roof pediment opacity
  double hedge_height = 0.5;      // [0, 1] fraction of the garden band
  double tree_count = 2.0;        // [0, 4]
  double facade_tone = 0.5;       // [0, 1] 0 = dark brick, 1 = whitewashed stucco
  double pavement_quality = 0.5;  // [0, 1] 0 = plain tarmac, 1 = paving stones
  double garden_depth = 0.5;      // [0, 1]
  double sky_tone = 0.5;          // [0, 1]
  double roof_tone = 0.5;         // [0, 1]
  double door_tone = 0.5;         // [0, 1]
  double window_tone = 0.5;       // [0, 1]
  double facade_width = 0.5;      // [0, 1]
  double foliage_tone = 0.5;      // [0, 1]
  double road_tone = 0.5;         // [0, 1]

  bool operator==(const SceneParams&) const = default;
};

struct ParamField {
  std::string_view name;
  double SceneParams::*member;
  double lo;
  double hi;
};

inline constexpr std::array<ParamField, 16> kSceneFields{{
    {"floors", &SceneParams::floors, 1.0, 3.0},
    {"window_rows", &SceneParams::window_rows, 1.0, 3.0},
    {"window_cols", &SceneParams::window_cols, 2.0, 5.0},
    {"pediment", &SceneParams::pediment, 0.0, 1.0},
    {"hedge_height", &SceneParams::hedge_height, 0.0, 1.0},
    {"tree_count", &SceneParams::tree_count, 0.0, 4.0},
    {"facade_tone", &SceneParams::facade_tone, 0.0, 1.0},
    {"pavement_quality", &SceneParams::pavement_quality, 0.0, 1.0},
    {"garden_depth", &SceneParams::garden_depth, 0.0, 1.0},
    {"sky_tone", &SceneParams::sky_tone, 0.0, 1.0},
    {"roof_tone", &SceneParams::roof_tone, 0.0, 1.0},
    {"door_tone", &SceneParams::door_tone, 0.0, 1.0},
    {"window_tone", &SceneParams::window_tone, 0.0, 1.0},
    {"facade_width", &SceneParams::facade_width, 0.0, 1.0},
    {"foliage_tone", &SceneParams::foliage_tone, 0.0, 1.0},
    {"road_tone", &SceneParams::road_tone, 0.0, 1.0},
}};

inline constexpr std::size_t kSceneParamCount = kSceneFields.size();

inline void validate(const SceneParams& p) {
  for (const auto& f : kSceneFields) {
    const double v = p.*(f.member);
    if (!(v >= f.lo && v <= f.hi))
      throw InvalidArgument("scene parameter " + std::string(f.name) + " out of range");
  }
}

// ---------------------------------------------------------------------------
// Latent -> parameters

inline constexpr std::uint64_t kGeneratorSeed = 0x5eed'57ee'7'2023ULL;
inline constexpr double kGeneratorGain = 2.0;

/// Fixed affine map from latents to pre-squashing parameter values.
/// The matrix is kGeneratorGain times a matrix with orthonormal rows (or
/// columns when the latent dimension is smaller than the parameter count),
/// built by modified Gram-Schmidt from Gaussian draws on kGeneratorSeed.
/// The offset is zero so the zero latent decodes to every range midpoint.
class Generator {
 public:
  explicit Generator(std::size_t dim) : dim_(dim), matrix_(kSceneParamCount * dim, 0.0) {
    if (dim == 0) throw InvalidArgument("latent dimension must be >= 1");
    const std::size_t rows = kSceneParamCount;
    const std::size_t tall = std::max(rows, dim), wide = std::min(rows, dim);
    // `wide` Gaussian vectors of length `tall`, orthonormalized in order.
    std::vector<std::vector<double>> basis;
    rng::Sequence seq(kGeneratorSeed, rng::Stream::generator_constants);
    for (std::size_t k = 0; k < wide; ++k) {
      std::vector<double> v(tall);
      for (double& x : v) x = seq.normal();
      for (const auto& q : basis) {
        double proj = 0.0;
        for (std::size_t i = 0; i < tall; ++i) proj += v[i] * q[i];
        for (std::size_t i = 0; i < tall; ++i) v[i] -= proj * q[i];
      }
      double n = 0.0;
      for (double x : v) n += x * x;
      n = std::sqrt(n);
      for (double& x : v) x /= n;
      basis.push_back(std::move(v));
    }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < dim; ++c)
        matrix_[r * dim + c] = kGeneratorGain * (dim >= rows ? basis[r][c] : basis[c][r]);
  }

  std::size_t dim() const { return dim_; }
  double weight(std::size_t row, std::size_t col) const { return matrix_[row * dim_ + col]; }
  double offset(std::size_t) const { return 0.0; }

  SceneParams decode(const LatentCode& z) const {
    if (z.size() != dim_) throw LengthMismatch(z.size(), dim_);
    SceneParams p;
    for (std::size_t r = 0; r < kSceneParamCount; ++r) {
      double a = offset(r);
      for (std::size_t c = 0; c < dim_; ++c) a += matrix_[r * dim_ + c] * z[c];
      const double s = 1.0 / (1.0 + std::exp(-a));
      const auto& f = kSceneFields[r];
      p.*(f.member) = f.lo + (f.hi - f.lo) * s;
    }
    return p;
  }

 private:
  std::size_t dim_;
  std::vector<double> matrix_;
};

inline const Generator& generator_for(std::size_t dim) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<Generator>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[dim];
  if (!slot) slot = std::make_unique<Generator>(dim);
  return *slot;
}

inline SceneParams decode_params(const LatentCode& z) { return generator_for(z.size()).decode(z); }

// ---------------------------------------------------------------------------
// Rasterization

namespace scene_layout {
inline constexpr double kPavementTop = 52.0;
inline constexpr double kFloorHeight = 8.0;
inline constexpr double kPedimentHeight = 6.0;
inline constexpr double kCorniceHeight = 2.0;
inline constexpr double kCenterX = 32.0;
inline constexpr double kWindowFeather = 4.0;
inline constexpr std::array<double, 4> kTreeSlots{5.0, 59.0, 12.0, 52.0};

struct Geometry {
  double garden_top;    // also the facade bottom
  double facade_top;
  double facade_left;
  double facade_right;
  double pediment_half_base;
};

inline Geometry geometry(const SceneParams& p) {
  Geometry g{};
  const double garden_h = 4.0 + 16.0 * p.garden_depth;
  g.garden_top = kPavementTop - garden_h;
  g.facade_top = g.garden_top - kFloorHeight * p.floors;
  const double half = 14.0 + 8.0 * p.facade_width;
  g.facade_left = kCenterX - half;
  g.facade_right = kCenterX + half;
  g.pediment_half_base = 0.85 * half;
  return g;
}

/// Pixel-space box that contains every pixel the pediment can touch.
struct Box {
  int x0, y0, x1, y1;  // inclusive-exclusive
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

inline Box pediment_box(const SceneParams& p) {
  const auto g = geometry(p);
  return {static_cast<int>(std::floor(kCenterX - g.pediment_half_base)) - 1,
          static_cast<int>(std::floor(g.facade_top - kCorniceHeight - kPedimentHeight)) - 1,
          static_cast<int>(std::ceil(kCenterX + g.pediment_half_base)) + 1,
          static_cast<int>(std::ceil(g.facade_top - kCorniceHeight)) + 1};
}

inline Box facade_box(const SceneParams& p) {
  const auto g = geometry(p);
  return {static_cast<int>(std::ceil(g.facade_left)), static_cast<int>(std::ceil(g.facade_top)),
          static_cast<int>(std::floor(g.facade_right)), static_cast<int>(std::floor(g.garden_top))};
}
}  // namespace scene_layout

namespace detail {

class Canvas {
 public:
  Canvas() : px_(kPixelCount, 0.0) {}

  void fill(double v) { std::fill(px_.begin(), px_.end(), v); }

  void blend(int x, int y, double value, double alpha) {
    if (alpha <= 0.0) return;
    double& p = px_[static_cast<std::size_t>(y) * kImageWidth + x];
    p += std::min(alpha, 1.0) * (value - p);
  }

  // Axis-aligned rectangle. Coverage is the pixel footprint, widened by
  // `feather` pixels, overlapping the rectangle; feather 0 is exact area.
  void rect(double x0, double y0, double x1, double y1, double value, double opacity = 1.0,
            double feather = 0.0) {
    if (x1 <= x0 || y1 <= y0 || opacity <= 0.0) return;
    const double f = 0.5 * feather, norm = 1.0 / (1.0 + feather);
    const int ix0 = std::max(0, static_cast<int>(std::floor(x0 - f)));
    const int iy0 = std::max(0, static_cast<int>(std::floor(y0 - f)));
    const int ix1 = std::min(kImageWidth, static_cast<int>(std::ceil(x1 + f)));
    const int iy1 = std::min(kImageHeight, static_cast<int>(std::ceil(y1 + f)));
    for (int y = iy0; y < iy1; ++y) {
      const double cy = norm * overlap(y - f, y + 1 + f, y0, y1);
      for (int x = ix0; x < ix1; ++x)
        blend(x, y, value, opacity * cy * norm * overlap(x - f, x + 1 + f, x0, x1));
    }
  }

  // Isosceles triangle, apex up, base on y = base_y.
  void triangle(double cx, double half_base, double apex_y, double base_y, double value,
                double opacity) {
    if (opacity <= 0.0) return;
    const double h = base_y - apex_y;
    const int iy0 = std::max(0, static_cast<int>(std::floor(apex_y)));
    const int iy1 = std::min(kImageHeight, static_cast<int>(std::ceil(base_y)));
    for (int y = iy0; y < iy1; ++y) {
      const double cy = overlap(y, apex_y, base_y);
      const double t = std::clamp((y + 0.5 - apex_y) / h, 0.0, 1.0);
      const double hw = half_base * t;
      const int ix0 = std::max(0, static_cast<int>(std::floor(cx - hw)));
      const int ix1 = std::min(kImageWidth, static_cast<int>(std::ceil(cx + hw)));
      for (int x = ix0; x < ix1; ++x) blend(x, y, value, opacity * cy * overlap(x, cx - hw, cx + hw));
    }
  }

  // Disc with a one-pixel linear edge ramp.
  void disc(double cx, double cy, double r, double value) {
    const int ix0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
    const int iy0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
    const int ix1 = std::min(kImageWidth, static_cast<int>(std::ceil(cx + r + 1)));
    const int iy1 = std::min(kImageHeight, static_cast<int>(std::ceil(cy + r + 1)));
    for (int y = iy0; y < iy1; ++y)
      for (int x = ix0; x < ix1; ++x) {
        const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
        blend(x, y, value, std::clamp(r + 0.5 - d, 0.0, 1.0));
      }
  }

  double at(int x, int y) const { return px_[static_cast<std::size_t>(y) * kImageWidth + x]; }
  void set(int x, int y, double v) { px_[static_cast<std::size_t>(y) * kImageWidth + x] = v; }

  RasterImage finish() && {
    for (double& v : px_) v = std::clamp(v, 0.0, 1.0);
    return RasterImage(std::move(px_));
  }

 private:
  static double overlap(double lo, double hi, double a, double b) {
    return std::max(0.0, std::min(hi, b) - std::max(lo, a));
  }
  static double overlap(int cell, double a, double b) { return overlap(cell, cell + 1.0, a, b); }

  std::vector<double> px_;
};

// +1 on paving stones, -1 on grout lines. Rows are offset by half a stone.
inline double paving_pattern(int x, int y) {
  const int row = y / 4;
  if (y % 4 == 0) return -1.0;
  if ((x + 3 * (row % 2)) % 6 == 0) return -1.0;
  return 1.0;
}

}  // namespace detail

inline int rounded_count(double v) { return static_cast<int>(std::floor(v + 0.5)); }

/// Size an element of a rounded count starts at when it first appears.
inline constexpr double kAppearScale = 0.3;

/// Scale of element `index` when the continuous count is `v`: 1 for settled
/// elements, ramping from kAppearScale for the most recently added one.
inline double growth(double v, int index) {
  const double progress = std::clamp(v - index - 0.5, 0.0, 1.0);
  return kAppearScale + (1.0 - kAppearScale) * progress;
}

/// Deterministic rasterization. Edges are area-antialiased so the image is
/// continuous in every parameter except the rounded window and tree counts.
inline RasterImage render(const SceneParams& p) {
  using namespace scene_layout;
  validate(p);
  const auto g = geometry(p);
  detail::Canvas c;

  // Sky with a fixed vertical falloff.
  const double sky = 0.55 + 0.4 * p.sky_tone;
  for (int y = 0; y < kImageHeight; ++y)
    for (int x = 0; x < kImageWidth; ++x) c.set(x, y, sky - 0.08 * y / kImageHeight);

  const double cornice_top = g.facade_top - kCorniceHeight;
  c.triangle(kCenterX, g.pediment_half_base, cornice_top - kPedimentHeight, cornice_top,
             0.15 + 0.5 * p.roof_tone, p.pediment);

  const double roof = 0.15 + 0.5 * p.roof_tone;
  c.rect(g.facade_left - 1.0, cornice_top, g.facade_right + 1.0, g.facade_top, roof);

  const double facade = 0.25 + 0.6 * p.facade_tone;
  c.rect(g.facade_left, g.facade_top, g.facade_right, g.garden_top, facade);

  // Window grid: counts are rounded, pitch follows the continuous values and
  // the newest row/column grows in from kAppearScale of its full size.
  const int rows = rounded_count(p.window_rows);
  const int cols = rounded_count(p.window_cols);
  const double facade_h = g.garden_top - g.facade_top;
  const double pitch_x = (g.facade_right - g.facade_left) / p.window_cols;
  const double pitch_y = facade_h / p.window_rows;
  const double window = facade * (0.15 + 0.45 * p.window_tone);
  for (int i = 0; i < rows; ++i) {
    const double wy = g.facade_top + (i + 0.5) * pitch_y;
    const double win_h = 0.45 * pitch_y * growth(p.window_rows, i);
    for (int j = 0; j < cols; ++j) {
      const double wx = g.facade_left + (j + 0.5) * pitch_x;
      const double win_w = 0.5 * pitch_x * growth(p.window_cols, j);
      c.rect(wx - 0.5 * win_w, wy - 0.5 * win_h, wx + 0.5 * win_w, wy + 0.5 * win_h, window, 1.0,
             kWindowFeather);
    }
  }

  c.rect(kCenterX - 3.0, g.garden_top - 6.0, kCenterX + 3.0, g.garden_top, 0.05 + 0.3 * p.door_tone);

  c.rect(0.0, g.garden_top, kImageWidth, kPavementTop, 0.42);
  const double foliage = 0.12 + 0.3 * p.foliage_tone;
  const double garden_h = kPavementTop - g.garden_top;
  c.rect(0.0, kPavementTop - p.hedge_height * garden_h, kImageWidth, kPavementTop, foliage);

  const double road = 0.3 + 0.3 * p.road_tone;
  for (int y = static_cast<int>(kPavementTop); y < kImageHeight; ++y)
    for (int x = 0; x < kImageWidth; ++x)
      c.set(x, y, road + 0.2 * p.pavement_quality * detail::paving_pattern(x, y));

  const int trees = rounded_count(p.tree_count);
  const double crown_r = 3.0 + 0.5 * p.tree_count;
  for (int t = 0; t < trees; ++t) {
    const double sx = kTreeSlots[static_cast<std::size_t>(t)];
    const double f = growth(p.tree_count, t);
    c.rect(sx - f, kPavementTop - 9.0, sx + f, kPavementTop, 0.2);
    c.disc(sx, kPavementTop - 11.0, crown_r * f, foliage * 0.85);
  }

  return std::move(c).finish();
}

/// The generator G(z).
inline RasterImage generate(const LatentCode& z) { return render(decode_params(z)); }

}  // namespace streetlatent
