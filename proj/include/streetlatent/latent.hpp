#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "streetlatent/error.hpp"
#include "streetlatent/random.hpp"

namespace streetlatent {

inline constexpr std::size_t kDefaultLatentDim = 16;
inline constexpr double kDefaultPsi = 0.5;

/// A point in the generator's latent space. Entries are always finite.
class LatentCode {
 public:
  LatentCode() = default;
  explicit LatentCode(std::vector<double> values) : values_(std::move(values)) { check(); }
  LatentCode(std::initializer_list<double> values) : values_(values) { check(); }

  static LatentCode zeros(std::size_t dim) { return LatentCode(std::vector<double>(dim, 0.0)); }
  static LatentCode basis(std::size_t dim, std::size_t axis) {
    std::vector<double> v(dim, 0.0);
    v.at(axis) = 1.0;
    return LatentCode(std::move(v));
  }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& vector() const { return values_; }

  bool operator==(const LatentCode&) const = default;

 private:
  void check() const {
    for (double v : values_)
      if (!std::isfinite(v)) throw InvalidArgument("latent code contains a non-finite entry");
  }

  std::vector<double> values_;
};

struct SamplingConfig {
  std::uint64_t seed = 0;
  std::size_t count = 1;
  double psi = kDefaultPsi;
  std::size_t dim = kDefaultLatentDim;

  SamplingConfig() = default;
  SamplingConfig(std::uint64_t seed_, std::size_t count_, double psi_ = kDefaultPsi,
                 std::size_t dim_ = kDefaultLatentDim)
      : seed(seed_), count(count_), psi(psi_), dim(dim_) {
    validate();
  }

  void validate() const {
    if (count < 1) throw InvalidArgument("sampling count must be >= 1");
    if (!(psi >= 0.0 && psi <= 1.0)) throw InvalidArgument("psi must lie in [0, 1]");
    if (dim < 1) throw InvalidArgument("latent dimension must be >= 1");
  }
};

/// Standard-normal draw for component `component` of code `index`, before truncation.
inline double raw_latent_component(std::uint64_t seed, std::size_t dim, std::size_t index,
                                   std::size_t component) {
  return rng::standard_normal(seed, rng::Stream::latent, index * dim + component);
}

/// i.i.d. standard normal codes, each component scaled by psi (the truncation
/// trick with the zero vector as the distribution mean).
inline LatentCode sample_latent(const SamplingConfig& config, std::size_t index) {
  std::vector<double> v(config.dim);
  for (std::size_t j = 0; j < config.dim; ++j)
    v[j] = config.psi * raw_latent_component(config.seed, config.dim, index, j);
  return LatentCode(std::move(v));
}

inline std::vector<LatentCode> sample_latents(const SamplingConfig& config) {
  config.validate();
  std::vector<LatentCode> out;
  out.reserve(config.count);
  for (std::size_t i = 0; i < config.count; ++i) out.push_back(sample_latent(config, i));
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw LengthMismatch(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double dot(const LatentCode& a, const LatentCode& b) { return dot(a.values(), b.values()); }

inline double norm(const LatentCode& a) { return std::sqrt(dot(a, a)); }

inline LatentCode normalize(const LatentCode& a) {
  const double n = norm(a);
  if (n < 1e-12) throw DegenerateVector("cannot normalize a vector with norm below 1e-12");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i] / n;
  return LatentCode(std::move(v));
}

/// a + alpha * direction
inline LatentCode axpy(const LatentCode& a, double alpha, const LatentCode& direction) {
  if (a.size() != direction.size()) throw LengthMismatch(a.size(), direction.size());
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i] + alpha * direction[i];
  return LatentCode(std::move(v));
}

inline LatentCode scaled(const LatentCode& a, double c) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = c * a[i];
  return LatentCode(std::move(v));
}

inline double cosine(const LatentCode& a, const LatentCode& b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace streetlatent
