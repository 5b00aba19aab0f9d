#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, counter), so any item of a dataset can be regenerated in
// isolation and in any order. Normal variates use the cosine branch of
// Box-Muller over two 53-bit uniforms.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace streetlatent::rng {

// Stream tags keep independent uses of one seed from colliding.
enum class Stream : std::uint64_t {
  latent = 1,
  score_noise = 2,
  ground_truth = 3,
  generator_constants = 4,
  split = 5,
  occluder = 6,
  encoder_pairs = 7,
  restart = 8,
  eval_subset = 9,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix(std::uint64_t seed, Stream stream, std::uint64_t counter) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream) ^ splitmix64(counter)));
}

// Uniform in the open interval (0, 1).
constexpr double to_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform(std::uint64_t seed, Stream stream, std::uint64_t counter) {
  return to_unit(mix(seed, stream, counter));
}

inline double standard_normal(std::uint64_t seed, Stream stream, std::uint64_t counter) {
  const double u1 = to_unit(mix(seed, stream, 2 * counter));
  const double u2 = to_unit(mix(seed, stream, 2 * counter + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Sequential view over a stream, for code that wants "the next number".
class Sequence {
 public:
  Sequence(std::uint64_t seed, Stream stream, std::uint64_t start = 0)
      : seed_(seed), stream_(stream), counter_(start) {}

  double uniform() { return rng::uniform(seed_, stream_, counter_++); }
  double normal() { return rng::standard_normal(seed_, stream_, counter_++); }
  std::uint64_t bits() { return mix(seed_, stream_, counter_++); }

 private:
  std::uint64_t seed_;
  Stream stream_;
  std::uint64_t counter_;
};

// Key for per-item derived seeds, e.g. (image index, dimension).
constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(seed ^ splitmix64(a + 0x632be59bd9b4e019ULL * (b + 1)));
}

}  // namespace streetlatent::rng
