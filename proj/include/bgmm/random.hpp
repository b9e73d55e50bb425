#pragma once

// Portable sample generation. SplitMix64 (Steele, Lea & Flood 2014) is used
// instead of <random> distributions, whose outputs are implementation-defined,
// so that a seed yields the same sample set everywhere.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>

#include "bgmm/gauss2.hpp"

namespace bgmm {

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  constexpr double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal pair member via Box-Muller; the second value is dropped.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Independent generator derived from this one's next output.
  SplitMix64 split() { return SplitMix64(next()); }

 private:
  std::uint64_t state_;
};

inline SampleSet uniform_square(std::uint64_t seed, std::size_t n) {
  SplitMix64 rng(seed);
  SampleSet s;
  s.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform();
    const double y = rng.uniform();
    s.points.push_back({x, y});
  }
  return s;
}

/// Draws from N(mean, cov) using the Cholesky factor of cov.
inline Vec2 draw_gaussian(SplitMix64& rng, Vec2 mean, SymMat2 cov) {
  require_positive_definite(cov, "sampling covariance");
  const double l11 = std::sqrt(cov.a);
  const double l21 = cov.b / l11;
  const double l22 = std::sqrt(cov.c - l21 * l21);
  const double z1 = rng.normal();
  const double z2 = rng.normal();
  return {mean.x + l11 * z1, mean.y + l21 * z1 + l22 * z2};
}

/// Component chosen by inverse CDF over the weights, then a Gaussian draw.
inline SampleSet sample_mixture(std::uint64_t seed, std::size_t n, const MixtureModel& model) {
  validate(model);
  SplitMix64 rng(seed);
  SampleSet s;
  s.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * model.total_weight();
    std::size_t m = 0;
    double acc = model.components[0].weight;
    while (u >= acc && m + 1 < model.size()) acc += model.components[++m].weight;
    s.points.push_back(draw_gaussian(rng, model.components[m].mean, model.components[m].cov));
  }
  return s;
}

}  // namespace bgmm
