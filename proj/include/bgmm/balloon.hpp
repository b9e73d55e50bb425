#pragma once

// Per-sample balloon estimator. For every sample an isotropic balloon
// S = σ²I is grown until the data-adapted kernel R fitted to the product of
// the current density with the balloon captures probability mass P.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bgmm/gauss2.hpp"
#include "bgmm/parallel.hpp"

namespace bgmm {

struct BalloonConfig {
  double target_p = 1.0 / 64.0;
  std::size_t max_inner_iters = 64;
  double sigma2_init = 1.0;
  /// Unset: 1e6 × squared sample bounding-box diagonal in solve_field, 1e6 in
  /// solve_balloon.
  std::optional<double> sigma2_cap;
  bool warm_start = false;
  /// Converge P(x|S) on the isotropic balloon instead of P(x|R).
  bool target_on_balloon = false;
};

inline void validate(const BalloonConfig& cfg) {
  if (!(cfg.target_p > 0.0 && cfg.target_p <= 1.0)) throw Error("target probability must lie in (0,1]");
  if (cfg.max_inner_iters < 1) throw Error("max_inner_iters must be at least 1");
  if (!(cfg.sigma2_init > 0.0) || !std::isfinite(cfg.sigma2_init)) throw Error("sigma2_init must be positive");
  if (cfg.sigma2_cap && !(*cfg.sigma2_cap > 0.0)) throw Error("sigma2_cap must be positive");
}

struct BalloonEntry {
  double sigma2 = 0.0;
  SymMat2 kernel;
  double achieved_p = 0.0;
  bool saturated = false;
  std::size_t inner_iters = 0;
};

struct BalloonField {
  std::vector<BalloonEntry> entries;
  double target_p = 0.0;

  [[nodiscard]] std::size_t size() const { return entries.size(); }
};

/// Second moment about `center` of the normalized product f(r)·K(r|center,S):
/// R = Σ_m (P_m/P)[Σ_{m|S} + (x-μ_{m|S})(x-μ_{m|S})ᵀ].
inline SymMat2 regularizing_kernel(const MixtureModel& model, Vec2 center, SymMat2 balloon) {
  require_positive_definite(balloon, "balloon");
  if (!(total_overlap(model, center, balloon) > 0.0)) {
    throw Error("balloon at " + describe(center) + " captures no probability mass");
  }
  // Mixing weights P_m/P from log overlaps, so a subnormal total stays exact.
  std::vector<double> lp(model.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < model.size(); ++m) {
    lp[m] = log_overlap_prob(model.components[m], center, balloon);
    top = std::max(top, lp[m]);
  }
  SymMat2 moment;
  double total = 0.0;
  for (std::size_t m = 0; m < model.size(); ++m) {
    const double w = std::exp(lp[m] - top);
    if (w == 0.0) continue;
    const auto& comp = model.components[m];
    const ProductParams prod = product_params(comp.mean, comp.cov, center, balloon);
    moment += w * (prod.cov + SymMat2::outer(center - prod.mean));
    total += w;
  }
  return (1.0 / total) * moment;
}

/// Multiplicative fixed point σ² <- (P / P(x|R)) σ², stopped when
/// (P(x|R) - P)² < (0.01 P)².
inline BalloonEntry solve_balloon(const MixtureModel& model, Vec2 center, const BalloonConfig& cfg,
                                  std::optional<double> warm_sigma2 = std::nullopt) {
  validate(cfg);
  const double target = cfg.target_p;
  const double tol2 = (0.01 * target) * (0.01 * target);
  const double cap = cfg.sigma2_cap.value_or(1e6);

  BalloonEntry e;
  e.sigma2 = (warm_sigma2 && *warm_sigma2 > 0.0) ? std::min(*warm_sigma2, cap) : cfg.sigma2_init;

  // False when the balloon's captured mass underflows to zero; the kernel is
  // then undefined and the update P/p sends σ² to the cap.
  auto evaluate = [&] {
    const SymMat2 balloon = SymMat2::identity(e.sigma2);
    if (!(total_overlap(model, center, balloon) > 0.0)) {
      e.achieved_p = 0.0;
      return false;
    }
    e.kernel = regularizing_kernel(model, center, balloon);
    e.achieved_p = total_overlap(model, center, cfg.target_on_balloon ? balloon : e.kernel);
    if (!std::isfinite(e.achieved_p) || !e.kernel.positive_definite()) {
      throw Error("balloon at " + describe(center) + " became non-finite: sigma2=" + std::to_string(e.sigma2) +
                  " kernel=" + describe(e.kernel));
    }
    return true;
  };
  auto no_mass = [&] {
    return Error("balloon at " + describe(center) + " captures no probability mass even at sigma2=" + std::to_string(cap));
  };

  bool has_mass = evaluate();
  while (true) {
    const double miss = e.achieved_p - target;
    if (has_mass && miss * miss < tol2) return e;
    if (has_mass && e.inner_iters >= cfg.max_inner_iters) break;
    if (!has_mass && e.sigma2 >= cap) throw no_mass();
    const double next = e.achieved_p > 0.0 ? target / e.achieved_p * e.sigma2 : cap;
    if (!std::isfinite(next)) {
      throw Error("balloon update at " + describe(center) + " is non-finite from sigma2=" + std::to_string(e.sigma2));
    }
    ++e.inner_iters;
    if (next >= cap) {
      e.sigma2 = cap;
      if (!evaluate()) throw no_mass();
      const double m = e.achieved_p - target;
      e.saturated = !(m * m < tol2);
      return e;
    }
    e.sigma2 = next;
    has_mass = evaluate();
  }
  e.saturated = true;
  return e;
}

/// Independent balloon per sample, ordered by sample index.
inline BalloonField solve_field(const MixtureModel& model, const SampleSet& samples, BalloonConfig cfg,
                                const BalloonField* previous = nullptr, std::size_t threads = 0) {
  validate(cfg);
  if (!cfg.sigma2_cap) {
    const double d = samples.diagonal();
    cfg.sigma2_cap = d > 0.0 ? 1e6 * d * d : 1e6;
  }
  const bool warm = cfg.warm_start && previous != nullptr && previous->size() == samples.size();

  BalloonField field;
  field.target_p = cfg.target_p;
  field.entries.resize(samples.size());
  parallel_for(
      samples.size(),
      [&](std::size_t n) {
        try {
          std::optional<double> start;
          if (warm) start = previous->entries[n].sigma2;
          field.entries[n] = solve_balloon(model, samples.points[n], cfg, start);
        } catch (const std::exception& ex) {
          throw Error("sample " + std::to_string(n) + ": " + ex.what());
        }
      },
      threads);
  return field;
}

}  // namespace bgmm
