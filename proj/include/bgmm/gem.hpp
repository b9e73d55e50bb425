#pragma once

// Regularized generalized EM. Each outer iteration solves the balloon field
// on the current model, computes responsibilities, then updates priors,
// means and covariances with the balloon kernels acting as a prior on the
// covariances.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bgmm/balloon.hpp"
#include "bgmm/gauss2.hpp"
#include "bgmm/parallel.hpp"

namespace bgmm {

/// Default relative tolerance under which two components count as one.
inline constexpr double kCoincideTolRel = 1e-4;

struct FitConfig {
  double target_p = 1.0 / 64.0;
  std::size_t outer_iters = 1000;
  double init_eps_rel = 1e-3;
  double prune_threshold = 1e-12;
  double effective_threshold_rel = 0.01;
  double coincide_tol_rel = kCoincideTolRel;
  std::uint64_t seed = 0;
  /// Stop once the largest parameter change drops below this; off when unset.
  std::optional<double> early_stop_tol;
  /// 0 selects BALLOON_GMM_THREADS or the hardware concurrency.
  std::size_t threads = 0;
  BalloonConfig balloon;
};

inline void validate(const FitConfig& cfg) {
  if (!(cfg.target_p > 0.0 && cfg.target_p <= 1.0)) throw Error("target probability must lie in (0,1]");
  if (cfg.outer_iters < 1) throw Error("outer_iters must be at least 1");
  if (!(cfg.init_eps_rel > 0.0)) throw Error("init_eps_rel must be positive");
  if (!(cfg.prune_threshold > 0.0)) throw Error("prune_threshold must be positive");
  if (!(cfg.effective_threshold_rel > 0.0)) throw Error("effective_threshold_rel must be positive");
  if (!(cfg.coincide_tol_rel >= 0.0)) throw Error("coincide_tol_rel must be non-negative");
  if (cfg.early_stop_tol && !(*cfg.early_stop_tol > 0.0)) throw Error("early_stop_tol must be positive");
}

/// Length scale of a sample set: its bounding-box diagonal, or 1e-6/eps_rel
/// when every sample coincides, so that the initial standard deviation falls
/// back to the absolute 1e-6.
inline double data_scale(const SampleSet& samples, double eps_rel) {
  const double d = samples.diagonal();
  return d > 0.0 ? d : 1e-6 / eps_rel;
}

/// One near-singular component per sample with uniform priors.
inline MixtureModel init_full_model(const SampleSet& samples, const FitConfig& cfg) {
  if (samples.empty()) throw Error("cannot initialize a mixture from zero samples");
  const double sd = cfg.init_eps_rel * data_scale(samples, cfg.init_eps_rel);
  const double w = 1.0 / static_cast<double>(samples.size());
  MixtureModel model;
  model.components.reserve(samples.size());
  for (const auto& p : samples.points) model.components.push_back({w, p, SymMat2::identity(sd * sd)});
  return model;
}

/// M × N matrix, stored row-major by component.
struct Responsibilities {
  std::size_t components = 0;
  std::size_t samples = 0;
  std::vector<double> values;

  double& operator()(std::size_t m, std::size_t n) { return values[m * samples + n]; }
  double operator()(std::size_t m, std::size_t n) const { return values[m * samples + n]; }
};

/// P_{m,n} ∝ π_m N(x_n|μ_m,Σ_m), normalized per sample. Normalization runs in
/// the log domain so that only a sample unreachable by every weighted
/// component fails.
inline Responsibilities e_step(const MixtureModel& model, const SampleSet& samples, std::size_t threads = 0) {
  Responsibilities resp{model.size(), samples.size(), std::vector<double>(model.size() * samples.size())};
  parallel_for(
      samples.size(),
      [&](std::size_t n) {
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < model.size(); ++m) {
          const auto& comp = model.components[m];
          const double l = comp.weight > 0.0
                               ? std::log(comp.weight) + log_gauss_pdf(samples.points[n], comp.mean, comp.cov)
                               : -std::numeric_limits<double>::infinity();
          resp(m, n) = l;
          peak = std::max(peak, l);
        }
        if (peak == -std::numeric_limits<double>::infinity()) {
          throw Error("sample " + std::to_string(n) + " has zero responsibility under every component");
        }
        double sum = 0.0;
        for (std::size_t m = 0; m < model.size(); ++m) {
          resp(m, n) = std::exp(resp(m, n) - peak);
          sum += resp(m, n);
        }
        for (std::size_t m = 0; m < model.size(); ++m) resp(m, n) /= sum;
      },
      threads);
  return resp;
}

/// R_{n|m} = R - [Σ_{m|R} + (x-μ_{m|R})(x-μ_{m|R})ᵀ]; may be indefinite.
inline SymMat2 additive_matrix(const GaussComponent& comp, Vec2 x, SymMat2 kernel) {
  const ProductParams prod = product_params(comp.mean, comp.cov, x, kernel);
  return kernel - (prod.cov + SymMat2::outer(x - prod.mean));
}

struct MStepOptions {
  double prune_threshold = 1e-12;
  double psd_floor = 1e-10;
};

struct MStepResult {
  MixtureModel model;
  /// Index in the input model of every surviving component.
  std::vector<std::size_t> kept;
  std::size_t psd_projections = 0;
};

/// Smallest eigenvalue ratio a rebuilt 2x2 matrix keeps reliably positive.
inline constexpr double kMinEigenRatio = 1e-12;

/// Raises every eigenvalue of `m` to at least `floor`, and the minor one to at
/// least kMinEigenRatio times the major so the result stays positive-definite
/// after rounding.
inline SymMat2 floor_eigenvalues(SymMat2 m, double floor) {
  const Eigen2 e = eigen(m);
  const double major = std::max(e.major, floor);
  return compose(major, std::max({e.minor, floor, kMinEigenRatio * major}), e.angle);
}

/// M-step with balloon kernels as covariance prior. A null `balloons` drops
/// the additive matrices and gives the textbook update.
inline MStepResult m_step(const MixtureModel& model, const SampleSet& samples, const Responsibilities& resp,
                          const BalloonField* balloons, const MStepOptions& opts = {}, std::size_t threads = 0) {
  const std::size_t count = model.size();
  const std::size_t n_samples = samples.size();
  if (resp.components != count || resp.samples != n_samples) throw Error("responsibility shape mismatch");
  if (balloons != nullptr && balloons->size() != n_samples) throw Error("balloon field size mismatch");
  const double nd = static_cast<double>(n_samples);

  std::vector<GaussComponent> updated(count);
  std::vector<char> projected(count, 0);
  parallel_for(
      count,
      [&](std::size_t m) {
        double mass = 0.0;
        Vec2 weighted;
        for (std::size_t n = 0; n < n_samples; ++n) {
          mass += resp(m, n);
          weighted = weighted + resp(m, n) * samples.points[n];
        }
        GaussComponent& out = updated[m];
        out.weight = mass / nd;
        if (!(mass > 0.0) || out.weight < opts.prune_threshold) {
          out.weight = 0.0;
          return;
        }
        out.mean = (1.0 / mass) * weighted;
        SymMat2 scatter;
        for (std::size_t n = 0; n < n_samples; ++n) {
          const double r = resp(m, n);
          if (r == 0.0) continue;
          SymMat2 term = SymMat2::outer(samples.points[n] - out.mean);
          if (balloons != nullptr) {
            term += additive_matrix(model.components[m], samples.points[n], balloons->entries[n].kernel);
          }
          scatter += r * term;
        }
        out.cov = (1.0 / mass) * scatter;
        const Eigen2 e = eigen(out.cov);
        if (!(e.minor >= opts.psd_floor) || !(e.minor >= kMinEigenRatio * e.major) || !out.cov.positive_definite()) {
          out.cov = floor_eigenvalues(out.cov, opts.psd_floor);
          projected[m] = 1;
        }
      },
      threads);

  MStepResult result;
  double total = 0.0;
  for (std::size_t m = 0; m < count; ++m) {
    if (updated[m].weight > 0.0) total += updated[m].weight;
  }
  if (!(total > 0.0)) throw Error("every component was pruned");
  for (std::size_t m = 0; m < count; ++m) {
    if (!(updated[m].weight > 0.0)) continue;
    updated[m].weight /= total;
    result.model.components.push_back(updated[m]);
    result.kept.push_back(m);
    result.psd_projections += static_cast<std::size_t>(projected[m]);
  }
  return result;
}

/// True when the means differ by at most tol·sd and every covariance entry by
/// at most tol·sd², with sd² the larger covariance trace. EM cannot separate
/// components with identical parameters, so such pairs act as one.
inline bool coincident(const GaussComponent& p, const GaussComponent& q, double tol_rel) {
  const double var = std::max(p.cov.trace(), q.cov.trace());
  const double sd = std::sqrt(var);
  const Vec2 dm = p.mean - q.mean;
  const SymMat2 dc = p.cov - q.cov;
  return std::hypot(dm.x, dm.y) <= tol_rel * sd &&
         std::max({std::abs(dc.a), std::abs(dc.b), std::abs(dc.c)}) <= tol_rel * var;
}

/// Greedy grouping in index order: each component joins the first earlier
/// group leader it coincides with. Groups are moment-matched into one
/// component; the first member's position in the list is kept.
inline MixtureModel merge_coincident(const MixtureModel& model, double tol_rel = kCoincideTolRel) {
  const std::size_t count = model.size();
  std::vector<std::size_t> leader(count);
  std::vector<std::size_t> leaders;
  for (std::size_t i = 0; i < count; ++i) {
    leader[i] = i;
    for (std::size_t l : leaders) {
      if (coincident(model.components[l], model.components[i], tol_rel)) {
        leader[i] = l;
        break;
      }
    }
    if (leader[i] == i) leaders.push_back(i);
  }
  MixtureModel merged;
  for (std::size_t l : leaders) {
    double w = 0.0;
    Vec2 mean;
    for (std::size_t i = l; i < count; ++i) {
      if (leader[i] != l) continue;
      w += model.components[i].weight;
      mean = mean + model.components[i].weight * model.components[i].mean;
    }
    GaussComponent out{w, w > 0.0 ? (1.0 / w) * mean : model.components[l].mean, {}};
    for (std::size_t i = l; i < count; ++i) {
      if (leader[i] != l) continue;
      const auto& c = model.components[i];
      const double share = w > 0.0 ? c.weight / w : (i == l ? 1.0 : 0.0);
      out.cov += share * (c.cov + SymMat2::outer(c.mean - out.mean));
    }
    merged.components.push_back(out);
  }
  return merged;
}

/// Number of distinct components (after merging coincident ones) with
/// π_m > threshold_rel / n_samples.
inline std::size_t effective_count(const MixtureModel& model, std::size_t n_samples, double threshold_rel,
                                   double coincide_tol_rel = kCoincideTolRel) {
  const double cut = threshold_rel / static_cast<double>(n_samples);
  const MixtureModel merged = merge_coincident(model, coincide_tol_rel);
  return static_cast<std::size_t>(std::count_if(merged.components.begin(), merged.components.end(),
                                                [&](const auto& c) { return c.weight > cut; }));
}

struct TraceRecord {
  std::size_t iteration = 0;
  double log_likelihood = 0.0;
  std::size_t effective_count = 0;
  std::size_t components = 0;
  double max_delta = 0.0;
  std::size_t psd_projections = 0;
  std::size_t saturated_balloons = 0;
};

using FitTrace = std::vector<TraceRecord>;

struct FitResult {
  MixtureModel model;
  BalloonField balloons;
  FitTrace trace;
};

/// Largest absolute change of any prior, mean or covariance entry over the
/// components that survived the step.
inline double max_parameter_change(const MixtureModel& before, const MStepResult& step) {
  double delta = 0.0;
  for (std::size_t k = 0; k < step.kept.size(); ++k) {
    const auto& a = before.components[step.kept[k]];
    const auto& b = step.model.components[k];
    for (double d : {a.weight - b.weight, a.mean.x - b.mean.x, a.mean.y - b.mean.y, a.cov.a - b.cov.a,
                     a.cov.b - b.cov.b, a.cov.c - b.cov.c}) {
      delta = std::max(delta, std::abs(d));
    }
  }
  return delta;
}

inline FitResult fit(const SampleSet& samples, const FitConfig& cfg) {
  validate(cfg);
  if (samples.empty()) throw Error("cannot fit zero samples");
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (!samples.points[n].finite()) throw Error("sample " + std::to_string(n) + " is not finite");
  }
  const double scale = data_scale(samples, cfg.init_eps_rel);
  BalloonConfig bcfg = cfg.balloon;
  bcfg.target_p = cfg.target_p;
  if (!bcfg.sigma2_cap) bcfg.sigma2_cap = 1e6 * scale * scale;
  const MStepOptions mopts{cfg.prune_threshold, 1e-10 * scale * scale};

  FitResult result;
  result.model = init_full_model(samples, cfg);
  for (std::size_t it = 0; it < cfg.outer_iters; ++it) {
    try {
      BalloonField field =
          solve_field(result.model, samples, bcfg, result.balloons.size() ? &result.balloons : nullptr, cfg.threads);
      const Responsibilities resp = e_step(result.model, samples, cfg.threads);
      MStepResult step = m_step(result.model, samples, resp, &field, mopts, cfg.threads);

      TraceRecord rec;
      rec.iteration = it;
      rec.max_delta = max_parameter_change(result.model, step);
      rec.psd_projections = step.psd_projections;
      rec.saturated_balloons = static_cast<std::size_t>(
          std::count_if(field.entries.begin(), field.entries.end(), [](const auto& e) { return e.saturated; }));
      result.model = std::move(step.model);
      result.balloons = std::move(field);
      rec.log_likelihood = log_likelihood(result.model, samples).value;
      rec.effective_count =
          effective_count(result.model, samples.size(), cfg.effective_threshold_rel, cfg.coincide_tol_rel);
      rec.components = result.model.size();
      result.trace.push_back(rec);
      if (cfg.early_stop_tol && rec.max_delta < *cfg.early_stop_tol) break;
    } catch (const std::exception& ex) {
      throw Error("outer iteration " + std::to_string(it) + ": " + ex.what());
    }
  }
  return result;
}

}  // namespace bgmm
