// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bgmm/bgmm.hpp"
#include "oracles.hpp"

using namespace bgmm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

oracle::M2 to_m2(SymMat2 m) { return {{{m.a, m.b}, {m.b, m.c}}}; }
oracle::V2 to_v2(Vec2 p) { return {p.x, p.y}; }
SymMat2 from_m2(const oracle::M2& m) { return {m[0][0], m[0][1], m[1][1]}; }

double frob(SymMat2 m) { return std::sqrt(m.a * m.a + 2 * m.b * m.b + m.c * m.c); }

MixtureModel random_model(std::mt19937_64& rng, std::size_t count, double sd_lo, double sd_hi) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MixtureModel m;
  double total = 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    const double w = 0.1 + u(rng);
    total += w;
    m.components.push_back({w, {u(rng), u(rng)}, from_m2(oracle::random_spd(rng, sd_lo, sd_hi, 20.0))});
  }
  for (auto& c : m.components) c.weight /= total;
  return m;
}

std::vector<oracle::Comp> to_comps(const MixtureModel& m) {
  std::vector<oracle::Comp> out;
  for (const auto& c : m.components) out.push_back({c.weight, to_v2(c.mean), to_m2(c.cov)});
  return out;
}

// Fits shared between criteria.
struct Runs {
  std::map<std::pair<std::uint64_t, int>, FitResult> uniform;  // (seed, P·64)
  double seconds_seed1 = 0.0;

  const FitResult& get(std::uint64_t seed, int p64) {
    auto key = std::make_pair(seed, p64);
    auto it = uniform.find(key);
    if (it != uniform.end()) return it->second;
    FitConfig cfg;
    cfg.target_p = p64 / 64.0;
    const auto t0 = std::chrono::steady_clock::now();
    FitResult r = fit(uniform_square(seed, 64), cfg);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (seed == 1 && (p64 == 1 || p64 == 2)) seconds_seed1 += s;
    return uniform.emplace(key, std::move(r)).first->second;
  }
};

std::size_t eff(const FitResult& r) { return effective_count(r.model, 64, 0.01); }

// ---------------------------------------------------------------------------

Outcome overlap_vs_quadrature() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const GaussComponent comp{0.05 + u(rng), {u(rng), u(rng)}, from_m2(oracle::random_spd(rng, 0.03, 0.5, 10.0))};
    const Vec2 x{comp.mean.x + 0.4 * (u(rng) - 0.5), comp.mean.y + 0.4 * (u(rng) - 0.5)};
    const SymMat2 s = from_m2(oracle::random_spd(rng, 0.03, 0.5, 10.0));
    const double closed = overlap_prob(comp, x, s);
    const double quad = oracle::overlap_quadrature({{comp.weight, to_v2(comp.mean), to_m2(comp.cov)}}, to_v2(x), to_m2(s));
    worst = std::max(worst, std::abs(closed - quad) / quad);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-6 && secs < 10.0, "max rel err " + num(worst) + ", " + num(secs) + " s"};
}

Outcome kernel_moment_oracle() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const MixtureModel m = random_model(rng, 1 + k % 4, 0.05, 0.4);
    const Vec2 x{u(rng), u(rng)};
    const SymMat2 s = from_m2(oracle::random_spd(rng, 0.05, 0.4, 10.0));
    const SymMat2 r = regularizing_kernel(m, x, s);
    const SymMat2 q = from_m2(oracle::product_second_moment(to_comps(m), to_v2(x), to_m2(s)));
    worst = std::max(worst, frob(r - q) / frob(q));
  }
  return {worst < 1e-5, "max Frobenius rel err " + num(worst) + " over 20 models"};
}

Outcome balloon_fixed_point() {
  const MixtureModel g{{{1.0, {0, 0}, SymMat2::identity()}}};
  BalloonConfig cfg;
  cfg.target_p = 1.0 / 3.0;
  const BalloonEntry e = solve_balloon(g, {0, 0}, cfg);
  const bool sigma_ok = std::abs(e.sigma2 - 1.0) <= 0.01 && !e.saturated;
  const bool r_ok = std::abs(e.kernel.a - 0.5) <= 0.005 && std::abs(e.kernel.c - 0.5) <= 0.005 &&
                    std::abs(e.kernel.b) <= 0.005;
  cfg.target_p = 0.6;
  const BalloonEntry sat = solve_balloon(g, {0, 0}, cfg);

  // Stopping rule on random mixtures at several targets.
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t checked = 0, violations = 0;
  for (int k = 0; k < 50; ++k) {
    const MixtureModel m = random_model(rng, 1 + k % 5, 0.03, 0.3);
    SampleSet s;
    for (int n = 0; n < 8; ++n) s.points.push_back({u(rng), u(rng)});
    BalloonConfig c;
    c.target_p = std::vector<double>{1.0 / 64, 1.0 / 16, 0.1, 0.25, 0.4}[k % 5];
    const BalloonField f = solve_field(m, s, c);
    for (const auto& en : f.entries) {
      if (en.saturated) continue;
      ++checked;
      const double d = en.achieved_p - c.target_p;
      if (!(d * d < (0.01 * c.target_p) * (0.01 * c.target_p))) ++violations;
    }
  }
  const bool ok = sigma_ok && r_ok && sat.saturated && violations == 0 && checked > 0;
  return {ok, "P=1/3 sigma2 " + num(e.sigma2) + ", R diag (" + num(e.kernel.a) + ", " + num(e.kernel.c) +
                  "); P=0.6 saturated=" + (sat.saturated ? "yes" : "no") + "; stopping rule " +
                  std::to_string(checked - violations) + "/" + std::to_string(checked)};
}

Outcome em_algebra() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double col_err = 0.0, prior_err = 0.0;
  std::size_t not_pd = 0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t m_count = 1 + rng() % 5;
    const std::size_t n_count = 1 + rng() % 10;
    const MixtureModel m = random_model(rng, m_count, 0.02, 0.5);
    SampleSet s;
    for (std::size_t n = 0; n < n_count; ++n) s.points.push_back({1.4 * u(rng) - 0.2, 1.4 * u(rng) - 0.2});
    const Responsibilities r = e_step(m, s, 1);
    for (std::size_t n = 0; n < n_count; ++n) {
      double col = 0.0;
      for (std::size_t j = 0; j < m_count; ++j) col += r(j, n);
      col_err = std::max(col_err, std::abs(col - 1.0));
    }
    BalloonConfig bc;
    bc.target_p = 0.02 + 0.4 * u(rng);
    const BalloonField f = solve_field(m, s, bc, nullptr, 1);
    const double d = data_scale(s, 1e-3);
    const MStepResult step = m_step(m, s, r, &f, MStepOptions{1e-12, 1e-10 * d * d}, 1);
    prior_err = std::max(prior_err, std::abs(step.model.total_weight() - 1.0));
    for (const auto& c : step.model.components) {
      if (!c.cov.positive_definite()) ++not_pd;
    }
  }
  return {col_err <= 1e-12 && prior_err <= 1e-9 && not_pd == 0,
          "max column error " + num(col_err) + ", max prior-sum error " + num(prior_err) + ", " +
              std::to_string(not_pd) + " non-PD covariances"};
}

Outcome plain_em_oracle() {
  std::mt19937_64 rng(505);
  std::normal_distribution<double> z(0.0, 1.0);
  const Vec2 centers[3] = {{0, 0}, {3, 1}, {1, 4}};
  SampleSet s;
  for (int n = 0; n < 16; ++n) {
    const Vec2 c = centers[n % 3];
    s.points.push_back({c.x + 0.8 * z(rng), c.y + 0.6 * z(rng)});
  }
  MixtureModel m{{{0.3, {0.5, 0.5}, SymMat2{1.0, 0.1, 1.0}},
                  {0.3, {2.5, 1.5}, SymMat2{1.0, 0.0, 1.0}},
                  {0.4, {1.5, 3.5}, SymMat2{1.0, -0.1, 1.0}}}};
  oracle::PlainEm ref;
  std::vector<oracle::V2> xs;
  for (const auto& p : s.points) xs.push_back(to_v2(p));
  for (const auto& c : m.components) {
    ref.w.push_back(c.weight);
    ref.mu.push_back(to_v2(c.mean));
    ref.s.push_back(to_m2(c.cov));
  }
  double worst = 0.0;
  double prev_ll = -INFINITY;
  bool monotone = true;
  double drop = 0.0;
  for (int it = 0; it < 50; ++it) {
    const Responsibilities r = e_step(m, s, 1);
    m = m_step(m, s, r, nullptr, {}, 1).model;
    ref.step(xs);
    if (m.size() != 3) return {false, "component pruned at iteration " + std::to_string(it)};
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& c = m.components[j];
      for (double d : {c.weight - ref.w[j], c.mean.x - ref.mu[j][0], c.mean.y - ref.mu[j][1],
                       c.cov.a - ref.s[j][0][0], c.cov.b - ref.s[j][0][1], c.cov.c - ref.s[j][1][1]}) {
        worst = std::max(worst, std::abs(d));
      }
    }
    const double ll = log_likelihood(m, s).value;
    // Rounding-level slack only.
    if (ll < prev_ll - 1e-12 * std::abs(prev_ll)) {
      monotone = false;
      drop = std::max(drop, prev_ll - ll);
    }
    prev_ll = ll;
  }
  return {worst <= 1e-8 && monotone,
          "max parameter difference " + num(worst) + ", log-likelihood " +
              (monotone ? "nondecreasing" : "dropped by " + num(drop)) + " over 50 iterations"};
}

Outcome uniform_square_experiment(Runs& runs) {
  const std::size_t c1 = eff(runs.get(1, 1));
  const std::size_t c2 = eff(runs.get(1, 2));
  const double secs = runs.seconds_seed1;
  const bool ok = c1 >= 30 && c1 <= 60 && c2 >= 10 && c2 <= 35 && c2 < c1 && secs < 120.0;
  return {ok, "seed 1: P=1/64 -> " + std::to_string(c1) + ", P=2/64 -> " + std::to_string(c2) + ", " + num(secs) +
                  " s for both fits"};
}

Outcome sparsification_trend(Runs& runs) {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const std::size_t a = eff(runs.get(seed, 1));
    const std::size_t b = eff(runs.get(seed, 2));
    const std::size_t c = eff(runs.get(seed, 4));
    ok = ok && a >= b && b >= c;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": " +
              std::to_string(a) + " >= " + std::to_string(b) + " >= " + std::to_string(c);
  }
  return {ok, detail};
}

Outcome large_p_collapse() {
  const MixtureModel src{{{1.0, {0.5, 0.5}, SymMat2::identity(0.15 * 0.15)}}};
  const SampleSet s = sample_mixture(7, 64, src);
  FitConfig cfg;
  cfg.target_p = 0.45;
  const FitResult r = fit(s, cfg);
  const MixtureModel merged = merge_coincident(r.model);
  const std::size_t count = effective_count(r.model, 64, 0.01);
  const GaussComponent* dom = &merged.components.front();
  for (const auto& c : merged.components) {
    if (c.weight > dom->weight) dom = &c;
  }
  const Vec2 d = dom->mean - s.mean();
  const double dist = std::hypot(d.x, d.y);
  return {count <= 3 && dist <= 0.05, std::to_string(count) + " effective (" + std::to_string(r.model.size()) +
                                          " stored), dominant pi " + num(dom->weight) + ", mean offset " + num(dist)};
}

Outcome normalization(Runs& runs) {
  const FitResult& r = runs.get(1, 1);
  const SampleSet s = uniform_square(1, 64);
  std::vector<Vec2> means;
  std::vector<SymMat2> covs;
  for (const auto& c : r.model.components) {
    means.push_back(c.mean);
    covs.push_back(c.cov);
  }
  const DensityGrid g = rasterize([&](Vec2 x) { return mixture_pdf(r.model, x); }, default_grid(means, covs));
  const AkdeModel ak = build_akde(s, r.balloons);
  const DensityGrid k = rasterize([&](Vec2 x) { return akde_pdf(ak, x); }, default_grid(ak.samples.points, ak.kernels));
  const double mg = grid_mass(g);
  const double mk = grid_mass(k);
  return {std::abs(mg - 1.0) <= 0.02 && std::abs(mk - 1.0) <= 0.02, "GMM mass " + num(mg) + ", AKDE mass " + num(mk)};
}

int sh(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "bgmm_acceptance_determinism";
  fs::remove_all(root);
  const std::string cli = BGMM_CLI_PATH;
  auto pipeline = [&](const std::string& name, const std::string& threads, bool from_manifest) {
    const fs::path dir = root / name;
    fs::create_directories(dir);
    std::string fit_cmd = "'" + cli + "' fit -s s.csv --p 0.03125 --svg -o run";
    if (from_manifest) {
      fs::copy_file(root / "t1a" / "run.manifest.json", dir / "recorded.json");
      fit_cmd = "'" + cli + "' fit --manifest recorded.json";
    }
    const std::string env = "BALLOON_GMM_THREADS=" + threads + " ";
    const std::string cmd = "cd '" + dir.string() + "' && export " + env + "&& '" + cli +
                            "' gen --seed 1 --n 64 -o s.csv && " + fit_cmd + " > fit.txt && '" + cli +
                            "' density -m run.model.json -o gmm.pgm > gmm.txt && '" + cli +
                            "' density -b run.balloons.csv --akde -o akde.pgm > akde.txt && '" + cli +
                            "' density -m run.model.json -o gmm.csv --width 64 --height 64 > gcsv.txt && '" + cli +
                            "' stats -m run.model.json -s s.csv --csv > stats.csv";
    return sh(cmd);
  };
  if (pipeline("t1a", "1", false) != 0) return {false, "pipeline failed at 1 thread"};
  if (pipeline("t1b", "1", true) != 0) return {false, "manifest rerun failed at 1 thread"};
  if (pipeline("t8", "8", false) != 0) return {false, "pipeline failed at 8 threads"};

  const char* files[] = {"s.csv",       "run.model.json", "run.balloons.csv", "run.trace.csv",
                         "run.manifest.json", "run.balloons.svg", "run.kernels.svg", "run.components.svg",
                         "gmm.pgm",     "akde.pgm",       "gmm.csv",          "stats.csv",
                         "fit.txt"};
  std::size_t compared = 0;
  std::string mismatch;
  for (const char* f : files) {
    const std::string a = slurp(root / "t1a" / f);
    if (a.empty()) mismatch += std::string(" missing:") + f;
    for (const char* other : {"t1b", "t8"}) {
      if (slurp(root / other / f) != a) mismatch += std::string(" ") + other + "/" + f;
    }
    ++compared;
  }
  fs::remove_all(root);
  return {mismatch.empty(), mismatch.empty()
                                ? std::to_string(compared) + " artifacts bit-identical across 1 thread (x2, second "
                                                             "from manifest) and 8 threads"
                                : "differs:" + mismatch};
}

Outcome translation(Runs& runs) {
  const FitResult& base = runs.get(1, 1);
  SampleSet moved = uniform_square(1, 64);
  const Vec2 t{10.0, -3.0};
  for (auto& p : moved.points) p = p + t;
  FitConfig cfg;
  cfg.target_p = 1.0 / 64.0;
  const FitResult r = fit(moved, cfg);
  if (r.model.size() != base.model.size()) {
    return {false, "component count " + std::to_string(r.model.size()) + " vs " + std::to_string(base.model.size())};
  }
  double dmean = 0.0, dpi = 0.0, dcov = 0.0;
  for (std::size_t m = 0; m < r.model.size(); ++m) {
    const auto& a = base.model.components[m];
    const auto& b = r.model.components[m];
    const Vec2 d = b.mean - a.mean - t;
    dmean = std::max({dmean, std::abs(d.x), std::abs(d.y)});
    dpi = std::max(dpi, std::abs(a.weight - b.weight));
    dcov = std::max({dcov, std::abs(a.cov.a - b.cov.a), std::abs(a.cov.b - b.cov.b), std::abs(a.cov.c - b.cov.c)});
  }
  return {dmean <= 1e-9 && dpi <= 1e-9 && dcov <= 1e-9,
          "max mean error " + num(dmean) + ", pi " + num(dpi) + ", sigma " + num(dcov)};
}

}  // namespace

int main() {
  Runs runs;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"overlap closed form vs quadrature", overlap_vs_quadrature},
      {"kernel matrix vs product second moment", kernel_moment_oracle},
      {"balloon fixed point and stopping rule", balloon_fixed_point},
      {"EM algebra invariants", em_algebra},
      {"plain EM vs textbook oracle", plain_em_oracle},
      {"uniform-square experiment", [&] { return uniform_square_experiment(runs); }},
      {"sparsification trend over P", [&] { return sparsification_trend(runs); }},
      {"large-P collapse", large_p_collapse},
      {"grid normalization", [&] { return normalization(runs); }},
      {"pipeline determinism", determinism},
      {"translation equivariance", [&] { return translation(runs); }},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << (k + 1) << "] " << criteria[k].first << ": " << o.detail
              << " (" << num(secs) << " s)" << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
