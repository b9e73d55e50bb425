// bgmm: generate samples, fit balloon-regularized mixtures, render densities
// and report statistics.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "bgmm/bgmm.hpp"

namespace {

constexpr const char* kVersion = "1.0.0";

using bgmm::Error;
using ordered_json = nlohmann::ordered_json;

struct UsageError : Error {
  using Error::Error;
};

// ---- gen -------------------------------------------------------------------

struct GenOptions {
  std::uint64_t seed = 1;
  std::size_t n = 64;
  std::string shape = "uniform";
  std::string out = "samples.csv";
};

bgmm::SampleSet generate(const GenOptions& o) {
  if (o.n == 0) throw UsageError("--n must be at least 1");
  const std::string& s = o.shape;
  if (s == "uniform") return bgmm::uniform_square(o.seed, o.n);
  if (s.rfind("normal:", 0) == 0) {
    std::istringstream in(s.substr(7));
    double mx = 0, my = 0, sd = 0;
    char c1 = 0, c2 = 0;
    if (!(in >> mx >> c1 >> my >> c2 >> sd) || c1 != ',' || c2 != ',' || !(sd > 0.0) || !in.eof()) {
      throw UsageError("bad shape '" + s + "', expected normal:<mean_x>,<mean_y>,<sd>");
    }
    bgmm::MixtureModel g;
    g.components.push_back({1.0, {mx, my}, bgmm::SymMat2::identity(sd * sd)});
    return bgmm::sample_mixture(o.seed, o.n, g);
  }
  if (s.rfind("gmm:", 0) == 0) return bgmm::sample_mixture(o.seed, o.n, bgmm::read_model_json(s.substr(4)).model);
  throw UsageError("bad shape '" + s + "', expected uniform, normal:<mx>,<my>,<sd> or gmm:<model.json>");
}

// ---- fit -------------------------------------------------------------------

struct FitOptions {
  std::string samples;
  std::string out = "fit";
  std::string manifest_in;
  bgmm::FitConfig config;
  std::optional<double> p;
  std::optional<std::size_t> balloon_steps;
  std::optional<double> early_stop_tol;
  bool svg = false;
};

struct Artifacts {
  std::string model, balloons, trace, manifest, balloons_svg, kernels_svg, components_svg;
};

Artifacts artifact_paths(const std::string& prefix) {
  return {prefix + ".model.json",   prefix + ".balloons.csv", prefix + ".trace.csv",
          prefix + ".manifest.json", prefix + ".balloons.svg", prefix + ".kernels.svg",
          prefix + ".components.svg"};
}

ordered_json manifest_json(const FitOptions& o, std::size_t n, const Artifacts& a) {
  const auto& c = o.config;
  ordered_json j;
  j["tool"] = "bgmm";
  j["version"] = kVersion;
  j["command"] = "fit";
  j["samples"] = o.samples;
  j["n"] = n;
  j["seed"] = c.seed;
  j["target_p"] = c.target_p;
  j["outer_iters"] = c.outer_iters;
  j["eps_rel"] = c.init_eps_rel;
  j["prune_threshold"] = c.prune_threshold;
  j["effective_threshold_rel"] = c.effective_threshold_rel;
  j["coincide_tol_rel"] = c.coincide_tol_rel;
  j["early_stop_tol"] = c.early_stop_tol ? ordered_json(*c.early_stop_tol) : ordered_json(nullptr);
  j["balloon_steps"] = c.balloon.max_inner_iters;
  j["sigma2_init"] = c.balloon.sigma2_init;
  j["warm_start"] = c.balloon.warm_start;
  j["target_on_balloon"] = c.balloon.target_on_balloon;
  j["svg"] = o.svg;
  j["out"] = o.out;
  ordered_json art;
  art["model"] = a.model;
  art["balloons"] = a.balloons;
  art["trace"] = a.trace;
  if (o.svg) {
    art["balloons_svg"] = a.balloons_svg;
    art["kernels_svg"] = a.kernels_svg;
    art["components_svg"] = a.components_svg;
  }
  j["artifacts"] = art;
  return j;
}

void load_manifest(FitOptions& o) {
  std::ifstream in(o.manifest_in);
  if (!in) throw Error("cannot open manifest '" + o.manifest_in + "'");
  ordered_json j;
  try {
    j = ordered_json::parse(in);
    auto& c = o.config;
    o.samples = j.at("samples").get<std::string>();
    o.out = j.at("out").get<std::string>();
    o.svg = j.at("svg").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.target_p = j.at("target_p").get<double>();
    o.p = c.target_p;
    c.outer_iters = j.at("outer_iters").get<std::size_t>();
    c.init_eps_rel = j.at("eps_rel").get<double>();
    c.prune_threshold = j.at("prune_threshold").get<double>();
    c.effective_threshold_rel = j.at("effective_threshold_rel").get<double>();
    c.coincide_tol_rel = j.at("coincide_tol_rel").get<double>();
    if (!j.at("early_stop_tol").is_null()) c.early_stop_tol = j.at("early_stop_tol").get<double>();
    c.balloon.max_inner_iters = j.at("balloon_steps").get<std::size_t>();
    c.balloon.sigma2_init = j.at("sigma2_init").get<double>();
    c.balloon.warm_start = j.at("warm_start").get<bool>();
    c.balloon.target_on_balloon = j.at("target_on_balloon").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("manifest '" + o.manifest_in + "': " + e.what());
  }
}

int run_fit(FitOptions o) {
  if (!o.manifest_in.empty()) {
    load_manifest(o);
  } else {
    if (!o.p) throw UsageError("--p is required");
    if (o.samples.empty()) throw UsageError("--samples is required");
    o.config.target_p = *o.p;
    if (o.balloon_steps) o.config.balloon.max_inner_iters = *o.balloon_steps;
    o.config.early_stop_tol = o.early_stop_tol;
  }
  const bgmm::SampleSet samples = bgmm::read_samples_csv(o.samples);
  if (samples.empty()) throw Error("'" + o.samples + "' holds no samples");
  const bgmm::FitResult r = bgmm::fit(samples, o.config);

  const Artifacts a = artifact_paths(o.out);
  bgmm::write_model_json({samples.size(), o.config.target_p, r.model}, a.model);
  bgmm::write_balloon_csv(samples, r.balloons, a.balloons);
  bgmm::write_trace_csv(r.trace, a.trace);
  if (o.svg) {
    bgmm::write_balloons_svg(samples, r.balloons, a.balloons_svg);
    bgmm::write_kernels_svg(samples, r.balloons, a.kernels_svg);
    bgmm::write_components_svg(samples, r.model, a.components_svg);
  }
  std::ofstream mf(a.manifest);
  if (!mf) throw Error("cannot open '" + a.manifest + "' for writing");
  mf << manifest_json(o, samples.size(), a).dump(2) << '\n';
  if (!mf) throw Error("failed writing '" + a.manifest + "'");

  const auto& last = r.trace.back();
  std::cout << "iterations " << r.trace.size() << " components " << r.model.size() << " effective "
            << last.effective_count << " log_likelihood " << bgmm::fmt17(last.log_likelihood) << '\n';
  return 0;
}

// ---- density ---------------------------------------------------------------

struct DensityOptions {
  std::string model;
  std::string balloons;
  bool akde = false;
  std::size_t width = 256;
  std::size_t height = 256;
  std::vector<double> bbox;
  double gamma = 0.5;
  std::string out = "density.pgm";
};

int run_density(const DensityOptions& o) {
  auto finish_spec = [&](bgmm::GridSpec spec) {
    if (!o.bbox.empty()) {
      if (o.bbox.size() != 4) throw UsageError("--bbox takes xmin ymin xmax ymax");
      spec.min = {o.bbox[0], o.bbox[1]};
      spec.max = {o.bbox[2], o.bbox[3]};
    }
    spec.width = o.width;
    spec.height = o.height;
    return spec;
  };

  bgmm::DensityGrid grid;
  if (o.akde) {
    if (o.balloons.empty()) throw UsageError("--akde needs --balloons");
    const bgmm::BalloonFile bf = bgmm::read_balloon_csv(o.balloons);
    const bgmm::AkdeModel model = bgmm::build_akde(bf.samples, bf.field);
    const auto spec = finish_spec(bgmm::default_grid(model.samples.points, model.kernels));
    grid = bgmm::rasterize([&](bgmm::Vec2 x) { return bgmm::akde_pdf(model, x); }, spec);
  } else {
    if (o.model.empty()) throw UsageError("density needs --model, or --akde with --balloons");
    const bgmm::MixtureModel model = bgmm::read_model_json(o.model).model;
    std::vector<bgmm::Vec2> points;
    std::vector<bgmm::SymMat2> covs;
    for (const auto& c : model.components) {
      points.push_back(c.mean);
      covs.push_back(c.cov);
    }
    if (!o.balloons.empty()) {
      const bgmm::BalloonFile bf = bgmm::read_balloon_csv(o.balloons);
      points = bf.samples.points;
      for (const auto& e : bf.field.entries) covs.push_back(e.kernel);
    }
    const auto spec = finish_spec(bgmm::default_grid(points, covs));
    grid = bgmm::rasterize([&](bgmm::Vec2 x) { return bgmm::mixture_pdf(model, x); }, spec);
  }

  const std::string ext = std::filesystem::path(o.out).extension().string();
  if (ext == ".csv") {
    bgmm::write_grid_csv(grid, o.out);
  } else if (ext == ".pgm") {
    bgmm::write_pgm(grid, o.gamma, o.out);
  } else {
    throw UsageError("output must end in .pgm or .csv");
  }
  std::cout << "mass " << bgmm::fmt17(bgmm::grid_mass(grid)) << " max " << bgmm::fmt17(grid.max_value()) << '\n';
  return 0;
}

// ---- stats -----------------------------------------------------------------

struct StatsOptions {
  std::string model;
  std::string samples;
  double threshold_rel = 0.01;
  double coincide_tol_rel = bgmm::kCoincideTolRel;
  bool csv = false;
};

int run_stats(const StatsOptions& o) {
  const bgmm::ModelFile mf = bgmm::read_model_json(o.model);
  const auto& model = mf.model;
  std::size_t n = mf.n_samples;
  std::optional<bgmm::SampleSet> samples;
  if (!o.samples.empty()) {
    samples = bgmm::read_samples_csv(o.samples);
    n = samples->size();
  }
  if (n == 0) throw Error("sample count unknown: model has n_samples 0 and no --samples given");

  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (const auto& c : model.components) {
    const auto e = bgmm::eigen(c.cov);
    lo = std::min(lo, e.minor);
    hi = std::max(hi, e.major);
  }
  std::vector<std::pair<std::string, std::string>> rows = {
      {"components", std::to_string(model.size())},
      {"distinct_components", std::to_string(bgmm::merge_coincident(model, o.coincide_tol_rel).size())},
      {"effective_components", std::to_string(bgmm::effective_count(model, n, o.threshold_rel, o.coincide_tol_rel))},
      {"sum_pi", bgmm::fmt17(model.total_weight())},
      {"n_samples", std::to_string(n)},
      {"target_p", bgmm::fmt17(mf.target_p)},
      {"min_cov_eigenvalue", bgmm::fmt17(lo)},
      {"max_cov_eigenvalue", bgmm::fmt17(hi)},
  };
  if (samples) {
    const auto ll = bgmm::log_likelihood(model, *samples);
    rows.emplace_back("log_likelihood", bgmm::fmt17(ll.value));
    if (ll.zero_density_sample) rows.emplace_back("zero_density_sample", std::to_string(*ll.zero_density_sample));
  }
  if (o.csv) {
    std::cout << "key,value\n";
    for (const auto& [k, v] : rows) std::cout << k << ',' << v << '\n';
  } else {
    for (const auto& [k, v] : rows) std::cout << k << ": " << v << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balloon-regularized Gaussian mixture estimation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "Generate a sample set");
  g->add_option("--seed", gen.seed, "SplitMix64 seed");
  g->add_option("--n", gen.n, "Number of samples");
  g->add_option("--shape", gen.shape, "uniform | normal:<mx>,<my>,<sd> | gmm:<model.json>");
  g->add_option("-o,--out", gen.out, "Output CSV");

  FitOptions fo;
  auto* f = app.add_subcommand("fit", "Fit a balloon-regularized mixture");
  f->add_option("-s,--samples", fo.samples, "Samples CSV");
  f->add_option("--p", fo.p, "Target probability P in (0,1]");
  f->add_option("--iters", fo.config.outer_iters, "Outer iterations");
  f->add_option("--seed", fo.config.seed, "Seed recorded in the manifest");
  f->add_option("--eps-rel", fo.config.init_eps_rel, "Initial standard deviation relative to the data diagonal");
  f->add_option("--balloon-steps", fo.balloon_steps, "Maximum balloon updates per outer iteration");
  f->add_flag("--warm-start", fo.config.balloon.warm_start, "Start balloons from the previous iteration");
  f->add_flag("--target-on-balloon", fo.config.balloon.target_on_balloon,
              "Converge the isotropic balloon mass instead of the kernel mass");
  f->add_option("--early-stop-tol", fo.early_stop_tol, "Stop when the largest parameter change is below this");
  f->add_option("--threshold-rel", fo.config.effective_threshold_rel, "Effective component threshold times 1/N");
  f->add_option("-o,--out", fo.out, "Output prefix");
  f->add_flag("--svg", fo.svg, "Also write balloon, kernel and component SVG panels");
  f->add_option("--manifest", fo.manifest_in, "Re-run the fit recorded in a manifest");

  DensityOptions d;
  auto* ds = app.add_subcommand("density", "Rasterize a fitted mixture or the adaptive KDE");
  ds->add_option("-m,--model", d.model, "Model JSON");
  ds->add_option("-b,--balloons", d.balloons, "Balloon CSV");
  ds->add_flag("--akde", d.akde, "Render the adaptive KDE from --balloons");
  ds->add_option("--width", d.width, "Grid columns")->check(CLI::Range(2, 1 << 15));
  ds->add_option("--height", d.height, "Grid rows")->check(CLI::Range(2, 1 << 15));
  ds->add_option("--bbox", d.bbox, "xmin ymin xmax ymax")->expected(4);
  ds->add_option("--gamma", d.gamma, "PGM gamma");
  ds->add_option("-o,--out", d.out, "Output .pgm or .csv");

  StatsOptions st;
  auto* s = app.add_subcommand("stats", "Report model statistics");
  s->add_option("-m,--model", st.model, "Model JSON")->required();
  s->add_option("-s,--samples", st.samples, "Samples CSV for the log-likelihood");
  s->add_option("--threshold-rel", st.threshold_rel, "Effective component threshold times 1/N");
  s->add_option("--coincide-tol", st.coincide_tol_rel, "Relative tolerance for merging coincident components");
  s->add_flag("--csv", st.csv, "Emit key,value CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "bgmm: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*g) {
      bgmm::write_samples_csv(generate(gen), gen.out);
      return 0;
    }
    if (*f) return run_fit(fo);
    if (*ds) return run_density(d);
    if (*s) return run_stats(st);
  } catch (const UsageError& e) {
    std::cerr << "bgmm: usage: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "bgmm: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
