#pragma once

// SVG overlays drawn in data coordinates: sample dots plus one-sigma
// ellipses for balloons, regularizing kernels or mixture components.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "bgmm/balloon.hpp"
#include "bgmm/gauss2.hpp"
#include "bgmm/io.hpp"

namespace bgmm {

/// One-standard-deviation contour of N(center, cov).
struct Ellipse {
  Vec2 center;
  double rx = 0.0;         // semi-axis along the major eigenvector
  double ry = 0.0;
  double angle_deg = 0.0;  // major axis direction, counter-clockwise from +x
};

inline Ellipse ellipse_from_cov(Vec2 center, SymMat2 cov) {
  const Eigen2 e = eigen(cov);
  return {center, std::sqrt(std::max(e.major, 0.0)), std::sqrt(std::max(e.minor, 0.0)),
          e.angle * 180.0 / std::numbers::pi};
}

struct SvgStyle {
  double dot_radius = 0.006;  // data units
  double stroke_px = 1.0;
};

namespace detail {

inline std::string svg_open(Vec2 lo, Vec2 hi) {
  const double w = hi.x - lo.x;
  const double h = hi.y - lo.y;
  // y grows upward in data space; the group flips it for SVG.
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"512\" "
         "height=\"" + std::to_string(static_cast<long>(std::lround(512.0 * h / w))) + "\" viewBox=\"" + fmt17(lo.x) +
         " " + fmt17(-hi.y) + " " + fmt17(w) + " " + fmt17(h) + "\">\n<rect x=\"" + fmt17(lo.x) + "\" y=\"" +
         fmt17(-hi.y) + "\" width=\"" + fmt17(w) + "\" height=\"" + fmt17(h) +
         "\" fill=\"white\"/>\n<g transform=\"scale(1,-1)\">\n";
}

inline std::string svg_ellipse(const Ellipse& e, const std::string& stroke, double opacity, double stroke_px) {
  return "<ellipse cx=\"" + fmt17(e.center.x) + "\" cy=\"" + fmt17(e.center.y) + "\" rx=\"" + fmt17(e.rx) +
         "\" ry=\"" + fmt17(e.ry) + "\" transform=\"rotate(" + fmt17(e.angle_deg) + " " + fmt17(e.center.x) + " " +
         fmt17(e.center.y) + ")\" fill=\"none\" stroke=\"" + stroke + "\" stroke-opacity=\"" + fmt17(opacity) +
         "\" stroke-width=\"" + fmt17(stroke_px) + "\" vector-effect=\"non-scaling-stroke\"/>\n";
}

inline std::string svg_dots(const SampleSet& samples, double r) {
  std::string s;
  for (const auto& p : samples.points) {
    s += "<circle cx=\"" + fmt17(p.x) + "\" cy=\"" + fmt17(p.y) + "\" r=\"" + fmt17(r) + "\" fill=\"black\"/>\n";
  }
  return s;
}

inline void svg_write(const std::string& body, Vec2 lo, Vec2 hi, const std::string& path) {
  auto out = open_out(path);
  out << svg_open(lo, hi) << body << "</g>\n</svg>\n";
  finish(out, path);
}

inline void svg_extent(const std::vector<Ellipse>& es, const SampleSet& samples, Vec2& lo, Vec2& hi) {
  const auto b = samples.bounds();
  lo = b.first;
  hi = b.second;
  for (const auto& e : es) {
    const double r = std::max(e.rx, e.ry);
    lo = {std::min(lo.x, e.center.x - r), std::min(lo.y, e.center.y - r)};
    hi = {std::max(hi.x, e.center.x + r), std::max(hi.y, e.center.y + r)};
  }
  const double pad = 0.02 * std::max({hi.x - lo.x, hi.y - lo.y, 1e-9});
  lo = {lo.x - pad, lo.y - pad};
  hi = {hi.x + pad, hi.y + pad};
}

inline void write_ellipse_panel(const SampleSet& samples, const std::vector<Ellipse>& es,
                                const std::vector<double>& opacity, const std::string& stroke,
                                const SvgStyle& style, const std::string& path) {
  Vec2 lo, hi;
  svg_extent(es, samples, lo, hi);
  std::string body;
  for (std::size_t k = 0; k < es.size(); ++k) body += svg_ellipse(es[k], stroke, opacity[k], style.stroke_px);
  body += svg_dots(samples, style.dot_radius);
  svg_write(body, lo, hi, path);
}

}  // namespace detail

/// Samples with their isotropic balloons (circles of radius σ_n).
inline void write_balloons_svg(const SampleSet& samples, const BalloonField& field, const std::string& path,
                               const SvgStyle& style = {}) {
  if (samples.size() != field.size()) throw Error("balloon field and samples differ in length");
  std::vector<Ellipse> es;
  for (std::size_t n = 0; n < field.size(); ++n) {
    es.push_back(ellipse_from_cov(samples.points[n], SymMat2::identity(field.entries[n].sigma2)));
  }
  detail::write_ellipse_panel(samples, es, std::vector<double>(es.size(), 1.0), "#1f5fbf", style, path);
}

/// Samples with their regularizing kernels R_n.
inline void write_kernels_svg(const SampleSet& samples, const BalloonField& field, const std::string& path,
                              const SvgStyle& style = {}) {
  if (samples.size() != field.size()) throw Error("balloon field and samples differ in length");
  std::vector<Ellipse> es;
  for (std::size_t n = 0; n < field.size(); ++n) es.push_back(ellipse_from_cov(samples.points[n], field.entries[n].kernel));
  detail::write_ellipse_panel(samples, es, std::vector<double>(es.size(), 1.0), "#bf3f1f", style, path);
}

/// Mixture components; stroke opacity scales with π_m relative to the largest.
inline void write_components_svg(const SampleSet& samples, const MixtureModel& model, const std::string& path,
                                 const SvgStyle& style = {}) {
  double wmax = 0.0;
  for (const auto& c : model.components) wmax = std::max(wmax, c.weight);
  std::vector<Ellipse> es;
  std::vector<double> op;
  for (const auto& c : model.components) {
    es.push_back(ellipse_from_cov(c.mean, c.cov));
    op.push_back(wmax > 0.0 ? std::clamp(c.weight / wmax, 0.05, 1.0) : 1.0);
  }
  detail::write_ellipse_panel(samples, es, op, "#1f8f3f", style, path);
}

}  // namespace bgmm
