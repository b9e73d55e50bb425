#pragma once

// Adaptive KDE: one density-normalized Gaussian per sample with the sample's
// regularizing kernel as covariance and uniform weight 1/N.

#include <cstddef>
#include <string>
#include <vector>

#include "bgmm/balloon.hpp"
#include "bgmm/gauss2.hpp"

namespace bgmm {

struct AkdeModel {
  SampleSet samples;
  std::vector<SymMat2> kernels;
};

inline AkdeModel build_akde(const SampleSet& samples, const BalloonField& balloons) {
  if (samples.size() != balloons.size()) {
    throw Error("AKDE needs one balloon per sample: " + std::to_string(samples.size()) + " samples, " +
                std::to_string(balloons.size()) + " balloons");
  }
  if (samples.empty()) throw Error("AKDE needs at least one sample");
  AkdeModel model{samples, {}};
  model.kernels.reserve(balloons.size());
  for (std::size_t n = 0; n < balloons.size(); ++n) {
    const SymMat2 k = balloons.entries[n].kernel;
    if (!k.positive_definite()) {
      throw DomainError("kernel of sample " + std::to_string(n) + " is not positive-definite: " + describe(k));
    }
    model.kernels.push_back(k);
  }
  return model;
}

inline double akde_pdf(const AkdeModel& model, Vec2 x) {
  double f = 0.0;
  for (std::size_t n = 0; n < model.samples.size(); ++n) f += gauss_pdf(x, model.samples.points[n], model.kernels[n]);
  return f / static_cast<double>(model.samples.size());
}

/// The same density written as a uniform-weight mixture.
inline MixtureModel to_mixture(const AkdeModel& model) {
  MixtureModel out;
  const double w = 1.0 / static_cast<double>(model.samples.size());
  for (std::size_t n = 0; n < model.samples.size(); ++n) {
    out.components.push_back({w, model.samples.points[n], model.kernels[n]});
  }
  return out;
}

}  // namespace bgmm
