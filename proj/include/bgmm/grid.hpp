#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "bgmm/gauss2.hpp"
#include "bgmm/parallel.hpp"

namespace bgmm {

/// Axis-aligned raster. Row j covers y from min.y + j·dy upward; column i
/// covers x from min.x + i·dx.
struct GridSpec {
  Vec2 min{0.0, 0.0};
  Vec2 max{1.0, 1.0};
  std::size_t width = 256;
  std::size_t height = 256;

  [[nodiscard]] double dx() const { return (max.x - min.x) / static_cast<double>(width); }
  [[nodiscard]] double dy() const { return (max.y - min.y) / static_cast<double>(height); }
  [[nodiscard]] double cell_area() const { return dx() * dy(); }
  [[nodiscard]] Vec2 cell_center(std::size_t i, std::size_t j) const {
    return {min.x + (static_cast<double>(i) + 0.5) * dx(), min.y + (static_cast<double>(j) + 0.5) * dy()};
  }
};

inline void validate(const GridSpec& spec) {
  if (!spec.min.finite() || !spec.max.finite()) throw Error("grid bounds must be finite");
  if (!(spec.max.x > spec.min.x && spec.max.y > spec.min.y)) throw Error("grid max must exceed min in both axes");
  if (spec.width < 2 || spec.height < 2) throw Error("grid needs at least 2x2 cells");
}

struct DensityGrid {
  GridSpec spec;
  std::vector<double> values;  // row-major, values[j * width + i]

  [[nodiscard]] double at(std::size_t i, std::size_t j) const { return values[j * spec.width + i]; }
  [[nodiscard]] double max_value() const {
    return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  }
};

/// Samples `density` at every cell center. Rows are distributed across
/// workers; each cell is computed independently.
template <typename Density>
DensityGrid rasterize(Density&& density, const GridSpec& spec, std::size_t threads = 0) {
  validate(spec);
  DensityGrid grid{spec, std::vector<double>(spec.width * spec.height)};
  parallel_for(
      spec.height,
      [&](std::size_t j) {
        for (std::size_t i = 0; i < spec.width; ++i) {
          const double v = density(spec.cell_center(i, j));
          if (!std::isfinite(v) || v < 0.0) {
            throw Error("density at cell (" + std::to_string(i) + ", " + std::to_string(j) +
                        ") is not a finite non-negative value");
          }
          grid.values[j * spec.width + i] = v;
        }
      },
      threads);
  return grid;
}

/// Riemann sum of the density over the grid.
inline double grid_mass(const DensityGrid& grid) {
  double s = 0.0;
  for (double v : grid.values) s += v;
  return s * grid.spec.cell_area();
}

/// Box of `points` grown by 3 × the largest standard deviation of `covs`.
inline GridSpec default_grid(const std::vector<Vec2>& points, const std::vector<SymMat2>& covs,
                             std::size_t width = 256, std::size_t height = 256) {
  if (points.empty()) throw Error("cannot derive a grid from zero points");
  Vec2 lo = points.front();
  Vec2 hi = points.front();
  for (const auto& p : points) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
  }
  double var = 0.0;
  for (const auto& c : covs) var = std::max(var, eigen(c).major);
  double pad = 3.0 * std::sqrt(var);
  if (!(pad > 0.0)) pad = 1e-6;
  return {{lo.x - pad, lo.y - pad}, {hi.x + pad, hi.y + pad}, width, height};
}

}  // namespace bgmm
