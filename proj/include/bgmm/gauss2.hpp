#pragma once

// Exact bivariate Gaussian and kernel algebra. Every 2x2 operation is a
// closed form on three stored scalars.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bgmm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a matrix that must be inverted is singular or indefinite.
class DomainError : public Error {
 public:
  using Error::Error;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Vec2 operator+(Vec2 p, Vec2 q) { return {p.x + q.x, p.y + q.y}; }
  friend constexpr Vec2 operator-(Vec2 p, Vec2 q) { return {p.x - q.x, p.y - q.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 p) { return {s * p.x, s * p.y}; }
  friend constexpr bool operator==(Vec2, Vec2) = default;

  [[nodiscard]] bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

inline double dot(Vec2 p, Vec2 q) { return p.x * q.x + p.y * q.y; }

/// Symmetric 2x2 matrix [[a, b], [b, c]]. Positive-definiteness is not part
/// of the type; operations that invert check it and throw DomainError.
struct SymMat2 {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  static constexpr SymMat2 identity(double s = 1.0) { return {s, 0.0, s}; }
  /// p pᵀ
  static constexpr SymMat2 outer(Vec2 p) { return {p.x * p.x, p.x * p.y, p.y * p.y}; }

  [[nodiscard]] constexpr double det() const { return a * c - b * b; }
  [[nodiscard]] constexpr double trace() const { return a + c; }

  /// det > 1e-300 and a > 0.
  [[nodiscard]] bool positive_definite() const {
    return std::isfinite(a) && std::isfinite(b) && std::isfinite(c) && a > 0.0 && det() > 1e-300;
  }

  [[nodiscard]] Vec2 apply(Vec2 p) const { return {a * p.x + b * p.y, b * p.x + c * p.y}; }

  friend constexpr SymMat2 operator+(SymMat2 m, SymMat2 n) { return {m.a + n.a, m.b + n.b, m.c + n.c}; }
  friend constexpr SymMat2 operator-(SymMat2 m, SymMat2 n) { return {m.a - n.a, m.b - n.b, m.c - n.c}; }
  friend constexpr SymMat2 operator*(double s, SymMat2 m) { return {s * m.a, s * m.b, s * m.c}; }
  SymMat2& operator+=(SymMat2 m) {
    a += m.a;
    b += m.b;
    c += m.c;
    return *this;
  }
  friend constexpr bool operator==(SymMat2, SymMat2) = default;
};

/// The covariance, balloon and kernel matrices are all symmetric 2x2 values.
using SpdMat2 = SymMat2;

inline std::string describe(SymMat2 m) {
  std::ostringstream os;
  os.precision(17);
  os << "[[" << m.a << ", " << m.b << "], [" << m.b << ", " << m.c << "]]";
  return os.str();
}

inline std::string describe(Vec2 p) {
  std::ostringstream os;
  os.precision(17);
  os << "(" << p.x << ", " << p.y << ")";
  return os.str();
}

inline void require_positive_definite(SymMat2 m, const char* what) {
  if (!m.positive_definite()) {
    throw DomainError(std::string(what) + " is not positive-definite: " + describe(m));
  }
}

/// Inverse of a positive-definite matrix.
inline SymMat2 inverse(SymMat2 m, const char* what = "matrix") {
  require_positive_definite(m, what);
  const double d = m.det();
  return {m.c / d, -m.b / d, m.a / d};
}

/// pᵀ M⁻¹ p without forming the inverse.
inline double inverse_quadratic(SymMat2 m, Vec2 p, const char* what = "matrix") {
  require_positive_definite(m, what);
  return (m.c * p.x * p.x - 2.0 * m.b * p.x * p.y + m.a * p.y * p.y) / m.det();
}

struct Eigen2 {
  double major = 0.0;  // larger eigenvalue
  double minor = 0.0;
  double angle = 0.0;  // radians, direction of the major eigenvector
  [[nodiscard]] Vec2 major_axis() const { return {std::cos(angle), std::sin(angle)}; }
  [[nodiscard]] Vec2 minor_axis() const { return {-std::sin(angle), std::cos(angle)}; }
};

inline Eigen2 eigen(SymMat2 m) {
  const double mean = 0.5 * (m.a + m.c);
  const double half_diff = 0.5 * (m.a - m.c);
  const double radius = std::hypot(half_diff, m.b);
  Eigen2 e;
  e.major = mean + radius;
  e.minor = mean - radius;
  // Recover the smaller root from the determinant when the larger one
  // dominates, avoiding cancellation.
  if (e.major > 0.0 && e.minor > 0.0) e.minor = m.det() / e.major;
  e.angle = (radius == 0.0) ? 0.0 : 0.5 * std::atan2(2.0 * m.b, m.a - m.c);
  return e;
}

/// Q diag(major, minor) Qᵀ with Q the rotation by `angle`.
inline SymMat2 compose(double major, double minor, double angle) {
  const double cs = std::cos(angle);
  const double sn = std::sin(angle);
  return {major * cs * cs + minor * sn * sn, (major - minor) * cs * sn, major * sn * sn + minor * cs * cs};
}

struct GaussComponent {
  double weight = 0.0;
  Vec2 mean;
  SymMat2 cov;
};

struct MixtureModel {
  std::vector<GaussComponent> components;

  [[nodiscard]] std::size_t size() const { return components.size(); }
  [[nodiscard]] double total_weight() const {
    double s = 0.0;
    for (const auto& c : components) s += c.weight;
    return s;
  }
};

/// Throws unless weights lie in [0,1] and sum to one within 1e-9, and every
/// covariance is positive-definite.
inline void validate(const MixtureModel& model) {
  if (model.components.empty()) throw Error("mixture model has no components");
  for (std::size_t m = 0; m < model.size(); ++m) {
    const auto& comp = model.components[m];
    if (!(comp.weight >= 0.0 && comp.weight <= 1.0)) {
      throw Error("component " + std::to_string(m) + " has weight outside [0,1]");
    }
    if (!comp.mean.finite()) throw Error("component " + std::to_string(m) + " has a non-finite mean");
    if (!comp.cov.positive_definite()) {
      throw DomainError("component " + std::to_string(m) + " covariance is not positive-definite: " +
                        describe(comp.cov));
    }
  }
  if (std::abs(model.total_weight() - 1.0) > 1e-9) throw Error("mixture weights do not sum to 1");
}

struct SampleSet {
  std::vector<Vec2> points;

  [[nodiscard]] std::size_t size() const { return points.size(); }
  [[nodiscard]] bool empty() const { return points.empty(); }

  [[nodiscard]] std::pair<Vec2, Vec2> bounds() const {
    if (points.empty()) return {};
    Vec2 lo = points.front();
    Vec2 hi = points.front();
    for (const auto& p : points) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    return {lo, hi};
  }

  /// Length of the bounding-box diagonal.
  [[nodiscard]] double diagonal() const {
    const auto [lo, hi] = bounds();
    return std::hypot(hi.x - lo.x, hi.y - lo.y);
  }

  [[nodiscard]] Vec2 mean() const {
    Vec2 s;
    for (const auto& p : points) s = s + p;
    return (1.0 / static_cast<double>(points.size())) * s;
  }
};

struct ProductParams {
  SymMat2 cov;
  Vec2 mean;
};

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline double gauss_pdf(Vec2 x, Vec2 mean, SymMat2 cov) {
  const double q = inverse_quadratic(cov, x - mean, "covariance");
  return std::exp(-0.5 * q) / (kTwoPi * std::sqrt(cov.det()));
}

inline double log_gauss_pdf(Vec2 x, Vec2 mean, SymMat2 cov) {
  const double q = inverse_quadratic(cov, x - mean, "covariance");
  return -0.5 * q - std::log(kTwoPi) - 0.5 * std::log(cov.det());
}

/// Peak-normalized kernel exp[-1/2 (r-x)ᵀ R⁻¹ (r-x)].
inline double kernel_eval(Vec2 r, Vec2 center, SymMat2 kernel) {
  return std::exp(-0.5 * inverse_quadratic(kernel, r - center, "kernel"));
}

/// Parameters of N(r|mean,cov)·K(r|center,S) seen as an unnormalized Gaussian:
/// cov' = (cov⁻¹ + S⁻¹)⁻¹, mean' = cov'(cov⁻¹ mean + S⁻¹ center).
inline ProductParams product_params(Vec2 mean, SymMat2 cov, Vec2 center, SymMat2 balloon) {
  const SymMat2 cov_inv = inverse(cov, "covariance");
  const SymMat2 bal_inv = inverse(balloon, "balloon");
  ProductParams out;
  out.cov = inverse(cov_inv + bal_inv, "product precision");
  // Same mean written relative to `mean` so that only offsets enter.
  out.mean = mean + out.cov.apply(bal_inv.apply(center - mean));
  return out;
}

/// Probability mass pi·∫N(r|mean,cov)K(r|center,S)dr of one component.
inline double overlap_prob(const GaussComponent& comp, Vec2 center, SymMat2 balloon) {
  require_positive_definite(comp.cov, "covariance");
  require_positive_definite(balloon, "balloon");
  const SymMat2 sum = comp.cov + balloon;
  return comp.weight * std::sqrt(balloon.det() / sum.det()) * kernel_eval(center, comp.mean, sum);
}

/// log overlap_prob, finite wherever the weight is positive.
inline double log_overlap_prob(const GaussComponent& comp, Vec2 center, SymMat2 balloon) {
  require_positive_definite(comp.cov, "covariance");
  require_positive_definite(balloon, "balloon");
  if (!(comp.weight > 0.0)) return -std::numeric_limits<double>::infinity();
  const SymMat2 sum = comp.cov + balloon;
  return std::log(comp.weight) + 0.5 * std::log(balloon.det() / sum.det()) -
         0.5 * inverse_quadratic(sum, center - comp.mean, "covariance sum");
}

inline double total_overlap(const MixtureModel& model, Vec2 center, SymMat2 balloon) {
  double p = 0.0;
  for (const auto& comp : model.components) p += overlap_prob(comp, center, balloon);
  return p;
}

inline double mixture_pdf(const MixtureModel& model, Vec2 x) {
  double f = 0.0;
  for (const auto& comp : model.components) f += comp.weight * gauss_pdf(x, comp.mean, comp.cov);
  return f;
}

/// Σ_n log f(x_n). A sample with zero density makes the value -inf and is
/// reported through `zero_density_sample`.
struct LogLikelihood {
  double value = 0.0;
  std::optional<std::size_t> zero_density_sample;
};

inline LogLikelihood log_likelihood(const MixtureModel& model, const SampleSet& samples) {
  LogLikelihood ll;
  std::vector<double> terms(model.size());
  for (std::size_t n = 0; n < samples.size(); ++n) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < model.size(); ++m) {
      const auto& comp = model.components[m];
      terms[m] = comp.weight > 0.0 ? std::log(comp.weight) + log_gauss_pdf(samples.points[n], comp.mean, comp.cov)
                                   : -std::numeric_limits<double>::infinity();
      peak = std::max(peak, terms[m]);
    }
    if (peak == -std::numeric_limits<double>::infinity()) {
      ll.value = -std::numeric_limits<double>::infinity();
      ll.zero_density_sample = n;
      return ll;
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - peak);
    ll.value += peak + std::log(s);
  }
  return ll;
}

}  // namespace bgmm
