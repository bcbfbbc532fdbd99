#pragma once

// Likelihood threshold: the largest log-density a Gaussian prior with scale
// w * sigma can assign (attained at z = 0), where w is the two-sided
// standard-normal critical value for significance alpha.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "inflow/error.hpp"

namespace inflow {

/// y with erf(y) = p. Rational first guess refined by Newton steps on std::erf.
inline double inverse_erf(double p) {
  if (!(std::fabs(p) < 1.0)) throw DomainError("inverse_erf: argument must lie in (-1, 1)");
  if (p == 0.0) return 0.0;
  // Single-precision rational approximation (M. Giles, 2010).
  double w = -std::log((1.0 - p) * (1.0 + p));
  double y;
  if (w < 5.0) {
    w -= 2.5;
    y = 2.81022636e-08;
    y = 3.43273939e-07 + y * w;
    y = -3.5233877e-06 + y * w;
    y = -4.39150654e-06 + y * w;
    y = 0.00021858087 + y * w;
    y = -0.00125372503 + y * w;
    y = -0.00417768164 + y * w;
    y = 0.246640727 + y * w;
    y = 1.50140941 + y * w;
  } else {
    w = std::sqrt(w) - 3.0;
    y = -0.000200214257;
    y = 0.000100950558 + y * w;
    y = 0.00134934322 + y * w;
    y = -0.00367342844 + y * w;
    y = 0.00573950773 + y * w;
    y = -0.0076224613 + y * w;
    y = 0.00943887047 + y * w;
    y = 1.00167406 + y * w;
    y = 2.83297682 + y * w;
  }
  y *= p;
  const double slope = 2.0 / std::sqrt(std::numbers::pi);
  for (int i = 0; i < 4; ++i) {
    const double err = std::erf(y) - p;
    const double step = err / (slope * std::exp(-y * y));
    y -= step;
    if (std::fabs(step) <= 1e-16 * std::fabs(y)) break;
  }
  return y;
}

/// w = sqrt(2) * erfinv(1 - alpha): half-width, in standard deviations, of the
/// central interval holding 1 - alpha of a Gaussian.
inline double confidence_width(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("confidence_width: alpha must lie in (0, 1)");
  return std::numbers::sqrt2 * inverse_erf(1.0 - alpha);
}

/// L_th = -(l/2) ln(2 pi) - l ln(w sigma)
inline double likelihood_threshold(double alpha, std::size_t latent_dim, double sigma = 1.0) {
  if (latent_dim < 1) throw DomainError("likelihood_threshold: latent dimension must be at least 1");
  if (!(sigma > 0.0)) throw DomainError("likelihood_threshold: sigma must be positive");
  const double l = static_cast<double>(latent_dim);
  const double w = confidence_width(alpha);
  return -0.5 * l * std::log(2.0 * std::numbers::pi) - l * std::log(w * sigma);
}

enum class OodLabel { in, out };

/// Out-of-distribution iff the log-likelihood is strictly below the threshold.
inline OodLabel classify(double loglik, double threshold) {
  return loglik < threshold ? OodLabel::out : OodLabel::in;
}

inline std::vector<OodLabel> classify(std::span<const double> logliks, double threshold) {
  std::vector<OodLabel> out;
  out.reserve(logliks.size());
  for (double v : logliks) out.push_back(classify(v, threshold));
  return out;
}

inline const char* to_string(OodLabel label) { return label == OodLabel::in ? "in" : "out"; }

}  // namespace inflow
