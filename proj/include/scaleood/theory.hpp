#pragma once

// Rectified-Gaussian activation model.
//
// Activations a_j = max(0, x_j), x_j ~ N(mu, sigma^2). Keeping the entries
// above the p-quantile s of the Gaussian gives a truncated Gaussian h_j, and
//
//   E[a]  = mu (1 - Phi(-mu/sigma)) + phi(-mu/sigma) sigma
//   E[h]  = mu + sigma phi(m) / (1 - Phi(m)),   m = (s - mu) / sigma
//   beta  = (1 - p) Q / Q_p = E[a] / E[h]
//   C(p)  = phi(z_p) / (1 - Phi(z_p)),          z_p = sqrt(2) erfinv(2p - 1)
//
// C depends on p only. Dropping phi(-gamma) sigma from E[a] gives
// beta ~ gamma (1 - A) / (gamma + C) with gamma = mu/sigma, A = Phi(-gamma).
// Comparing two such approximations after a first-order expansion reduces to
// the quadratic a1 C^2 + a2 C + a3 >= 0 handled by delta_discriminant().

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "scaleood/core.hpp"
#include "scaleood/random.hpp"
#include "scaleood/shaping.hpp"

namespace scaleood {

struct GaussianParams {
  double mu = 0.0;
  double sigma = 1.0;

  void validate() const {
    if (!std::isfinite(mu) || !std::isfinite(sigma) || !(sigma > 0.0))
      throw InvalidArgument("Gaussian parameters need finite mu and sigma > 0");
  }
  double gamma() const noexcept { return mu / sigma; }
};

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

// Via erfc so that both tails keep full relative precision.
inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// 1 - Phi(x) without cancellation.
inline double std_normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// Inverse error function on (-1, 1).
///
/// Giles' single-precision rational approximation as a starting point,
/// followed by two Halley steps on erf (or erfc in the tails).
inline double erf_inv(double y) {
  if (std::isnan(y)) return y;
  if (!(y > -1.0 && y < 1.0))
    throw InvalidArgument("erf_inv is only finite on (-1, 1), got " + std::to_string(y));
  if (y == 0.0) return 0.0;

  double w = -std::log1p(-y * y);
  double x;
  if (w < 5.0) {
    w -= 2.5;
    double p = 2.81022636e-08;
    p = 3.43273939e-07 + p * w;
    p = -3.5233877e-06 + p * w;
    p = -4.39150654e-06 + p * w;
    p = 0.00021858087 + p * w;
    p = -0.00125372503 + p * w;
    p = -0.00417768164 + p * w;
    p = 0.246640727 + p * w;
    p = 1.50140941 + p * w;
    x = p * y;
  } else {
    w = std::sqrt(w) - 3.0;
    double p = -0.000200214257;
    p = 0.000100950558 + p * w;
    p = 0.00134934322 + p * w;
    p = -0.00367342844 + p * w;
    p = 0.00573950773 + p * w;
    p = -0.0076224613 + p * w;
    p = 0.00943887047 + p * w;
    p = 1.00167406 + p * w;
    p = 2.83297682 + p * w;
    x = p * y;
  }

  const double two_over_sqrt_pi = 2.0 / std::sqrt(std::numbers::pi);
  const double ay = std::fabs(y);
  double ax = std::fabs(x);
  for (int it = 0; it < 2; ++it) {
    // f(x) = erf(x) - |y|, evaluated as (1 - |y|) - erfc(x) when |y| > 0.5
    const double f = ay > 0.5 ? (1.0 - ay) - std::erfc(ax) : std::erf(ax) - ay;
    const double df = two_over_sqrt_pi * std::exp(-ax * ax);
    if (df == 0.0) break;
    ax -= f / (df + ax * f);
  }
  return std::copysign(ax, y);
}

/// Standard-normal p-quantile, sqrt(2) erfinv(2p - 1).
///
/// 2p - 1 cancels for small p, so the estimate is polished with Halley steps on
/// Phi(x) - p, using the tail that keeps relative precision.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw InvalidArgument("normal quantile needs p in (0, 1), got " + std::to_string(p));
  double x = std::numbers::sqrt2 * erf_inv(2.0 * p - 1.0);
  for (int it = 0; it < 2; ++it) {
    const double f = p < 0.5 ? 0.5 * std::erfc(-x / std::numbers::sqrt2) - p
                             : (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2);
    const double d = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    if (d == 0.0) break;
    const double t = f / d;
    x -= t / (1.0 + 0.5 * x * t);
  }
  return x;
}

/// E[max(0, X)], X ~ N(mu, sigma^2).
inline double rectified_moment(const GaussianParams& g) {
  g.validate();
  const double gamma = g.gamma();
  return g.mu * (1.0 - std_normal_cdf(-gamma)) + std_normal_pdf(-gamma) * g.sigma;
}

inline constexpr double kMaxTruncationZ = 8.0;

/// E[X | X > s], X ~ N(mu, sigma^2).
inline double truncated_moment(const GaussianParams& g, double s) {
  g.validate();
  if (!std::isfinite(s)) throw InvalidArgument("truncation point must be finite");
  const double m = (s - g.mu) / g.sigma;
  if (m > kMaxTruncationZ)
    throw PrecisionError("truncation point " + std::to_string(m) +
                         " standard deviations above the mean leaves no usable tail mass");
  return g.mu + g.sigma * std_normal_pdf(m) / std_normal_sf(m);
}

inline constexpr double kMaxPercentile = 1.0 - 1e-12;

/// Standard-normal hazard at the p-quantile.
inline double c_of_p(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw InvalidArgument("C(p) needs p in (0, 1), got " + std::to_string(p));
  if (p >= kMaxPercentile) throw PrecisionError("C(p) is not resolvable this close to p = 1");
  const double z = normal_quantile(p);
  return std_normal_pdf(z) / std_normal_sf(z);
}

/// Gaussian p-quantile used as the truncation point: mu + sigma z_p.
inline double truncation_point(const GaussianParams& g, double p) {
  return g.mu + g.sigma * normal_quantile(p);
}

/// beta = E[a] / E[h] with h truncated at the p-quantile.
inline double beta_exact(const GaussianParams& g, double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("beta needs p in (0, 1)");
  if (p >= kMaxPercentile) throw PrecisionError("beta is not resolvable this close to p = 1");
  return rectified_moment(g) / truncated_moment(g, truncation_point(g, p));
}

/// gamma (1 - A) / (gamma + C(p)).
inline double beta_approx(double gamma, double p) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidArgument("gamma must be positive");
  const double one_minus_a = 1.0 - std_normal_cdf(-gamma);
  return gamma * one_minus_a / (gamma + c_of_p(p));
}

struct TheoryQuantities {
  double gamma = 0.0;
  double A = 0.0;  // Phi(-gamma)
  double B = 0.0;  // phi(-gamma)
  double C = 0.0;  // C(p)
  double beta = 0.0;
  double beta_approx = 0.0;
};

inline TheoryQuantities theory_quantities(const GaussianParams& g, double p) {
  g.validate();
  TheoryQuantities q;
  q.gamma = g.gamma();
  q.A = std_normal_cdf(-q.gamma);
  q.B = std_normal_pdf(-q.gamma);
  q.C = c_of_p(p);
  q.beta = beta_exact(g, p);
  q.beta_approx = q.gamma > 0.0 ? scaleood::beta_approx(q.gamma, p)
                                : std::numeric_limits<double>::quiet_NaN();
  return q;
}

/// Coefficients and discriminant of a1 C^2 + a2 C + a3 >= 0, and the
/// resulting admissible range of C.
struct DeltaResult {
  double a1 = 0.0;  // 1 / (gamma_id gamma_ood)
  double a2 = 0.0;  // -(1/gamma_id - 1/gamma_ood)
  double a3 = 0.0;  // (1 - A_id) / (1 - A_ood) - 1
  double delta = 0.0;
  bool all_valid = true;       // delta <= 0: every C > 0 qualifies
  double c_lower_bound = 0.0;  // delta > 0: C must be >= this (0 means 0+)

  double quadratic(double c) const noexcept { return (a1 * c + a2) * c + a3; }

  bool admits(double c) const noexcept {
    if (!(c > 0.0)) return false;
    return all_valid || c >= c_lower_bound;
  }
};

inline DeltaResult delta_discriminant(double gamma_id, double gamma_ood) {
  if (!(gamma_ood > 0.0) || !std::isfinite(gamma_id))
    throw InvalidArgument("both gammas must be positive");
  if (!(gamma_id > gamma_ood))
    throw InvalidArgument("requires gamma_id > gamma_ood");
  const double inv_id = 1.0 / gamma_id;
  const double inv_ood = 1.0 / gamma_ood;
  const double ratio = (1.0 - std_normal_cdf(-gamma_id)) / (1.0 - std_normal_cdf(-gamma_ood));

  DeltaResult r;
  r.a1 = inv_id * inv_ood;
  r.a2 = -(inv_id - inv_ood);
  r.a3 = ratio - 1.0;
  r.delta = (inv_id + inv_ood) * (inv_id + inv_ood) - 4.0 * inv_id * inv_ood * ratio;
  if (r.delta <= 0.0) {
    r.all_valid = true;
  } else {
    r.all_valid = false;
    const double upper_root = (-r.a2 + std::sqrt(r.delta)) / (2.0 * r.a1);
    r.c_lower_bound = std::max(upper_root, 0.0);
  }
  return r;
}

struct MonteCarloRatio {
  double mean = 0.0;        // mean of Q_p / Q over non-degenerate samples
  double std_error = 0.0;
  std::size_t n_used = 0;
  std::size_t n_degenerate = 0;
};

/// Per-sample Q_p / Q for rectified-Gaussian vectors of length `dim`, using
/// the shaping module's percentile and tie conventions. Sample i draws from
/// stream (seed, monte_carlo, i), so results are independent of `threads`.
inline MonteCarloRatio monte_carlo_qp_ratio(const GaussianParams& g, double p, std::size_t dim,
                                            std::size_t n_samples, std::uint64_t seed,
                                            std::size_t threads = 1) {
  g.validate();
  if (dim < 2) throw InvalidArgument("dimension must be at least 2");
  if (n_samples < 1) throw InvalidArgument("need at least one sample");
  if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("percentile must lie in [0, 1)");

  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> ratios(n_samples, kNaN);
  parallel_for(n_samples, threads, [&](std::size_t i) {
    CounterRng rng(seed, stream_id(StreamDomain::monte_carlo, i));
    std::vector<double> a(dim);
    for (auto& v : a) v = std::max(0.0, rng.normal(g.mu, g.sigma));
    try {
      const auto s = activation_sums(a, p);
      ratios[i] = s.sum_kept / s.sum_all;
    } catch (const DegenerateSample&) {
    }
  });

  MonteCarloRatio out;
  double sum = 0.0;
  for (double r : ratios) {
    if (std::isnan(r)) {
      ++out.n_degenerate;
      continue;
    }
    sum += r;
    ++out.n_used;
  }
  if (out.n_used == 0) return out;
  out.mean = sum / static_cast<double>(out.n_used);
  if (out.n_used > 1) {
    double ss = 0.0;
    for (double r : ratios)
      if (!std::isnan(r)) ss += (r - out.mean) * (r - out.mean);
    out.std_error = std::sqrt(ss / static_cast<double>(out.n_used - 1) /
                              static_cast<double>(out.n_used));
  }
  return out;
}

}  // namespace scaleood
