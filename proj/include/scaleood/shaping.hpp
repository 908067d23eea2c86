#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scaleood/types.hpp"

namespace scaleood {

enum class ShapingMethod { identity, scale, ash_s, prune, react };

inline std::string_view to_string(ShapingMethod m) {
  switch (m) {
    case ShapingMethod::identity: return "identity";
    case ShapingMethod::scale: return "scale";
    case ShapingMethod::ash_s: return "ash_s";
    case ShapingMethod::prune: return "prune";
    case ShapingMethod::react: return "react";
  }
  return "?";
}

inline ShapingMethod parse_shaping_method(std::string_view s) {
  if (s == "identity" || s == "none") return ShapingMethod::identity;
  if (s == "scale") return ShapingMethod::scale;
  if (s == "ash_s" || s == "ash-s" || s == "ash") return ShapingMethod::ash_s;
  if (s == "prune") return ShapingMethod::prune;
  if (s == "react") return ShapingMethod::react;
  throw InvalidArgument("unknown shaping method '" + std::string(s) + "'");
}

struct ShapingConfig {
  ShapingMethod method = ShapingMethod::identity;
  double percentile = 0.85;
  double clip_threshold = 1.0;

  void validate() const {
    if (!(percentile >= 0.0 && percentile < 1.0))
      throw InvalidArgument("percentile must lie in [0, 1), got " + std::to_string(percentile));
    if (method == ShapingMethod::react && !(std::isfinite(clip_threshold) && clip_threshold > 0.0))
      throw InvalidArgument("react clip threshold must be finite and positive");
  }

  bool uses_factor() const noexcept {
    return method == ShapingMethod::scale || method == ShapingMethod::ash_s;
  }
};

struct ScaleResult {
  double threshold = 0.0;  // P_p(a); -inf when nothing is pruned
  double sum_all = 0.0;    // Q
  double sum_kept = 0.0;   // Q_p
  double factor = 1.0;     // r = Q / Q_p
};

/// 1-based nearest rank ceil(p * D), with a relative guard so that products
/// such as 0.7 * 10 = 7.000000000000001 land on the intended rank.
inline std::size_t percentile_rank(double p, std::size_t d) {
  const double x = p * static_cast<double>(d);
  const double guarded = x - 1e-9 * std::max(1.0, x);
  const auto k = static_cast<std::size_t>(std::max(0.0, std::ceil(guarded)));
  return std::min(k, d);
}

/// Nearest-rank p-th percentile of `a`. Returns -inf at rank 0 (p = 0), which
/// prunes nothing under the "a_j <= threshold" rule.
inline double percentile_threshold(std::span<const double> a, double p) {
  if (a.empty()) throw InvalidArgument("percentile of an empty vector");
  if (!(p >= 0.0 && p < 1.0))
    throw InvalidArgument("percentile must lie in [0, 1), got " + std::to_string(p));
  const std::size_t k = percentile_rank(p, a.size());
  if (k == 0) return -std::numeric_limits<double>::infinity();
  std::vector<double> scratch(a.begin(), a.end());
  auto nth = scratch.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(scratch.begin(), nth, scratch.end());
  return *nth;
}

/// Q, Q_p and r = Q / Q_p. Throws DegenerateSample when Q_p is not positive
/// or exp(r) overflows.
inline ScaleResult activation_sums(std::span<const double> a, double p) {
  ScaleResult res;
  res.threshold = percentile_threshold(a, p);
  for (double v : a) {
    res.sum_all += v;
    if (v > res.threshold) res.sum_kept += v;
  }
  if (!(res.sum_kept > 0.0)) throw DegenerateSample("kept activation sum Q_p is zero");
  res.factor = res.sum_all / res.sum_kept;
  if (!std::isfinite(std::exp(res.factor)))
    throw DegenerateSample("exp(r) overflows for r = " + std::to_string(res.factor));
  return res;
}

/// SCALE: every activation multiplied by exp(r).
inline std::vector<double> shape_scale(std::span<const double> a, double p) {
  const double s = std::exp(activation_sums(a, p).factor);
  std::vector<double> out(a.size());
  std::transform(a.begin(), a.end(), out.begin(), [s](double v) { return v * s; });
  return out;
}

/// ASH-S: entries <= P_p(a) zeroed, the rest multiplied by exp(r).
inline std::vector<double> shape_ash_s(std::span<const double> a, double p) {
  const auto sums = activation_sums(a, p);
  const double s = std::exp(sums.factor);
  std::vector<double> out(a.size());
  std::transform(a.begin(), a.end(), out.begin(),
                 [&](double v) { return v > sums.threshold ? v * s : 0.0; });
  return out;
}

/// Pruning only: entries <= P_p(a) zeroed, the rest unchanged.
inline std::vector<double> shape_prune(std::span<const double> a, double p) {
  const double t = percentile_threshold(a, p);
  std::vector<double> out(a.size());
  std::transform(a.begin(), a.end(), out.begin(), [t](double v) { return v > t ? v : 0.0; });
  return out;
}

/// ReAct: activations clipped from above at c.
inline std::vector<double> shape_react(std::span<const double> a, double c) {
  if (!(std::isfinite(c) && c > 0.0)) throw InvalidArgument("clip threshold must be positive");
  std::vector<double> out(a.size());
  std::transform(a.begin(), a.end(), out.begin(), [c](double v) { return std::min(v, c); });
  return out;
}

inline std::vector<double> shape(std::span<const double> a, const ShapingConfig& cfg) {
  switch (cfg.method) {
    case ShapingMethod::identity: return {a.begin(), a.end()};
    case ShapingMethod::scale: return shape_scale(a, cfg.percentile);
    case ShapingMethod::ash_s: return shape_ash_s(a, cfg.percentile);
    case ShapingMethod::prune: return shape_prune(a, cfg.percentile);
    case ShapingMethod::react: return shape_react(a, cfg.clip_threshold);
  }
  throw InvalidArgument("unhandled shaping method");
}

/// z = W a + b.
inline std::vector<double> apply_head(std::span<const double> a, const LinearHead& head) {
  if (a.size() != head.dim())
    throw DimensionMismatch("activation length " + std::to_string(a.size()) +
                            " does not match head dimension " + std::to_string(head.dim()));
  std::vector<double> z(head.n_classes());
  for (std::size_t k = 0; k < z.size(); ++k) {
    auto w = head.weights.row(k);
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) acc += w[j] * a[j];
    z[k] = acc + head.bias[k];
  }
  return z;
}

/// ReAct's clip threshold: the p-th nearest-rank percentile of all activations
/// of a (validation) set pooled together.
inline double pooled_percentile(const Matrix& activations, double p) {
  return percentile_threshold(activations.values(), p);
}

}  // namespace scaleood
