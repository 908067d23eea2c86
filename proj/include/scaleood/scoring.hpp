#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scaleood/core.hpp"

namespace scaleood {

enum class ScoreKind { ebo, msp, mls, tempscale_msp };

inline std::string_view to_string(ScoreKind s) {
  switch (s) {
    case ScoreKind::ebo: return "ebo";
    case ScoreKind::msp: return "msp";
    case ScoreKind::mls: return "mls";
    case ScoreKind::tempscale_msp: return "tempscale_msp";
  }
  return "?";
}

inline ScoreKind parse_score_kind(std::string_view s) {
  if (s == "ebo" || s == "energy") return ScoreKind::ebo;
  if (s == "msp") return ScoreKind::msp;
  if (s == "mls") return ScoreKind::mls;
  if (s == "tempscale_msp" || s == "tempscale") return ScoreKind::tempscale_msp;
  throw InvalidArgument("unknown score '" + std::string(s) + "'");
}

struct ScoringConfig {
  ScoreKind score = ScoreKind::ebo;
  double temperature = 1.0;

  void validate() const {
    if (!(std::isfinite(temperature) && temperature > 0.0))
      throw InvalidArgument("temperature must be finite and positive");
  }
};

namespace detail {
inline void require_logits(std::span<const double> z) {
  if (z.empty()) throw InvalidArgument("empty logit vector");
}
inline void require_temperature(double t) {
  if (!(std::isfinite(t) && t > 0.0)) throw InvalidArgument("temperature must be positive");
}
}  // namespace detail

/// T * log sum_k exp(z_k / T), max-shifted.
inline double energy_score(std::span<const double> z, double temperature = 1.0) {
  detail::require_logits(z);
  detail::require_temperature(temperature);
  const double m = *std::max_element(z.begin(), z.end()) / temperature;
  double acc = 0.0;
  for (double v : z) acc += std::exp(v / temperature - m);
  return temperature * (m + std::log(acc));
}

inline double msp_score(std::span<const double> z) {
  detail::require_logits(z);
  const double m = *std::max_element(z.begin(), z.end());
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - m);
  return 1.0 / acc;
}

inline double mls_score(std::span<const double> z) {
  detail::require_logits(z);
  return *std::max_element(z.begin(), z.end());
}

inline double tempscale_msp(std::span<const double> z, double temperature) {
  detail::require_logits(z);
  detail::require_temperature(temperature);
  std::vector<double> scaled(z.size());
  std::transform(z.begin(), z.end(), scaled.begin(),
                 [temperature](double v) { return v / temperature; });
  return msp_score(scaled);
}

inline double score_logits(std::span<const double> z, const ScoringConfig& cfg) {
  switch (cfg.score) {
    case ScoreKind::ebo: return energy_score(z, cfg.temperature);
    case ScoreKind::msp: return msp_score(z);
    case ScoreKind::mls: return mls_score(z);
    case ScoreKind::tempscale_msp: return tempscale_msp(z, cfg.temperature);
  }
  throw InvalidArgument("unhandled score kind");
}

enum class Decision { id, ood };

// Scores equal to the threshold are OOD.
inline Decision ood_indicator(double score, double threshold) {
  return score > threshold ? Decision::id : Decision::ood;
}

}  // namespace scaleood
