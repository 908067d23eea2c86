#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "scaleood/scoring.hpp"
#include "scaleood/shaping.hpp"
#include "scaleood/types.hpp"

namespace scaleood {

/// A post-hoc method: shaping followed by head and score, e.g. "scale+ebo".
struct MethodSpec {
  ShapingConfig shaping;
  ScoringConfig scoring;

  std::string name() const {
    if (shaping.method == ShapingMethod::identity) return std::string(to_string(scoring.score));
    return std::string(to_string(shaping.method)) + "+" + std::string(to_string(scoring.score));
  }
};

/// "<score>" or "<shaping>+<score>"; percentile, clip and temperature are
/// filled in from the defaults given.
inline MethodSpec parse_method(std::string_view text, const ShapingConfig& shaping_defaults = {},
                               const ScoringConfig& scoring_defaults = {}) {
  MethodSpec m{shaping_defaults, scoring_defaults};
  const auto plus = text.find('+');
  if (plus == std::string_view::npos) {
    try {
      m.scoring.score = parse_score_kind(text);
      m.shaping.method = ShapingMethod::identity;
    } catch (const InvalidArgument&) {
      // a bare shaping name implies the energy score
      m.shaping.method = parse_shaping_method(text);
      m.scoring.score = ScoreKind::ebo;
    }
  } else {
    m.shaping.method = parse_shaping_method(text.substr(0, plus));
    m.scoring.score = parse_score_kind(text.substr(plus + 1));
  }
  return m;
}

/// Per-sample pipeline output; degenerate rows carry NaN scores.
struct ScoredSet {
  std::string tag;
  Split split = Split::id;
  std::vector<double> scores;
  std::vector<double> factors;  // r = Q/Q_p, NaN where not computed
  std::vector<char> degenerate;
  std::vector<std::size_t> predictions;

  std::size_t size() const noexcept { return scores.size(); }

  std::size_t n_degenerate() const {
    std::size_t n = 0;
    for (char d : degenerate) n += d != 0;
    return n;
  }

  std::vector<double> valid_scores() const {
    std::vector<double> out;
    out.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (!degenerate[i]) out.push_back(scores[i]);
    return out;
  }
};

struct SampleResult {
  double score = std::numeric_limits<double>::quiet_NaN();
  double factor = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
  std::size_t prediction = 0;
};

inline SampleResult score_sample(std::span<const double> a, const LinearHead& head,
                                 const MethodSpec& method) {
  SampleResult res;
  const auto& sh = method.shaping;
  if (sh.method == ShapingMethod::scale || sh.method == ShapingMethod::ash_s ||
      sh.method == ShapingMethod::prune) {
    try {
      res.factor = activation_sums(a, sh.percentile).factor;
    } catch (const DegenerateSample&) {
      if (sh.uses_factor()) {
        res.degenerate = true;
        return res;
      }
    }
  }
  const auto shaped = shape(a, sh);
  const auto z = apply_head(shaped, head);
  res.score = score_logits(z, method.scoring);
  res.prediction = argmax(z);
  return res;
}

inline ScoredSet score_features(const FeatureSet& fs, const LinearHead& head,
                                const MethodSpec& method, std::size_t threads = 1) {
  method.shaping.validate();
  method.scoring.validate();
  if (fs.dim() != head.dim())
    throw DimensionMismatch("set '" + fs.tag + "' has dim " + std::to_string(fs.dim()) +
                            " but the head expects " + std::to_string(head.dim()));
  const std::size_t n = fs.n_samples();
  ScoredSet out;
  out.tag = fs.tag;
  out.split = fs.split;
  out.scores.assign(n, std::numeric_limits<double>::quiet_NaN());
  out.factors.assign(n, std::numeric_limits<double>::quiet_NaN());
  out.degenerate.assign(n, 0);
  out.predictions.assign(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto r = score_sample(fs.data.row(i), head, method);
    out.scores[i] = r.score;
    out.factors[i] = r.factor;
    out.degenerate[i] = r.degenerate;
    out.predictions[i] = r.prediction;
  });
  return out;
}

}  // namespace scaleood
