#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include "scaleood/pipeline.hpp"
#include "scaleood/theory.hpp"

namespace scaleood {

// ---------------------------------------------------------------------------
// Separation metrics
// ---------------------------------------------------------------------------

/// P(id > ood) + 0.5 P(id == ood) over all pairs.
///
/// Counted on a merged sort in units of half a pair, so the numerator is an
/// exact integer and the result equals the brute-force pair count exactly.
inline double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty())
    throw InvalidArgument("AUROC needs non-empty score lists");
  struct Item {
    double v;
    bool id;
  };
  std::vector<Item> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double v : id_scores) all.push_back({v, true});
  for (double v : ood_scores) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.v < b.v; });

  std::uint64_t half_pairs = 0;
  std::uint64_t ood_below = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::uint64_t n_id = 0, n_ood = 0;
    while (j < all.size() && all[j].v == all[i].v) {
      (all[j].id ? n_id : n_ood) += 1;
      ++j;
    }
    half_pairs += 2 * n_id * ood_below + n_id * n_ood;
    ood_below += n_ood;
    i = j;
  }
  return static_cast<double>(half_pairs) /
         (2.0 * static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size()));
}

/// Number of ID samples that must score above the threshold: ceil(tpr * n).
inline std::size_t required_true_positives(double tpr, std::size_t n) {
  const double x = tpr * static_cast<double>(n);
  return std::min<std::size_t>(
      n, static_cast<std::size_t>(std::max(0.0, std::ceil(x - 1e-9 * std::max(1.0, x)))));
}

/// FPR at the operating point that still accepts ceil(tpr * n_id) ID samples.
///
/// With ID scores sorted descending s_1 >= s_2 >= ..., the threshold sits just
/// below s_m (m = ceil(tpr * n_id)): the largest threshold whose ID acceptance
/// rate reaches the target. Returned value is the fraction of OOD scores >= s_m.
inline double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                         double tpr_target = 0.95) {
  if (id_scores.empty() || ood_scores.empty())
    throw InvalidArgument("FPR needs non-empty score lists");
  if (!(tpr_target > 0.0 && tpr_target <= 1.0))
    throw InvalidArgument("TPR target must lie in (0, 1]");
  const std::size_t m = std::max<std::size_t>(1, required_true_positives(tpr_target, id_scores.size()));
  std::vector<double> id(id_scores.begin(), id_scores.end());
  auto nth = id.begin() + static_cast<std::ptrdiff_t>(m - 1);
  std::nth_element(id.begin(), nth, id.end(), std::greater<>());
  const double cut = *nth;
  const auto fp = std::count_if(ood_scores.begin(), ood_scores.end(),
                                [cut](double v) { return v >= cut; });
  return static_cast<double>(fp) / static_cast<double>(ood_scores.size());
}

// ---------------------------------------------------------------------------
// Classification accuracy
// ---------------------------------------------------------------------------

struct AccuracyResult {
  double accuracy = 0.0;  // over non-degenerate samples
  std::size_t n_correct = 0;
  std::size_t n_evaluated = 0;
  std::size_t n_degenerate = 0;
};

inline AccuracyResult id_accuracy_detail(const FeatureSet& fs, const LinearHead& head,
                                         const ShapingConfig& shaping, std::size_t threads = 1) {
  if (!fs.labels) throw InvalidArgument("set '" + fs.tag + "' has no labels");
  fs.validate_labels(head.n_classes());
  MethodSpec m{shaping, {ScoreKind::mls, 1.0}};
  const auto scored = score_features(fs, head, m, threads);
  AccuracyResult res;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored.degenerate[i]) {
      ++res.n_degenerate;
      continue;
    }
    ++res.n_evaluated;
    res.n_correct += scored.predictions[i] == (*fs.labels)[i];
  }
  res.accuracy = res.n_evaluated ? static_cast<double>(res.n_correct) /
                                       static_cast<double>(res.n_evaluated)
                                 : 0.0;
  return res;
}

inline double id_accuracy(const FeatureSet& fs, const LinearHead& head,
                          const ShapingConfig& shaping, std::size_t threads = 1) {
  return id_accuracy_detail(fs, head, shaping, threads).accuracy;
}

// ---------------------------------------------------------------------------
// Distributional diagnostics
// ---------------------------------------------------------------------------

struct ActivationStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // unbiased
  std::vector<std::optional<double>> ratio;  // mean / stddev, absent when stddev == 0

  std::size_t n_flagged() const {
    return static_cast<std::size_t>(
        std::count_if(ratio.begin(), ratio.end(), [](const auto& r) { return !r; }));
  }
};

struct StatsAggregate {
  double mean_of_mean = 0.0;
  double mean_of_stddev = 0.0;
  double mean_of_variance = 0.0;
  double mean_of_ratio = 0.0;
  double ratio_std_error = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_flagged = 0;
};

inline void sample_mean_stddev(std::span<const double> x, double& mean, double& sd) {
  double s = 0.0;
  for (double v : x) s += v;
  mean = s / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  sd = std::sqrt(ss / static_cast<double>(x.size() - 1));
}

inline ActivationStats activation_stats(const PreActSet& ps) {
  if (ps.dim() < 2) throw InvalidArgument("activation statistics need D >= 2");
  ActivationStats st;
  for (std::size_t i = 0; i < ps.n_samples(); ++i) {
    double m = 0.0, sd = 0.0;
    sample_mean_stddev(ps.data.row(i), m, sd);
    st.mean.push_back(m);
    st.stddev.push_back(sd);
    st.ratio.push_back(sd > 0.0 ? std::optional<double>(m / sd) : std::nullopt);
  }
  return st;
}

inline StatsAggregate aggregate(const ActivationStats& st) {
  StatsAggregate ag;
  ag.n_samples = st.mean.size();
  if (ag.n_samples == 0) return ag;
  std::vector<double> ratios;
  for (std::size_t i = 0; i < ag.n_samples; ++i) {
    ag.mean_of_mean += st.mean[i];
    ag.mean_of_stddev += st.stddev[i];
    ag.mean_of_variance += st.stddev[i] * st.stddev[i];
    if (st.ratio[i]) ratios.push_back(*st.ratio[i]);
  }
  const auto n = static_cast<double>(ag.n_samples);
  ag.mean_of_mean /= n;
  ag.mean_of_stddev /= n;
  ag.mean_of_variance /= n;
  ag.n_flagged = ag.n_samples - ratios.size();
  if (!ratios.empty()) {
    double m = 0.0, sd = 0.0;
    if (ratios.size() > 1) {
      sample_mean_stddev(ratios, m, sd);
      ag.ratio_std_error = sd / std::sqrt(static_cast<double>(ratios.size()));
    } else {
      m = ratios.front();
    }
    ag.mean_of_ratio = m;
  }
  return ag;
}

inline constexpr std::size_t kMinChiSquareDim = 50;
inline constexpr double kMinExpectedPerBin = 5.0;

/// Pearson goodness-of-fit p-value against N(mu_hat, sigma_hat^2), with mu_hat
/// and sigma_hat the maximum-likelihood fit, equal-probability bins under the
/// fitted law, and n_bins - 3 degrees of freedom.
inline double chi_square_gaussian_p(std::span<const double> sample, std::size_t n_bins = 10) {
  if (sample.size() < kMinChiSquareDim)
    throw InvalidArgument("chi-square test needs at least " + std::to_string(kMinChiSquareDim) +
                          " values, got " + std::to_string(sample.size()));
  if (n_bins < 4) throw InvalidArgument("chi-square test needs at least 4 bins");
  const double n = static_cast<double>(sample.size());
  const double expected = n / static_cast<double>(n_bins);
  if (expected < kMinExpectedPerBin) {
    const auto suggestion = static_cast<std::size_t>(n / kMinExpectedPerBin);
    throw InvalidArgument("expected count per bin " + std::to_string(expected) +
                          " is below 5; use at most " + std::to_string(suggestion) + " bins");
  }

  double mu = 0.0;
  for (double v : sample) mu += v;
  mu /= n;
  double ss = 0.0;
  for (double v : sample) ss += (v - mu) * (v - mu);
  const double sigma = std::sqrt(ss / n);
  if (!(sigma > 0.0)) return 0.0;  // a point mass is not Gaussian

  std::vector<double> edges(n_bins - 1);
  for (std::size_t i = 1; i < n_bins; ++i)
    edges[i - 1] = mu + sigma * normal_quantile(static_cast<double>(i) / static_cast<double>(n_bins));
  std::vector<std::size_t> observed(n_bins, 0);
  for (double v : sample) {
    const auto bin = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) -
                                              edges.begin());
    ++observed[bin];
  }
  double chi2 = 0.0;
  for (auto o : observed) {
    const double d = static_cast<double>(o) - expected;
    chi2 += d * d / expected;
  }
  const boost::math::chi_squared_distribution<double> dist(static_cast<double>(n_bins - 3));
  return boost::math::cdf(boost::math::complement(dist, chi2));
}

inline double mean_chi_square_p(const PreActSet& ps, std::size_t n_bins = 10) {
  if (ps.n_samples() == 0) throw InvalidArgument("empty pre-activation set");
  double acc = 0.0;
  for (std::size_t i = 0; i < ps.n_samples(); ++i) acc += chi_square_gaussian_p(ps.data.row(i), n_bins);
  return acc / static_cast<double>(ps.n_samples());
}

// ---------------------------------------------------------------------------
// Scale factors and the pruning / scaling quantities
// ---------------------------------------------------------------------------

struct Histogram {
  std::vector<double> edges;  // n_bins + 1, last bin closed on the right
  std::vector<std::size_t> counts;
  std::size_t underflow = 0;
  std::size_t overflow = 0;
  std::size_t n_degenerate = 0;
  std::vector<std::size_t> degenerate_indices;

  std::size_t total() const {
    std::size_t t = underflow + overflow;
    for (auto c : counts) t += c;
    return t;
  }
};

/// Per-sample r = Q / Q_p.
inline std::vector<std::optional<double>> scale_factors(const FeatureSet& fs, double p) {
  std::vector<std::optional<double>> out(fs.n_samples());
  for (std::size_t i = 0; i < fs.n_samples(); ++i) {
    try {
      out[i] = activation_sums(fs.data.row(i), p).factor;
    } catch (const DegenerateSample&) {
    }
  }
  return out;
}

inline Histogram scale_histogram(const FeatureSet& fs, double p, std::size_t n_bins, double lo,
                                 double hi) {
  if (n_bins == 0 || !(hi > lo)) throw InvalidArgument("histogram needs n_bins > 0 and hi > lo");
  Histogram h;
  h.counts.assign(n_bins, 0);
  for (std::size_t b = 0; b <= n_bins; ++b)
    h.edges.push_back(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(n_bins));
  const auto rs = scale_factors(fs, p);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    if (!rs[i]) {
      ++h.n_degenerate;
      h.degenerate_indices.push_back(i);
      continue;
    }
    const double r = *rs[i];
    if (r < lo) {
      ++h.underflow;
    } else if (r > hi) {
      ++h.overflow;
    } else {
      auto b = static_cast<std::size_t>((r - lo) / (hi - lo) * static_cast<double>(n_bins));
      h.counts[std::min(b, n_bins - 1)]++;
    }
  }
  return h;
}

/// (Q - Q_p) / Q.
inline double pruning_decrease(std::span<const double> a, double p) {
  const double t = percentile_threshold(a, p);
  double q = 0.0, qp = 0.0;
  for (double v : a) {
    q += v;
    if (v > t) qp += v;
  }
  if (!(q > 0.0)) throw InvalidArgument("pruning decrease needs a positive activation sum");
  return (q - qp) / q;
}

/// r - 1.
inline double scaling_increase(std::span<const double> a, double p) {
  return activation_sums(a, p).factor - 1.0;
}

// ---------------------------------------------------------------------------
// Evaluation reports
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string method;
  std::string dataset;
  Split split = Split::ood_far;
  std::optional<double> percentile;
  double fpr_at_95 = 0.0;  // percent
  double auroc = 0.0;      // percent
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  std::size_t n_degenerate_id = 0;
  std::size_t n_degenerate_ood = 0;
  std::optional<double> id_accuracy;  // percent
};

struct EvalReport {
  std::vector<EvalRow> rows;
  nlohmann::json config = nlohmann::json::object();
};

inline EvalRow evaluate_pair(const ScoredSet& id, const ScoredSet& ood, const std::string& method) {
  const auto id_scores = id.valid_scores();
  const auto ood_scores = ood.valid_scores();
  if (id_scores.empty() || ood_scores.empty())
    throw DegenerateSample("every sample of '" + (id_scores.empty() ? id.tag : ood.tag) +
                           "' is degenerate");
  EvalRow row;
  row.method = method;
  row.dataset = ood.tag;
  row.split = ood.split;
  row.fpr_at_95 = 100.0 * fpr_at_tpr(id_scores, ood_scores, 0.95);
  row.auroc = 100.0 * auroc(id_scores, ood_scores);
  row.n_id = id_scores.size();
  row.n_ood = ood_scores.size();
  row.n_degenerate_id = id.n_degenerate();
  row.n_degenerate_ood = ood.n_degenerate();
  return row;
}

/// One row per OOD set for a single method.
inline std::vector<EvalRow> evaluate_method(const FeatureSet& id_set,
                                            const std::vector<const FeatureSet*>& ood_sets,
                                            const LinearHead& head, const MethodSpec& method,
                                            std::size_t threads = 1) {
  const auto id_scored = score_features(id_set, head, method, threads);
  std::optional<double> acc;
  if (id_set.labels) acc = 100.0 * id_accuracy(id_set, head, method.shaping, threads);
  std::vector<EvalRow> rows;
  for (const auto* ood : ood_sets) {
    auto row = evaluate_pair(id_scored, score_features(*ood, head, method, threads), method.name());
    if (method.shaping.method != ShapingMethod::identity &&
        method.shaping.method != ShapingMethod::react)
      row.percentile = method.shaping.percentile;
    row.id_accuracy = acc;
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Group averages ("Near-OOD" / "Far-OOD") over rows sharing method and percentile.
inline std::vector<EvalRow> group_averages(const std::vector<EvalRow>& rows) {
  std::vector<EvalRow> out;
  for (Split g : {Split::ood_near, Split::ood_far}) {
    std::map<std::pair<std::string, double>, std::vector<const EvalRow*>> groups;
    std::vector<std::pair<std::string, double>> order;
    for (const auto& r : rows) {
      if (r.split != g) continue;
      auto key = std::make_pair(r.method, r.percentile.value_or(-1.0));
      if (!groups.count(key)) order.push_back(key);
      groups[key].push_back(&r);
    }
    for (const auto& key : order) {
      const auto& members = groups[key];
      EvalRow avg = *members.front();
      avg.dataset = g == Split::ood_near ? "Near-OOD" : "Far-OOD";
      avg.fpr_at_95 = avg.auroc = 0.0;
      avg.n_ood = avg.n_degenerate_ood = 0;
      for (const auto* m : members) {
        avg.fpr_at_95 += m->fpr_at_95 / static_cast<double>(members.size());
        avg.auroc += m->auroc / static_cast<double>(members.size());
        avg.n_ood += m->n_ood;
        avg.n_degenerate_ood += m->n_degenerate_ood;
      }
      out.push_back(std::move(avg));
    }
  }
  return out;
}

struct SweepRow {
  double percentile = 0.0;
  std::string group;  // OOD dataset tag or group name
  double fpr_at_95 = 0.0;
  double auroc = 0.0;
  std::size_t n_degenerate = 0;
};

/// Full pipeline at every p of the grid, rows in grid order; per dataset rows
/// are followed by Near-OOD / Far-OOD averages when those groups exist.
inline std::vector<SweepRow> sweep_percentile(const FeatureSet& id_set,
                                              const std::vector<const FeatureSet*>& ood_sets,
                                              const LinearHead& head, MethodSpec method,
                                              std::span<const double> p_grid,
                                              std::size_t threads = 1) {
  std::vector<SweepRow> out;
  for (double p : p_grid) {
    if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("percentile grid must lie in [0, 1)");
    method.shaping.percentile = p;
    auto rows = evaluate_method(id_set, ood_sets, head, method, threads);
    auto avgs = group_averages(rows);
    rows.insert(rows.end(), avgs.begin(), avgs.end());
    for (const auto& r : rows)
      out.push_back({p, r.dataset, r.fpr_at_95, r.auroc, r.n_degenerate_id + r.n_degenerate_ood});
  }
  return out;
}

namespace detail {
inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}
}  // namespace detail

inline nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["config"] = report.config;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row = {{"method", r.method},
                          {"dataset", r.dataset},
                          {"split", std::string(to_string(r.split))},
                          {"fpr_at_95", std::stod(detail::pct(r.fpr_at_95))},
                          {"auroc", std::stod(detail::pct(r.auroc))},
                          {"n_id", r.n_id},
                          {"n_ood", r.n_ood},
                          {"n_degenerate_id", r.n_degenerate_id},
                          {"n_degenerate_ood", r.n_degenerate_ood}};
    row["percentile"] = r.percentile ? nlohmann::json(*r.percentile) : nlohmann::json(nullptr);
    row["id_accuracy"] =
        r.id_accuracy ? nlohmann::json(std::stod(detail::pct(*r.id_accuracy))) : nlohmann::json(nullptr);
    j["rows"].push_back(std::move(row));
  }
  return j;
}

inline std::string to_csv(const EvalReport& report) {
  bool any_acc = false;
  for (const auto& r : report.rows) any_acc |= r.id_accuracy.has_value();
  std::string out = "method,dataset,split,percentile,fpr_at_95,auroc,n_id,n_ood,n_degenerate";
  if (any_acc) out += ",id_acc";
  out += '\n';
  for (const auto& r : report.rows) {
    out += r.method + ',' + r.dataset + ',' + std::string(to_string(r.split)) + ',';
    if (r.percentile) out += format_double(*r.percentile);
    out += ',' + detail::pct(r.fpr_at_95) + ',' + detail::pct(r.auroc) + ',' +
           std::to_string(r.n_id) + ',' + std::to_string(r.n_ood) + ',' +
           std::to_string(r.n_degenerate_id + r.n_degenerate_ood);
    if (any_acc) out += ',' + (r.id_accuracy ? detail::pct(*r.id_accuracy) : std::string());
    out += '\n';
  }
  return out;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::string out = "percentile,dataset,fpr_at_95,auroc,n_degenerate\n";
  for (const auto& r : rows)
    out += format_double(r.percentile) + ',' + r.group + ',' + detail::pct(r.fpr_at_95) + ',' +
           detail::pct(r.auroc) + ',' + std::to_string(r.n_degenerate) + '\n';
  return out;
}

inline nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"percentile", r.percentile},
                 {"dataset", r.group},
                 {"fpr_at_95", std::stod(detail::pct(r.fpr_at_95))},
                 {"auroc", std::stod(detail::pct(r.auroc))},
                 {"n_degenerate", r.n_degenerate}});
  return j;
}

}  // namespace scaleood
