#include <cmath>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <gtest/gtest.h>

#include "scaleood/theory.hpp"

using namespace scaleood;

namespace {

const boost::math::normal_distribution<double> kStd(0.0, 1.0);

struct McMean {
  double mean, se;
};

McMean mc_rectified(const GaussianParams& g, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> d(g.mu, g.sigma);
  double s = 0, ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::max(0.0, d(gen));
    s += a;
    ss += a * a;
  }
  const double m = s / n;
  return {m, std::sqrt((ss / n - m * m) / n)};
}

McMean mc_truncated(const GaussianParams& g, double cut, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> d(g.mu, g.sigma);
  double s = 0, ss = 0;
  std::size_t kept = 0;
  while (kept < n) {
    const double x = d(gen);
    if (x <= cut) continue;
    s += x;
    ss += x * x;
    ++kept;
  }
  const double m = s / n;
  return {m, std::sqrt((ss / n - m * m) / n)};
}

}  // namespace

TEST(Normal, PdfCdfAgainstReference) {
  EXPECT_NEAR(std_normal_pdf(0), 0.398942, 1e-6);
  EXPECT_EQ(std_normal_cdf(0), 0.5);
  for (double x = -8; x <= 8; x += 0.0625) {
    EXPECT_NEAR(std_normal_pdf(x), boost::math::pdf(kStd, x), 1e-15);
    EXPECT_NEAR(std_normal_cdf(x), boost::math::cdf(kStd, x), 1e-15);
    const double sf = boost::math::cdf(boost::math::complement(kStd, x));
    EXPECT_NEAR(std_normal_sf(x), sf, 1e-12 * sf);
  }
}

TEST(ErfInv, InvertsErf) {
  EXPECT_EQ(erf_inv(0.0), 0.0);
  for (int i = -999; i <= 999; ++i) {
    const double y = i / 1000.0;
    const double x = erf_inv(y);
    EXPECT_NEAR(std::erf(x), y, 1e-10) << y;
    EXPECT_NEAR(x, boost::math::erf_inv(y), 1e-12 * (1 + std::fabs(x))) << y;
  }
  for (double y : {1 - 1e-6, 1 - 1e-10, -(1 - 1e-12)}) {
    EXPECT_NEAR(std::erf(erf_inv(y)), y, 1e-10);
    EXPECT_NEAR(erf_inv(y), boost::math::erf_inv(y), 1e-9);
  }
  EXPECT_THROW(erf_inv(1.0), InvalidArgument);
  EXPECT_THROW(erf_inv(-1.0), InvalidArgument);
}

TEST(NormalQuantile, MatchesReference) {
  for (double p : {1e-9, 0.001, 0.1, 0.5, 0.85, 0.95, 0.999999})
    EXPECT_NEAR(normal_quantile(p), boost::math::quantile(kStd, p), 1e-10);
}

TEST(RectifiedMoment, Examples) {
  EXPECT_NEAR(rectified_moment({0, 1}), 0.398942, 1e-6);
  EXPECT_NEAR(rectified_moment({10, 1}), 10.0, 1e-12);
  EXPECT_NEAR(rectified_moment({1, 0.5}), 1.004245, 1e-6);
  const double direct = 1.0 * (1 - boost::math::cdf(kStd, -2.0)) + 0.5 * boost::math::pdf(kStd, -2.0);
  EXPECT_NEAR(rectified_moment({1, 0.5}), direct, 1e-15);
}

TEST(RectifiedMoment, MonteCarlo) {
  for (GaussianParams g : {GaussianParams{0, 1}, GaussianParams{10, 1}, GaussianParams{1, 0.5},
                           GaussianParams{-0.5, 2}}) {
    const auto mc = mc_rectified(g, 400000, 1);
    EXPECT_NEAR(rectified_moment(g), mc.mean, 4 * mc.se + 1e-12) << g.mu << " " << g.sigma;
  }
  const auto mc = mc_rectified({0, 1}, 2000000, 2);
  EXPECT_NEAR(rectified_moment({0, 1}), mc.mean, 1e-3);
}

TEST(TruncatedMoment, Examples) {
  EXPECT_NEAR(truncated_moment({0, 1}, 0.0), 0.797885, 1e-6);
  const GaussianParams g{1.5, 0.7};
  const double s = g.mu - 8 * g.sigma;
  EXPECT_NEAR(truncated_moment(g, s),
              g.mu + g.sigma * std_normal_pdf(-8) / (1 - std_normal_cdf(-8)), 1e-6);
  EXPECT_NEAR(truncated_moment(g, s), g.mu, 1e-6);
  EXPECT_THROW(truncated_moment(g, g.mu + 9 * g.sigma), PrecisionError);
}

TEST(TruncatedMoment, MonteCarlo) {
  const GaussianParams g{1, 0.5};
  const double cut = g.mu + g.sigma * boost::math::quantile(kStd, 0.85);
  const auto mc = mc_truncated(g, cut, 300000, 3);
  EXPECT_NEAR(truncated_moment(g, cut), mc.mean, 1e-3);
  const auto mc0 = mc_truncated({0, 1}, 0.0, 300000, 4);
  EXPECT_NEAR(truncated_moment({0, 1}, 0.0), mc0.mean, 4 * mc0.se);
}

TEST(CofP, Examples) {
  EXPECT_NEAR(c_of_p(0.5), std::sqrt(2 / std::numbers::pi), 1e-12);
  EXPECT_NEAR(c_of_p(0.5), 0.797885, 1e-6);
  EXPECT_GT(c_of_p(0.85), c_of_p(0.5));
  EXPECT_LT(c_of_p(1e-12), 1e-10);
  EXPECT_THROW(c_of_p(1 - 1e-13), PrecisionError);
  EXPECT_THROW(c_of_p(0.0), InvalidArgument);
}

TEST(CofP, StrictlyIncreasingAndEqualsHazard) {
  double prev = 0;
  for (int i = 1; i < 999; ++i) {
    const double p = i / 1000.0;
    const double c = c_of_p(p);
    EXPECT_GT(c, prev);
    prev = c;
    const double z = boost::math::quantile(kStd, p);
    const double hazard = boost::math::pdf(kStd, z) / boost::math::cdf(boost::math::complement(kStd, z));
    EXPECT_NEAR(c, hazard, 1e-10 * (1 + hazard));
    // C does not depend on (mu, sigma).
    const GaussianParams g{0.3 + p, 0.2 + p / 2};
    const double m = (truncation_point(g, p) - g.mu) / g.sigma;
    EXPECT_NEAR(c, std_normal_pdf(m) / std_normal_sf(m), 1e-10 * (1 + c));
  }
}

TEST(Beta, Examples) {
  EXPECT_NEAR(beta_exact({20, 1}, 1e-9), 1.0, 1e-6);
  EXPECT_GT(beta_exact({1, 0.5}, 0.85), beta_exact({0.8, 0.6}, 0.85));
  const double c = c_of_p(0.85);
  EXPECT_DOUBLE_EQ(beta_approx(2, 0.85), 2 * (1 - boost::math::cdf(kStd, -2.0)) / (2 + c));
  EXPECT_LT(std::fabs(beta_exact({4, 1}, 0.85) - beta_approx(4, 0.85)),
            std::fabs(beta_exact({1, 1}, 0.85) - beta_approx(1, 0.85)));
  EXPECT_NEAR(beta_approx(1e6, 0.85), 1.0, 1e-5);
  EXPECT_THROW(beta_approx(0, 0.85), InvalidArgument);
}

TEST(Beta, MatchesFiniteDimensionalRatio) {
  // (1 - p) Q / Q_p from D = 2048 vectors, drawn independently of the library.
  const GaussianParams g{1, 0.5};
  const double p = 0.85;
  std::mt19937_64 gen(6);
  std::normal_distribution<double> d(g.mu, g.sigma);
  const std::size_t dim = 2048, n = 2000;
  double acc = 0;
  std::vector<double> a(dim), sorted(dim);
  const std::size_t k = static_cast<std::size_t>(std::ceil(p * dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : a) v = std::max(0.0, d(gen));
    sorted = a;
    std::sort(sorted.begin(), sorted.end());
    const double t = sorted[k - 1];
    double q = 0, qp = 0;
    for (double v : a) {
      q += v;
      if (v > t) qp += v;
    }
    acc += (1 - p) * q / qp;
  }
  EXPECT_NEAR(beta_exact(g, p), acc / n, 2e-3);
}

TEST(Delta, EqualityApproachAllValid) {
  const auto r = delta_discriminant(1.5 + 1e-9, 1.5);
  EXPECT_NEAR(r.a2, 0.0, 1e-8);
  EXPECT_NEAR(r.a3, 0.0, 1e-8);
  EXPECT_TRUE(r.all_valid);
  EXPECT_THROW(delta_discriminant(1.0, 1.0), InvalidArgument);
  EXPECT_THROW(delta_discriminant(1.0, 2.0), InvalidArgument);
  EXPECT_THROW(delta_discriminant(1.0, -1.0), InvalidArgument);
}

TEST(Delta, ExpandedFormAndRegion) {
  const double gi = 2.0, go = 1.33;
  const auto r = delta_discriminant(gi, go);
  EXPECT_NEAR(r.delta, r.a2 * r.a2 - 4 * r.a1 * r.a3, 1e-12);
  for (int i = 1; i <= 99; ++i) {
    const double p = i / 100.0;
    const double c = c_of_p(p);
    const bool holds = beta_approx(gi, p) >= beta_approx(go, p);
    EXPECT_EQ(r.admits(c), holds) << p;
    EXPECT_EQ(r.quadratic(c) >= 0, holds) << p;
  }
}

TEST(MonteCarloRatio, PZeroIsExactlyOne) {
  const auto r = monte_carlo_qp_ratio({1, 0.5}, 0.0, 64, 100, 1);
  EXPECT_EQ(r.mean, 1.0);
  EXPECT_EQ(r.std_error, 0.0);
  EXPECT_EQ(r.n_used, 100u);
}

TEST(MonteCarloRatio, IdBelowOodAndMatchesBeta) {
  const auto id = monte_carlo_qp_ratio({1, 0.5}, 0.85, 2048, 1000, 7, 2);
  const auto ood = monte_carlo_qp_ratio({0.8, 0.6}, 0.85, 2048, 1000, 8, 2);
  EXPECT_LT(id.mean, ood.mean);
  EXPECT_GT(ood.mean - id.mean, 5 * std::hypot(id.std_error, ood.std_error));
  EXPECT_NEAR(id.mean, (1 - 0.85) / beta_exact({1, 0.5}, 0.85), 2e-3);
  EXPECT_NEAR(ood.mean, (1 - 0.85) / beta_exact({0.8, 0.6}, 0.85), 2e-3);
}

TEST(MonteCarloRatio, ThreadIndependent) {
  const auto a = monte_carlo_qp_ratio({1, 0.5}, 0.7, 128, 50, 3, 1);
  const auto b = monte_carlo_qp_ratio({1, 0.5}, 0.7, 128, 50, 3, 4);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std_error, b.std_error);
}

TEST(MonteCarloRatio, IdRatioBelowOodOverRandomConfigurations) {
  std::mt19937_64 gen(61);
  std::uniform_real_distribution<double> mu(0.5, 4.0), sd(0.2, 1.0);
  int checked = 0;
  while (checked < 20) {
    GaussianParams a{mu(gen), sd(gen)}, b{mu(gen), sd(gen)};
    if (a.gamma() == b.gamma()) continue;
    if (a.gamma() < b.gamma()) std::swap(a, b);
    const auto id = monte_carlo_qp_ratio(a, 0.85, 2048, 200, 100 + checked);
    const auto ood = monte_carlo_qp_ratio(b, 0.85, 2048, 200, 200 + checked);
    EXPECT_LT(id.mean, ood.mean) << a.mu << "/" << a.sigma << " vs " << b.mu << "/" << b.sigma;
    ++checked;
  }
}

TEST(TheoryQuantities, Fields) {
  const auto q = theory_quantities({1, 0.5}, 0.85);
  EXPECT_EQ(q.gamma, 2.0);
  EXPECT_GT(q.A, 0.0);
  EXPECT_LT(q.A, 1.0);
  EXPECT_GT(q.B, 0.0);
  EXPECT_LE(q.B, std_normal_pdf(0));
  EXPECT_EQ(q.C, c_of_p(0.85));
  EXPECT_EQ(q.beta, beta_exact({1, 0.5}, 0.85));
}
