#include <cmath>

#include <gtest/gtest.h>

#include "scaleood/metrics.hpp"
#include "scaleood/synth.hpp"

using namespace scaleood;

TEST(RectifiedFeatures, DeterministicNonNegativeAndThreadFree) {
  SynthSpec spec;
  spec.n_samples = 20;
  spec.dim = 300;
  spec.seed = 4;
  const auto a = gen_rectified_features(spec, 1);
  const auto b = gen_rectified_features(spec, 3);
  EXPECT_EQ(a.features.data, b.features.data);
  EXPECT_EQ(a.preacts.data, b.preacts.data);
  EXPECT_NO_THROW(a.features.validate());
  for (std::size_t i = 0; i < a.preacts.data.values().size(); ++i)
    EXPECT_EQ(a.features.data.values()[i], std::max(0.0, a.preacts.data.values()[i]));
  spec.seed = 5;
  EXPECT_NE(gen_rectified_features(spec).features.data, a.features.data);
}

TEST(RectifiedFeatures, SmallSigmaConcentrates) {
  SynthSpec spec;
  spec.distribution = {1.0, 0.01};
  spec.n_samples = 10;
  spec.seed = 1;
  const auto fs = gen_rectified_features(spec).features;
  const double tol = 3 * spec.distribution.sigma / std::sqrt(static_cast<double>(spec.dim));
  for (std::size_t i = 0; i < fs.n_samples(); ++i) {
    double m = 0;
    for (double v : fs.data.row(i)) m += v;
    EXPECT_NEAR(m / static_cast<double>(spec.dim), 1.0, tol);
  }
}

TEST(RectifiedFeatures, RatioNearMuOverSigma) {
  for (GaussianParams g : {GaussianParams{1.0, 0.5}, GaussianParams{0.8, 0.6}}) {
    SynthSpec spec;
    spec.distribution = g;
    spec.n_samples = 40;
    spec.seed = 2;
    const auto ag = aggregate(activation_stats(gen_rectified_features(spec).preacts));
    EXPECT_NEAR(ag.mean_of_ratio, g.gamma(), 0.05 * g.gamma());
  }
}

TEST(RectifiedFeatures, IdRatioAboveOodByTenStandardErrors) {
  SynthSpec id, ood;
  id.n_samples = ood.n_samples = 500;
  id.seed = 10;
  ood.seed = 11;
  ood.distribution = {0.8, 0.6};
  const auto a = aggregate(activation_stats(gen_rectified_features(id).preacts));
  const auto b = aggregate(activation_stats(gen_rectified_features(ood).preacts));
  EXPECT_GT(a.mean_of_ratio - b.mean_of_ratio,
            10 * std::hypot(a.ratio_std_error, b.ratio_std_error));
}

TEST(RectifiedFeatures, RejectsEmptyShape) {
  SynthSpec spec;
  spec.n_samples = 0;
  EXPECT_THROW(gen_rectified_features(spec), InvalidArgument);
  spec.n_samples = 1;
  spec.distribution.sigma = 0;
  EXPECT_THROW(gen_rectified_features(spec), InvalidArgument);
}

TEST(LinearHeadGen, ZeroBiasSeedsAndVariance) {
  const auto h = gen_linear_head(20, 1024, 1, 2.0);
  for (double b : h.bias) EXPECT_EQ(b, 0.0);
  EXPECT_NE(gen_linear_head(20, 1024, 2, 2.0).weights, h.weights);
  EXPECT_EQ(gen_linear_head(20, 1024, 1, 2.0), h);

  // Var(z_k) = scale^2 * E[a^2] for a fixed activation vector, independent of D.
  for (std::size_t d : {256u, 2048u}) {
    SynthSpec spec;
    spec.n_samples = 1;
    spec.dim = d;
    spec.seed = 3;
    const auto a = gen_rectified_features(spec).features;
    double ea2 = 0;
    for (double v : a.data.row(0)) ea2 += v * v;
    ea2 /= static_cast<double>(d);
    const auto head = gen_linear_head(4000, d, 9, 2.0);
    const auto z = apply_head(a.data.row(0), head);
    double var = 0;
    for (double v : z) var += v * v;
    var /= static_cast<double>(z.size());
    EXPECT_NEAR(var, 4.0 * ea2, 0.1 * 4.0 * ea2) << d;
  }
}

TEST(Blobs, ShapesLabelsAndDeterminism) {
  BlobSpec spec;
  spec.seed = 3;
  const auto ds = gen_blob_dataset(spec);
  EXPECT_EQ(ds.train.n_samples(), 7u * 500u);
  EXPECT_EQ(ds.id_test.n_samples(), 7u * 100u);
  EXPECT_EQ(ds.ood_test.n_samples(), 3u * 100u);
  EXPECT_FALSE(ds.ood_test.labels.has_value());
  EXPECT_EQ(ds.ood_test.split, Split::ood_near);
  EXPECT_NO_THROW(ds.train.validate_labels(7));
  EXPECT_THROW(ds.train.validate_labels(6), InvalidArgument);
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    double n = 0;
    for (double v : ds.centers.row(c)) n += v * v;
    EXPECT_NEAR(std::sqrt(n), spec.center_scale, 1e-12);
  }
  EXPECT_EQ(gen_blob_dataset(spec).train.data, ds.train.data);
}

TEST(Blobs, NoiselessIsLinearlySeparable) {
  BlobSpec spec;
  spec.noise = 0.0;
  spec.seed = 8;
  const auto ds = gen_blob_dataset(spec);
  // Nearest-center rule expressed as a linear head: w_c = mu_c, b_c = -|mu_c|^2 / 2.
  LinearHead head{Matrix(7, spec.dim), std::vector<double>(7)};
  for (std::size_t c = 0; c < 7; ++c) {
    double n2 = 0;
    for (std::size_t j = 0; j < spec.dim; ++j) {
      head.weights(c, j) = ds.centers(spec.id_classes[c], j);
      n2 += head.weights(c, j) * head.weights(c, j);
    }
    head.bias[c] = -0.5 * n2;
  }
  FeatureSet test = ds.id_test;
  test.post_relu = false;
  EXPECT_EQ(id_accuracy(test, head, {ShapingMethod::identity, 0.5, 1.0}), 1.0);
}

TEST(Blobs, RejectsBadClassSplits) {
  BlobSpec spec;
  spec.id_classes = {};
  EXPECT_THROW(gen_blob_dataset(spec), InvalidArgument);
  spec.id_classes = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_THROW(gen_blob_dataset(spec), InvalidArgument);
  spec.id_classes = {1, 1};
  EXPECT_THROW(gen_blob_dataset(spec), InvalidArgument);
  spec.id_classes = {12};
  EXPECT_THROW(gen_blob_dataset(spec), InvalidArgument);
}
