#include <atomic>
#include <charconv>
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "scaleood/core.hpp"
#include "scaleood/types.hpp"

using namespace scaleood;

TEST(Matrix, RowMajorLayout) {
  Matrix m(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m(1, 0), 4.0);
  EXPECT_EQ(m.row(1)[2], 6.0);
  EXPECT_EQ(m.values().size(), 6u);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), DimensionMismatch);
}

TEST(ParallelFor, EveryIndexOnceAndOrderFree) {
  for (std::size_t threads : {1u, 2u, 3u, 8u}) {
    std::vector<int> hits(101, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
}

TEST(ParallelFor, RethrowsWorkerErrors) {
  EXPECT_THROW(parallel_for(10, 4,
                            [](std::size_t i) {
                              if (i == 7) throw DegenerateSample("boom", i);
                            }),
               DegenerateSample);
}

TEST(FormatDouble, RoundTripsExactly) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(gen);
    const auto s = format_double(v);
    double back = 0;
    std::from_chars(s.data(), s.data() + s.size(), back);
    EXPECT_EQ(back, v);
  }
}

TEST(Argmax, FirstMaximumWins) {
  std::vector<double> v{1, 3, 3, 2};
  EXPECT_EQ(argmax(v), 1u);
  EXPECT_THROW(argmax(std::vector<double>{}), InvalidArgument);
}

TEST(Errors, ParseErrorCarriesLocation) {
  ParseError e("non-finite value", 3, 1);
  EXPECT_EQ(e.row(), 3u);
  EXPECT_EQ(e.col(), 1u);
  EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos);
}

TEST(Errors, DegenerateSampleIndex) {
  const auto e = DegenerateSample("kept sum is zero").at(12);
  EXPECT_EQ(e.sample_index(), 12u);
  EXPECT_NE(std::string(e.what()).find("12"), std::string::npos);
}

TEST(Split, ParseAndPrint) {
  for (Split s : {Split::id, Split::ood_near, Split::ood_far, Split::validation})
    EXPECT_EQ(parse_split(to_string(s)), s);
  EXPECT_THROW(parse_split("ood"), InvalidArgument);
  EXPECT_TRUE(is_ood(Split::ood_far));
  EXPECT_FALSE(is_ood(Split::validation));
}

TEST(FeatureSet, RejectsNegativePostRelu) {
  FeatureSet fs{Matrix(1, 2, std::vector<double>{0.5, -0.1}), "x", Split::id, true, {}};
  EXPECT_THROW(fs.validate(), InvalidArgument);
  fs.post_relu = false;
  EXPECT_NO_THROW(fs.validate());
}

TEST(FeatureSet, RejectsNonFinite) {
  FeatureSet fs{Matrix(1, 1, std::vector<double>{std::numeric_limits<double>::infinity()}), "x",
                Split::id, false, {}};
  EXPECT_THROW(fs.validate(), InvalidArgument);
}

TEST(FeatureSet, LabelChecks) {
  FeatureSet fs{Matrix(2, 1, 1.0), "x", Split::id, true, Labels{0, 2}};
  EXPECT_NO_THROW(fs.validate());
  EXPECT_NO_THROW(fs.validate_labels(3));
  EXPECT_THROW(fs.validate_labels(2), InvalidArgument);
  fs.labels = Labels{0};
  EXPECT_THROW(fs.validate(), InvalidArgument);
}

TEST(LinearHead, BiasLengthIsClassCount) {
  LinearHead h{Matrix(2, 3), {0.0, 0.0}};
  EXPECT_NO_THROW(h.validate());
  EXPECT_EQ(h.n_classes(), 2u);
  EXPECT_EQ(h.dim(), 3u);
  h.bias.push_back(0.0);
  EXPECT_THROW(h.validate(), InvalidArgument);
}
