#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scaleood/random.hpp"
#include "scaleood/theory.hpp"
#include "scaleood/types.hpp"

namespace scaleood {

struct SynthSpec {
  GaussianParams distribution{1.0, 0.5};
  bool rectified = true;
  std::size_t n_samples = 1000;
  std::size_t dim = 2048;
  std::uint64_t seed = 0;
  std::string tag = "synthetic";
  Split split = Split::id;
};

struct SynthFeatures {
  FeatureSet features;  // post-ReLU unless rectified is false
  PreActSet preacts;
};

/// I.i.d. N(mu, sigma^2) pre-activations per coordinate; row i draws from
/// stream (seed, features, i).
inline SynthFeatures gen_rectified_features(const SynthSpec& spec, std::size_t threads = 1) {
  spec.distribution.validate();
  if (spec.n_samples < 1 || spec.dim < 1)
    throw InvalidArgument("synthetic set needs n_samples >= 1 and dim >= 1");
  Matrix pre(spec.n_samples, spec.dim);
  parallel_for(spec.n_samples, threads, [&](std::size_t i) {
    CounterRng rng(spec.seed, stream_id(StreamDomain::features, i));
    for (double& v : pre.row(i)) v = rng.normal(spec.distribution.mu, spec.distribution.sigma);
  });
  Matrix post = pre;
  if (spec.rectified)
    for (double& v : post.values()) v = std::max(0.0, v);
  SynthFeatures out;
  out.features = FeatureSet{std::move(post), spec.tag, spec.split, spec.rectified, std::nullopt};
  out.preacts = PreActSet{std::move(pre), spec.tag};
  return out;
}

/// Weights i.i.d. N(0, scale^2 / D), zero bias.
inline LinearHead gen_linear_head(std::size_t n_classes, std::size_t dim, std::uint64_t seed,
                                  double scale = 1.0) {
  if (n_classes < 1 || dim < 1) throw InvalidArgument("head needs K >= 1 and D >= 1");
  LinearHead head{Matrix(n_classes, dim), std::vector<double>(n_classes, 0.0)};
  const double sd = scale / std::sqrt(static_cast<double>(dim));
  for (std::size_t k = 0; k < n_classes; ++k) {
    CounterRng rng(seed, stream_id(StreamDomain::head, k));
    for (double& w : head.weights.row(k)) w = rng.normal(0.0, sd);
  }
  return head;
}

struct BlobSpec {
  std::size_t n_classes = 10;
  std::vector<std::uint32_t> id_classes{0, 1, 2, 3, 4, 5, 6};
  std::size_t dim = 32;
  double center_scale = 3.0;
  double noise = 0.6;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (id_classes.empty() || id_classes.size() >= n_classes)
      throw InvalidArgument("id_classes must be a non-empty proper subset of the classes");
    std::vector<char> seen(n_classes, 0);
    for (auto c : id_classes) {
      if (c >= n_classes) throw InvalidArgument("id class out of range");
      if (seen[c]++) throw InvalidArgument("duplicate id class");
    }
    if (dim < 1 || train_per_class < 1 || test_per_class < 1)
      throw InvalidArgument("blob dataset sizes must be positive");
    if (!(noise >= 0.0) || !(center_scale > 0.0))
      throw InvalidArgument("blob noise must be >= 0 and center scale > 0");
  }
};

struct BlobDataset {
  FeatureSet train;    // labels re-indexed to [0, |id_classes|)
  FeatureSet id_test;  // labelled
  FeatureSet ood_test; // held-out classes, unlabelled
  Matrix centers;
};

/// Class centers uniform on the sphere of radius center_scale; samples are
/// center + N(0, noise^2 I). Train and test draw from separate streams.
inline BlobDataset gen_blob_dataset(const BlobSpec& spec) {
  spec.validate();
  BlobDataset ds;
  ds.centers = Matrix(spec.n_classes, spec.dim);
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    CounterRng rng(spec.seed, stream_id(StreamDomain::blob_centers, c));
    auto row = ds.centers.row(c);
    double norm = 0.0;
    for (double& v : row) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : row) v *= spec.center_scale / norm;
  }

  std::vector<int> id_index(spec.n_classes, -1);
  for (std::size_t i = 0; i < spec.id_classes.size(); ++i)
    id_index[spec.id_classes[i]] = static_cast<int>(i);

  auto draw = [&](std::size_t cls, std::size_t count, std::uint64_t stream, Matrix& out,
                  std::size_t& row) {
    CounterRng rng(spec.seed, stream_id(StreamDomain::blob_samples, stream));
    for (std::size_t s = 0; s < count; ++s, ++row) {
      auto r = out.row(row);
      auto c = ds.centers.row(cls);
      for (std::size_t j = 0; j < spec.dim; ++j) r[j] = c[j] + spec.noise * rng.normal();
    }
  };

  const std::size_t n_id = spec.id_classes.size();
  const std::size_t n_ood = spec.n_classes - n_id;
  Matrix train(n_id * spec.train_per_class, spec.dim);
  Matrix id_test(n_id * spec.test_per_class, spec.dim);
  Matrix ood_test(n_ood * spec.test_per_class, spec.dim);
  Labels train_labels, test_labels;
  std::size_t tr = 0, te = 0, oo = 0;
  for (std::size_t cls = 0; cls < spec.n_classes; ++cls) {
    const std::uint64_t train_stream = 2 * cls;
    const std::uint64_t test_stream = 2 * cls + 1;
    if (id_index[cls] >= 0) {
      draw(cls, spec.train_per_class, train_stream, train, tr);
      draw(cls, spec.test_per_class, test_stream, id_test, te);
      train_labels.insert(train_labels.end(), spec.train_per_class,
                          static_cast<std::uint32_t>(id_index[cls]));
      test_labels.insert(test_labels.end(), spec.test_per_class,
                         static_cast<std::uint32_t>(id_index[cls]));
    } else {
      draw(cls, spec.test_per_class, test_stream, ood_test, oo);
    }
  }
  ds.train = FeatureSet{std::move(train), "blob-train", Split::id, false, std::move(train_labels)};
  ds.id_test = FeatureSet{std::move(id_test), "blob-id", Split::id, false, std::move(test_labels)};
  ds.ood_test = FeatureSet{std::move(ood_test), "blob-ood", Split::ood_near, false, std::nullopt};
  return ds;
}

}  // namespace scaleood
