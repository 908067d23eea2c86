#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scaleood/core.hpp"

namespace scaleood {

enum class Split { id, ood_near, ood_far, validation };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::id: return "id";
    case Split::ood_near: return "ood-near";
    case Split::ood_far: return "ood-far";
    case Split::validation: return "validation";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "id") return Split::id;
  if (s == "ood-near") return Split::ood_near;
  if (s == "ood-far") return Split::ood_far;
  if (s == "validation") return Split::validation;
  throw InvalidArgument("unknown split '" + std::string(s) +
                        "' (expected id, ood-near, ood-far or validation)");
}

inline bool is_ood(Split s) { return s == Split::ood_near || s == Split::ood_far; }

using Labels = std::vector<std::uint32_t>;

/// Penultimate-layer activations, one sample per row.
struct FeatureSet {
  Matrix data;
  std::string tag;
  Split split = Split::id;
  bool post_relu = true;
  std::optional<Labels> labels;

  std::size_t n_samples() const noexcept { return data.rows(); }
  std::size_t dim() const noexcept { return data.cols(); }

  /// Throws InvalidArgument naming the first offending row/column.
  void validate() const {
    for (std::size_t i = 0; i < data.rows(); ++i) {
      auto row = data.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (!std::isfinite(row[j]))
          throw InvalidArgument("non-finite value in '" + tag + "' at row " + std::to_string(i) +
                                ", col " + std::to_string(j));
        if (post_relu && row[j] < 0.0)
          throw InvalidArgument("negative value in post-ReLU set '" + tag + "' at row " +
                                std::to_string(i) + ", col " + std::to_string(j));
      }
    }
    if (labels && labels->size() != data.rows())
      throw InvalidArgument("label count " + std::to_string(labels->size()) +
                            " does not match sample count " + std::to_string(data.rows()));
  }

  void validate_labels(std::size_t n_classes) const {
    if (!labels) return;
    for (std::size_t i = 0; i < labels->size(); ++i)
      if ((*labels)[i] >= n_classes)
        throw InvalidArgument("label " + std::to_string((*labels)[i]) + " at row " +
                              std::to_string(i) + " is out of range for " +
                              std::to_string(n_classes) + " classes");
  }
};

/// Pre-ReLU activations; values may be negative.
struct PreActSet {
  Matrix data;
  std::string tag;

  std::size_t n_samples() const noexcept { return data.rows(); }
  std::size_t dim() const noexcept { return data.cols(); }

  void validate() const {
    for (std::size_t i = 0; i < data.rows(); ++i) {
      auto row = data.row(i);
      for (std::size_t j = 0; j < row.size(); ++j)
        if (!std::isfinite(row[j]))
          throw InvalidArgument("non-finite pre-activation in '" + tag + "' at row " +
                                std::to_string(i) + ", col " + std::to_string(j));
    }
  }
};

/// Final linear classifier: z = W a + b, W is K x D and b has length K.
struct LinearHead {
  Matrix weights;
  std::vector<double> bias;

  std::size_t n_classes() const noexcept { return weights.rows(); }
  std::size_t dim() const noexcept { return weights.cols(); }

  void validate() const {
    if (bias.size() != weights.rows())
      throw InvalidArgument("head bias length " + std::to_string(bias.size()) +
                            " does not match class count " + std::to_string(weights.rows()));
    if (!all_finite(weights.values()) || !all_finite(bias))
      throw InvalidArgument("head contains non-finite values");
  }

  bool operator==(const LinearHead&) const = default;
};

}  // namespace scaleood
