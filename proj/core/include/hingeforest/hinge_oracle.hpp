#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "hingeforest/hinge_forest.hpp"

namespace hingeforest {

template <typename T>
struct OracleResult {
  std::vector<T> output;
  std::size_t nonzero_terms = 0;
};

// Brute-force leaf sum: every leaf's indicator is the minimum, over the
// decisions on its root-to-leaf path, of ReLU(t - x) for a left turn and
// ReLU(x - t) for a right turn. Enumerates all 2^D leaves; not used for
// training, only to check traversal-based evaluation.
template <typename T>
OracleResult<T> oracle_forward(std::span<const T> x, const ForestRef<T>& forest, std::size_t tree) {
  const ForestShape& shape = forest.shape;
  if (shape.depth > 16) throw ConfigError("oracle enumeration is limited to depth 16");
  const auto features = forest.tree_features(tree);
  const auto thresholds = forest.tree_thresholds(tree);

  OracleResult<T> result;
  result.output.assign(shape.outputs, T{0});
  for (std::size_t leaf = 0; leaf < shape.leaves(); ++leaf) {
    T indicator = std::numeric_limits<T>::infinity();
    std::size_t vertex = 0;
    for (std::size_t level = 0; level < shape.depth; ++level) {
      const bool right = ((leaf >> (shape.depth - 1 - level)) & 1u) != 0;
      const std::size_t v = shape.kind == ForestKind::kTree ? vertex : level;
      const T margin = x[static_cast<std::size_t>(features[v])] - thresholds[v];
      indicator = std::min(indicator, std::max(T{0}, right ? margin : -margin));
      vertex = 2 * vertex + (right ? 2 : 1);
    }
    if (indicator > T{0}) {
      ++result.nonzero_terms;
      const auto w = forest.leaf(tree, leaf);
      for (std::size_t k = 0; k < shape.outputs; ++k) result.output[k] += w[k] * indicator;
    }
  }
  return result;
}

}  // namespace hingeforest
