#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hingeforest/graph.hpp"
#include "hingeforest/random.hpp"

namespace hingeforest {

enum class ForestKind { kTree, kFern };

std::string_view to_string(ForestKind kind);
ForestKind parse_forest_kind(std::string_view text);

/// Size of a forest. A depth-D tree has 2^D - 1 decisions, a depth-D fern
/// has D (one per level, shared across paths); both have 2^D leaves.
struct ForestShape {
  ForestKind kind = ForestKind::kTree;
  std::size_t trees = 1;
  std::size_t depth = 1;
  std::size_t features = 1;
  std::size_t outputs = 1;

  std::size_t decisions() const { return kind == ForestKind::kTree ? (std::size_t{1} << depth) - 1 : depth; }
  std::size_t leaves() const { return std::size_t{1} << depth; }

  // Throws ConfigError naming the first offending field.
  void validate() const;
};

/// Read-only view of forest parameters, laid out as
///   feature_index, thresholds: trees x decisions
///   leaf_weights:              trees x leaves x outputs
template <typename T>
struct ForestRef {
  ForestShape shape;
  std::span<const std::int32_t> feature_index;
  std::span<const T> thresholds;
  std::span<const T> leaf_weights;

  std::span<const std::int32_t> tree_features(std::size_t m) const {
    return feature_index.subspan(m * shape.decisions(), shape.decisions());
  }
  std::span<const T> tree_thresholds(std::size_t m) const {
    return thresholds.subspan(m * shape.decisions(), shape.decisions());
  }
  std::span<const T> leaf(std::size_t m, std::size_t l) const {
    return leaf_weights.subspan((m * shape.leaves() + l) * shape.outputs, shape.outputs);
  }
};

template <typename T>
struct HingeForestParams {
  ForestShape shape;
  std::vector<std::int32_t> feature_index;
  Tensor<T> thresholds;
  Tensor<T> leaf_weights;

  ForestRef<T> ref() const { return {shape, feature_index, thresholds.values(), leaf_weights.values()}; }
};

/// Outcome of one traversal: the leaf reached, the signed decision margin of
/// smallest magnitude on the path, and the (shallowest) vertex attaining it.
template <typename T>
struct TraversalResult {
  std::uint32_t leaf = 0;
  T margin = 0;
  std::uint32_t vertex = 0;

  friend bool operator==(const TraversalResult&, const TraversalResult&) = default;
};

// Random feature indices (with replacement), thresholds ~ U(-3, 3) and leaf
// weights ~ N(0, 0.01). Deterministic in `seed`.
template <typename T>
HingeForestParams<T> initialize_forest(const ForestShape& shape, std::uint64_t seed);

// Depth-D descent through a complete binary tree stored breadth-first:
// children of v are 2v+1 (left) and 2v+2 (right). A zero margin goes left.
// `decisions`, when given, is incremented once per evaluated decision.
template <typename T>
TraversalResult<T> tree_traverse(std::span<const T> x, std::span<const std::int32_t> features,
                                 std::span<const T> thresholds, std::size_t depth,
                                 std::uint64_t* decisions = nullptr) {
  TraversalResult<T> result;
  std::uint32_t leaf = 0;
  std::uint32_t vertex = 0;
  for (std::size_t level = 0; level < depth; ++level) {
    const T r = x[static_cast<std::size_t>(features[vertex])] - thresholds[vertex];
    if (decisions != nullptr) ++*decisions;
    if (level == 0 || std::abs(r) < std::abs(result.margin)) {
      result.margin = r;
      result.vertex = vertex;
    }
    const std::uint32_t right = r > T{0} ? 1u : 0u;
    leaf = 2 * leaf + right;
    vertex = 2 * vertex + right + 1;
  }
  result.leaf = leaf;
  return result;
}

// Same as tree_traverse, but level i always uses decision i.
template <typename T>
TraversalResult<T> fern_traverse(std::span<const T> x, std::span<const std::int32_t> features,
                                 std::span<const T> thresholds, std::size_t depth,
                                 std::uint64_t* decisions = nullptr) {
  TraversalResult<T> result;
  std::uint32_t leaf = 0;
  for (std::size_t level = 0; level < depth; ++level) {
    const T r = x[static_cast<std::size_t>(features[level])] - thresholds[level];
    if (decisions != nullptr) ++*decisions;
    if (level == 0 || std::abs(r) < std::abs(result.margin)) {
      result.margin = r;
      result.vertex = static_cast<std::uint32_t>(level);
    }
    leaf = 2 * leaf + (r > T{0} ? 1u : 0u);
  }
  result.leaf = leaf;
  return result;
}

template <typename T>
TraversalResult<T> traverse(const ForestRef<T>& forest, std::size_t tree, std::span<const T> x,
                            std::uint64_t* decisions = nullptr) {
  return forest.shape.kind == ForestKind::kTree
             ? tree_traverse<T>(x, forest.tree_features(tree), forest.tree_thresholds(tree), forest.shape.depth,
                                decisions)
             : fern_traverse<T>(x, forest.tree_features(tree), forest.tree_thresholds(tree), forest.shape.depth,
                                decisions);
}

// output[n,m,:] = leaf_weights[m, leaf(n,m), :] * |margin(n,m)|.
// `traversals` receives N x M results in example-major order.
template <typename T>
void forest_forward(const Tensor<T>& input, const ForestRef<T>& forest, Tensor<T>& output,
                    std::vector<TraversalResult<T>>& traversals, std::uint64_t* decisions = nullptr);

template <typename T>
Tensor<T> forest_forward(const Tensor<T>& input, const ForestRef<T>& forest);

// Accumulates the sparse gradients implied by cached traversals. Per example
// n and tree m with g = output_grad[n,m,:] and s = sgn(margin):
//   input_grad[n, F[m,v*]] += (g . w[m,leaf]) * s
//   threshold_grad[m,v*]   -= (g . w[m,leaf]) * s
//   leaf_grad[m,leaf,:]    += g * |margin|
// input_grad may be empty when the input needs no gradient.
template <typename T>
void forest_backward(const Tensor<T>& output_grad, std::span<const TraversalResult<T>> traversals,
                     const ForestRef<T>& forest, std::span<T> input_grad, std::span<T> threshold_grad,
                     std::span<T> leaf_grad);

/// Graph node wrapping a hinge forest: N x F -> N x M x K.
template <typename T>
class HingeForest final : public Node<T> {
 public:
  explicit HingeForest(HingeForestParams<T> params);

  std::string kind() const override { return "hinge_forest"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  void forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output, const Tensor<T>& output_grad,
                std::span<Tensor<T>* const> input_grads) override;
  std::span<Parameter<T>> parameters() override { return params_; }
  std::vector<IndexBuffer> index_buffers() override { return {{"feature_index", &feature_index_}}; }

  const ForestShape& shape() const { return shape_; }
  ForestRef<T> ref() const {
    return {shape_, feature_index_, params_[0].value.values(), params_[1].value.values()};
  }
  Tensor<T>& thresholds() { return params_[0].value; }
  Tensor<T>& leaf_weights() { return params_[1].value; }
  const std::vector<std::int32_t>& feature_index() const { return feature_index_; }
  const Tensor<T>& threshold_grad() const { return params_[0].grad; }
  const Tensor<T>& leaf_grad() const { return params_[1].grad; }

  // Traversals of the most recent forward pass, N x M, example-major.
  const std::vector<TraversalResult<T>>& traversals() const { return traversals_; }

  std::uint64_t decision_count() const { return decisions_; }
  void reset_decision_count() { decisions_ = 0; }

 private:
  ForestShape shape_;
  std::vector<std::int32_t> feature_index_;
  std::vector<Parameter<T>> params_;
  std::vector<TraversalResult<T>> traversals_;
  std::uint64_t decisions_ = 0;
  bool has_forward_ = false;
};

extern template class HingeForest<float>;
extern template class HingeForest<double>;

}  // namespace hingeforest
