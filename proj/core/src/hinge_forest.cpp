#include "hingeforest/hinge_forest.hpp"

#include <algorithm>
#include <random>

namespace hingeforest {

std::string_view to_string(ForestKind kind) { return kind == ForestKind::kTree ? "tree" : "fern"; }

ForestKind parse_forest_kind(std::string_view text) {
  if (text == "tree") return ForestKind::kTree;
  if (text == "fern") return ForestKind::kFern;
  throw ConfigError("forest kind must be 'tree' or 'fern', got '" + std::string(text) + "'");
}

void ForestShape::validate() const {
  if (trees == 0) throw ConfigError("forest.trees must be positive");
  if (depth == 0) throw ConfigError("forest.depth must be positive");
  if (depth > 24) throw ConfigError("forest.depth must not exceed 24");
  if (features == 0) throw ConfigError("forest needs at least one input feature");
  if (outputs == 0) throw ConfigError("forest.outputs must be positive");
}

template <typename T>
HingeForestParams<T> initialize_forest(const ForestShape& shape, std::uint64_t seed) {
  shape.validate();
  const std::size_t decisions = shape.decisions();
  HingeForestParams<T> params{shape,
                              std::vector<std::int32_t>(shape.trees * decisions),
                              Tensor<T>({shape.trees, decisions}),
                              Tensor<T>({shape.trees, shape.leaves(), shape.outputs})};

  Rng rng = make_rng(seed);
  std::uniform_int_distribution<std::int32_t> feature(0, static_cast<std::int32_t>(shape.features) - 1);
  std::uniform_real_distribution<double> threshold(-3.0, 3.0);
  std::normal_distribution<double> weight(0.0, 0.01);
  for (std::size_t m = 0; m < shape.trees; ++m) {
    for (std::size_t i = 0; i < decisions; ++i) {
      params.feature_index[m * decisions + i] = feature(rng);
      double t = threshold(rng);
      while (t == -3.0) t = threshold(rng);
      params.thresholds[m * decisions + i] = static_cast<T>(t);
    }
    const std::size_t per_tree = shape.leaves() * shape.outputs;
    for (std::size_t j = 0; j < per_tree; ++j) params.leaf_weights[m * per_tree + j] = static_cast<T>(weight(rng));
  }
  return params;
}

template <typename T>
void forest_forward(const Tensor<T>& input, const ForestRef<T>& forest, Tensor<T>& output,
                    std::vector<TraversalResult<T>>& traversals, std::uint64_t* decisions) {
  const ForestShape& shape = forest.shape;
  if (input.rank() != 2) throw ConfigError("hinge forest expects an N x F input, got " + shape_string(input.shape()));
  const std::size_t batch = input.extent(0);
  const std::size_t features = input.extent(1);
  for (std::int32_t f : forest.feature_index) {
    if (f < 0 || static_cast<std::size_t>(f) >= features) {
      throw ConfigError("feature index " + std::to_string(f) + " is outside [0, " + std::to_string(features) + ")");
    }
  }
  output.resize({batch, shape.trees, shape.outputs});
  traversals.resize(batch * shape.trees);
  for (std::size_t n = 0; n < batch; ++n) {
    const std::span<const T> x(input.data() + n * features, features);
    for (std::size_t m = 0; m < shape.trees; ++m) {
      const TraversalResult<T> r = traverse(forest, m, x, decisions);
      traversals[n * shape.trees + m] = r;
      const T scale = std::abs(r.margin);
      const std::span<const T> w = forest.leaf(m, r.leaf);
      T* out = output.data() + (n * shape.trees + m) * shape.outputs;
      for (std::size_t k = 0; k < shape.outputs; ++k) out[k] = w[k] * scale;
    }
  }
}

template <typename T>
Tensor<T> forest_forward(const Tensor<T>& input, const ForestRef<T>& forest) {
  Tensor<T> output;
  std::vector<TraversalResult<T>> traversals;
  forest_forward(input, forest, output, traversals);
  return output;
}

template <typename T>
void forest_backward(const Tensor<T>& output_grad, std::span<const TraversalResult<T>> traversals,
                     const ForestRef<T>& forest, std::span<T> input_grad, std::span<T> threshold_grad,
                     std::span<T> leaf_grad) {
  const ForestShape& shape = forest.shape;
  const std::size_t batch = output_grad.extent(0);
  const std::size_t features = input_grad.empty() ? 0 : input_grad.size() / batch;
  const std::size_t decisions = shape.decisions();
  const std::size_t outputs = shape.outputs;
  for (std::size_t m = 0; m < shape.trees; ++m) {
    const std::span<const std::int32_t> tree_features = forest.tree_features(m);
    for (std::size_t n = 0; n < batch; ++n) {
      const TraversalResult<T>& r = traversals[n * shape.trees + m];
      const T* g = output_grad.data() + (n * shape.trees + m) * outputs;
      const std::span<const T> w = forest.leaf(m, r.leaf);
      const T magnitude = std::abs(r.margin);
      const T sign = r.margin > T{0} ? T{1} : (r.margin < T{0} ? T{-1} : T{0});

      T upstream = 0;
      for (std::size_t k = 0; k < outputs; ++k) upstream += g[k] * w[k];

      if (sign != T{0}) {
        const T decision_grad = upstream * sign;
        if (!input_grad.empty()) {
          input_grad[n * features + static_cast<std::size_t>(tree_features[r.vertex])] += decision_grad;
        }
        threshold_grad[m * decisions + r.vertex] -= decision_grad;
        T* dw = leaf_grad.data() + (m * shape.leaves() + r.leaf) * outputs;
        for (std::size_t k = 0; k < outputs; ++k) dw[k] += g[k] * magnitude;
      }
    }
  }
}

template <typename T>
HingeForest<T>::HingeForest(HingeForestParams<T> params)
    : shape_(params.shape), feature_index_(std::move(params.feature_index)) {
  shape_.validate();
  if (feature_index_.size() != shape_.trees * shape_.decisions() ||
      params.thresholds.shape() != Shape{shape_.trees, shape_.decisions()} ||
      params.leaf_weights.shape() != Shape{shape_.trees, shape_.leaves(), shape_.outputs}) {
    throw ConfigError("hinge forest parameters do not match their declared shape");
  }
  params_.emplace_back("thresholds", std::move(params.thresholds));
  params_.emplace_back("leaf_weights", std::move(params.leaf_weights));
}

template <typename T>
Shape HingeForest<T>::output_shape(std::span<const Shape> inputs) const {
  if (inputs.size() != 1 || inputs[0].size() != 2) {
    throw ConfigError("hinge forest expects a single N x F input");
  }
  const std::size_t features = inputs[0][1];
  if (features != shape_.features) {
    throw ConfigError("forest was built for " + std::to_string(shape_.features) + " features, input has " +
                      std::to_string(features));
  }
  for (std::int32_t f : feature_index_) {
    if (f < 0 || static_cast<std::size_t>(f) >= features) {
      throw ConfigError("feature index " + std::to_string(f) + " is outside [0, " + std::to_string(features) + ")");
    }
  }
  return {inputs[0][0], shape_.trees, shape_.outputs};
}

template <typename T>
void HingeForest<T>::forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode) {
  forest_forward(*inputs[0], ref(), output, traversals_, &decisions_);
  has_forward_ = true;
}

template <typename T>
void HingeForest<T>::backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>&, const Tensor<T>& output_grad,
                              std::span<Tensor<T>* const> input_grads) {
  if (!has_forward_ || traversals_.size() != inputs[0]->extent(0) * shape_.trees) {
    throw StateError("hinge forest backward called without a matching forward pass");
  }
  std::span<T> dx = input_grads[0] != nullptr ? input_grads[0]->values() : std::span<T>();
  forest_backward<T>(output_grad, traversals_, ref(), dx, params_[0].grad.values(), params_[1].grad.values());
}

template HingeForestParams<float> initialize_forest<float>(const ForestShape&, std::uint64_t);
template HingeForestParams<double> initialize_forest<double>(const ForestShape&, std::uint64_t);
template void forest_forward<float>(const Tensor<float>&, const ForestRef<float>&, Tensor<float>&,
                                    std::vector<TraversalResult<float>>&, std::uint64_t*);
template void forest_forward<double>(const Tensor<double>&, const ForestRef<double>&, Tensor<double>&,
                                     std::vector<TraversalResult<double>>&, std::uint64_t*);
template Tensor<float> forest_forward<float>(const Tensor<float>&, const ForestRef<float>&);
template Tensor<double> forest_forward<double>(const Tensor<double>&, const ForestRef<double>&);
template void forest_backward<float>(const Tensor<float>&, std::span<const TraversalResult<float>>,
                                     const ForestRef<float>&, std::span<float>, std::span<float>, std::span<float>);
template void forest_backward<double>(const Tensor<double>&, std::span<const TraversalResult<double>>,
                                      const ForestRef<double>&, std::span<double>, std::span<double>,
                                      std::span<double>);
template class HingeForest<float>;
template class HingeForest<double>;

}  // namespace hingeforest
