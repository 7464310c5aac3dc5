#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hingeforest/graph.hpp"

namespace hingeforest {

enum class OptimizerKind { kSgd, kAdaGrad, kAdam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::kAdaGrad;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Coupled: added to the gradient as weight_decay * param.
  double weight_decay = 0.0;
};

// param <- param - lr * (grad + decay * param)
template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, const OptimizerSettings& settings);

// G <- G + g^2;  param <- param - lr * g / (sqrt(G) + eps)
template <typename T>
void adagrad_step(std::span<T> param, std::span<const T> grad, std::span<T> sum_squares,
                  const OptimizerSettings& settings);

// Bias-corrected Adam; `step` is the 1-based index of this update. Moments
// decay on every coordinate, including those with zero gradient.
template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, std::span<T> first_moment, std::span<T> second_moment,
               std::uint64_t step, const OptimizerSettings& settings);

/// Applies one of the update rules to every learnable parameter of a graph,
/// keeping one set of accumulators per parameter.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerSettings settings);

  const OptimizerSettings& settings() const { return settings_; }
  std::uint64_t steps() const { return steps_; }

  void step(Graph<T>& graph);

  // Accumulator tensors in parameter order (one per parameter for AdaGrad,
  // two for Adam, none for SGD). Exposed for persistence.
  std::vector<Tensor<T>>& state() { return state_; }
  void restore(std::vector<Tensor<T>> state, std::uint64_t steps);

 private:
  std::size_t slots() const;

  OptimizerSettings settings_;
  std::vector<Tensor<T>> state_;
  std::uint64_t steps_ = 0;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace hingeforest
