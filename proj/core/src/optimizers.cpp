#include "hingeforest/optimizers.hpp"

#include <cmath>

namespace hingeforest {

std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kSgd:
      return "sgd";
    case OptimizerKind::kAdaGrad:
      return "adagrad";
    case OptimizerKind::kAdam:
      return "adam";
  }
  return "unknown";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd") return OptimizerKind::kSgd;
  if (text == "adagrad") return OptimizerKind::kAdaGrad;
  if (text == "adam") return OptimizerKind::kAdam;
  throw ConfigError("optimizer must be one of sgd, adagrad, adam; got '" + std::string(text) + "'");
}

template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, const OptimizerSettings& settings) {
  const T lr = static_cast<T>(settings.learning_rate);
  const T decay = static_cast<T>(settings.weight_decay);
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * (grad[i] + decay * param[i]);
}

template <typename T>
void adagrad_step(std::span<T> param, std::span<const T> grad, std::span<T> sum_squares,
                  const OptimizerSettings& settings) {
  const T lr = static_cast<T>(settings.learning_rate);
  const T decay = static_cast<T>(settings.weight_decay);
  const T eps = static_cast<T>(settings.epsilon);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i] + decay * param[i];
    if (g == T{0}) continue;
    sum_squares[i] += g * g;
    param[i] -= lr * g / (std::sqrt(sum_squares[i]) + eps);
  }
}

template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, std::span<T> first_moment, std::span<T> second_moment,
               std::uint64_t step, const OptimizerSettings& settings) {
  const T lr = static_cast<T>(settings.learning_rate);
  const T decay = static_cast<T>(settings.weight_decay);
  const T eps = static_cast<T>(settings.epsilon);
  const T beta1 = static_cast<T>(settings.beta1);
  const T beta2 = static_cast<T>(settings.beta2);
  const auto t = static_cast<double>(step);
  const T correction1 = static_cast<T>(1.0 - std::pow(settings.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(settings.beta2, t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i] + decay * param[i];
    first_moment[i] = beta1 * first_moment[i] + (T{1} - beta1) * g;
    second_moment[i] = beta2 * second_moment[i] + (T{1} - beta2) * g * g;
    const T m_hat = first_moment[i] / correction1;
    const T v_hat = second_moment[i] / correction2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerSettings settings) : settings_(settings) {
  if (!(settings_.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be positive");
  if (!(settings_.beta1 >= 0.0 && settings_.beta1 < 1.0)) throw ConfigError("optimizer.beta1 must lie in [0, 1)");
  if (!(settings_.beta2 >= 0.0 && settings_.beta2 < 1.0)) throw ConfigError("optimizer.beta2 must lie in [0, 1)");
  if (!(settings_.epsilon > 0.0)) throw ConfigError("optimizer.epsilon must be positive");
  if (!(settings_.weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be non-negative");
}

template <typename T>
std::size_t Optimizer<T>::slots() const {
  switch (settings_.kind) {
    case OptimizerKind::kSgd:
      return 0;
    case OptimizerKind::kAdaGrad:
      return 1;
    case OptimizerKind::kAdam:
      return 2;
  }
  return 0;
}

template <typename T>
void Optimizer<T>::restore(std::vector<Tensor<T>> state, std::uint64_t steps) {
  state_ = std::move(state);
  steps_ = steps;
}

template <typename T>
void Optimizer<T>::step(Graph<T>& graph) {
  std::vector<Parameter<T>*> learnable;
  for (const auto& ref : graph.parameters()) {
    if (ref.parameter->learnable) learnable.push_back(ref.parameter);
  }
  const std::size_t per_param = slots();
  if (state_.empty() && per_param > 0) {
    for (const Parameter<T>* p : learnable) {
      for (std::size_t s = 0; s < per_param; ++s) state_.emplace_back(p->value.shape());
    }
  }
  if (state_.size() != learnable.size() * per_param) {
    throw StateError("optimizer state does not match the graph's learnable parameters");
  }

  ++steps_;
  for (std::size_t i = 0; i < learnable.size(); ++i) {
    Parameter<T>& p = *learnable[i];
    for (std::size_t s = 0; s < per_param; ++s) {
      if (state_[i * per_param + s].shape() != p.value.shape()) {
        throw StateError("optimizer state shape mismatch for parameter '" + p.name + "'");
      }
    }
    switch (settings_.kind) {
      case OptimizerKind::kSgd:
        sgd_step<T>(p.value.values(), p.grad.values(), settings_);
        break;
      case OptimizerKind::kAdaGrad:
        adagrad_step<T>(p.value.values(), p.grad.values(), state_[i].values(), settings_);
        break;
      case OptimizerKind::kAdam:
        adam_step<T>(p.value.values(), p.grad.values(), state_[2 * i].values(), state_[2 * i + 1].values(), steps_,
                     settings_);
        break;
    }
  }
}

template void sgd_step<float>(std::span<float>, std::span<const float>, const OptimizerSettings&);
template void sgd_step<double>(std::span<double>, std::span<const double>, const OptimizerSettings&);
template void adagrad_step<float>(std::span<float>, std::span<const float>, std::span<float>,
                                  const OptimizerSettings&);
template void adagrad_step<double>(std::span<double>, std::span<const double>, std::span<double>,
                                   const OptimizerSettings&);
template void adam_step<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                               std::uint64_t, const OptimizerSettings&);
template void adam_step<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                std::uint64_t, const OptimizerSettings&);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace hingeforest
