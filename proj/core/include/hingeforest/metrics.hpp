#pragma once

#include <cstddef>

#include "hingeforest/errors.hpp"
#include "hingeforest/tensor.hpp"

namespace hingeforest {

// Fraction of rows whose arg-max score differs from the label. Ties resolve
// to the lowest class index.
template <typename T>
double misclassification_rate(const Tensor<T>& scores, const Tensor<float>& labels) {
  if (scores.rank() != 2 || scores.extent(0) != labels.size()) {
    throw ConfigError("scores " + shape_string(scores.shape()) + " do not match " + std::to_string(labels.size()) +
                      " labels");
  }
  const std::size_t n = scores.extent(0);
  const std::size_t k = scores.extent(1);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = scores.data() + i * k;
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (row[c] > row[best]) best = c;
    }
    if (static_cast<float>(best) != labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(n);
}

/// Running sums for the coefficient of determination 1 - SS_res / SS_tot.
class RSquared {
 public:
  void add(double prediction, double target) {
    ++count_;
    const double residual = target - prediction;
    ss_res_ += residual * residual;
    // Welford update for the total sum of squares.
    const double delta = target - mean_;
    mean_ += delta / static_cast<double>(count_);
    ss_tot_ += delta * (target - mean_);
  }

  std::size_t count() const { return count_; }

  // Constant targets have no variance to explain; R² is reported as 1 for an
  // exact fit and 0 otherwise.
  double value() const {
    if (ss_tot_ == 0.0) return ss_res_ == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res_ / ss_tot_;
  }

 private:
  std::size_t count_ = 0;
  double mean_ = 0;
  double ss_res_ = 0;
  double ss_tot_ = 0;
};

template <typename T>
double r_squared(const Tensor<T>& predictions, const Tensor<float>& targets) {
  if (predictions.size() != targets.size()) {
    throw ConfigError("predictions " + shape_string(predictions.shape()) + " do not match " +
                      std::to_string(targets.size()) + " targets");
  }
  RSquared r2;
  for (std::size_t i = 0; i < targets.size(); ++i) r2.add(static_cast<double>(predictions[i]), targets[i]);
  return r2.value();
}

}  // namespace hingeforest
