#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hingeforest/config.hpp"
#include "hingeforest/graph.hpp"

namespace hingeforest {

struct GradcheckOptions {
  std::size_t samples = 200;
  double step = 1e-3;
  double tolerance = 1e-3;
  // A coordinate is skipped when a margin it moves lies within
  // kink_factor * step of zero, or when the perturbation changes a route.
  double kink_factor = 10.0;
  std::uint64_t seed = 1;
  bool include_input = true;
  std::size_t batch_size = 4;
};

struct GradcheckEntry {
  std::string target;  // "node.parameter" or the input name
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double relative_error = 0;
};

struct GradcheckReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_relative_error = 0;
  std::optional<GradcheckEntry> worst;
  std::vector<GradcheckEntry> failures;
  double tolerance = 0;

  bool passed() const { return checked > 0 && failures.empty(); }
};

// |a - n| / max(1e-8, |a|)
double gradcheck_relative_error(double analytic, double numeric);

// Compares backward() against central differences of the loss on one batch.
// Samples cycle through the learnable parameters (and the input when
// enabled) in graph order. The graph is run in test mode throughout.
GradcheckReport gradient_check(Graph<double>& graph, const Tensor<double>& batch, const Tensor<double>& labels,
                               const GradcheckOptions& options);

// Sets every batch-norm layer's running mean and std to the statistics of
// its input on `batch` and freezes it, so forest inputs sit on the scale the
// thresholds were drawn for.
void calibrate_batch_norm(Graph<double>& graph, const Tensor<double>& batch, const Tensor<double>& labels);

// Builds the configured architecture in 64-bit, calibrates and freezes its
// batch-norm statistics on a batch drawn from the training split, then runs
// gradient_check.
GradcheckReport gradcheck_config(const ExperimentConfig& config, const GradcheckOptions& options);

}  // namespace hingeforest
