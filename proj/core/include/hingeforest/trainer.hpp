#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "hingeforest/config.hpp"
#include "hingeforest/dataset.hpp"
#include "hingeforest/model.hpp"

namespace hingeforest {

struct PreparedData {
  Dataset train;
  std::optional<Dataset> validation;
  std::optional<Dataset> test;

  const Dataset* find(SplitTag tag) const;
};

// Loads the configured files and assigns the train/validation/test roles.
PreparedData prepare_data(const DatasetSpec& spec);

struct Evaluation {
  double loss = 0;
  // Misclassification rate, or 1 - R² for regression.
  double error = 0;
  std::optional<double> r_squared;
};

// Test-mode pass over `data` in chunks of `chunk` rows. The loss is the mean
// per-example loss.
template <typename T>
Evaluation evaluate(Graph<T>& graph, const Dataset& data, Task task, std::size_t chunk = 1000);

struct TrainOptions {
  bool resume = false;
  std::ostream* log = nullptr;
};

struct TrainSummary {
  std::uint64_t steps = 0;
  std::uint64_t best_step = 0;
  double best_selection_error = 0;
  Evaluation final_selection;
  std::optional<Evaluation> final_test;
  std::optional<Evaluation> best_test;
  std::filesystem::path metrics_path;
  std::filesystem::path best_model_path;
  std::filesystem::path final_model_path;
};

// Runs the configured number of optimizer steps, writing into
// config.output_dir:
//   metrics.tsv      step, split, loss, error rows
//   config.json      canonical config
//   model_final.bin  parameters after the last step
//   model_best.bin   parameters with the lowest selection-split error
//   checkpoint.bin   latest evaluation point with optimizer state
// A non-finite loss or gradient aborts with a NumericFault naming the step
// and node.
TrainSummary train(const ExperimentConfig& config, const TrainOptions& options = {});

// Same as train() on data that is already in memory.
TrainSummary train(const ExperimentConfig& config, const PreparedData& data, const TrainOptions& options = {});

std::string format_metric(double value);

}  // namespace hingeforest
