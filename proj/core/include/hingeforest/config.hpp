#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hingeforest/dataset.hpp"
#include "hingeforest/hinge_forest.hpp"
#include "hingeforest/optimizers.hpp"

namespace hingeforest {

struct DatasetSpec {
  enum class Format { kCsv, kIdx };
  Format format = Format::kCsv;

  // Delimited text. `path` is split by `fractions`; when `test_path` is set
  // the test split comes from that file instead.
  std::filesystem::path path;
  std::optional<std::filesystem::path> test_path;
  CsvOptions csv;

  // IDX image/label pairs. The validation split, if any, is carved from the
  // training files by `fractions` = [train, validation].
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;

  // Roles in order: train, validation, test. `rotate` cycles the roles, so
  // rotate = 1 trains on the second block, validates on the third and tests
  // on the first (k-fold style rotation over one shuffle).
  std::vector<double> fractions;
  std::size_t rotate = 0;
  std::uint64_t seed = 1;

  Task task() const { return format == Format::kIdx ? Task::kClassification : csv.task; }
};

struct FeatureLayerSpec {
  enum class Type { kNone, kInnerProduct, kConvolution };
  Type type = Type::kInnerProduct;
  std::size_t count = 100;  // inner product outputs
  std::size_t kernels = 80;
  std::size_t kernel_size = 5;
  std::size_t stride = 3;
};

struct ForestSpec {
  ForestKind kind = ForestKind::kTree;
  std::size_t trees = 0;
  std::size_t depth = 0;
  std::optional<std::size_t> outputs;  // derived from the dataset when absent
};

struct ArchitectureSpec {
  FeatureLayerSpec features;
  ForestSpec forest;
  double batch_norm_momentum = 0.05;
  double batch_norm_epsilon = 1e-5;
};

enum class Selection { kValidation, kTest };

struct RunSpec {
  std::size_t batch_size = 32;
  std::size_t max_steps = 1000;
  std::size_t eval_interval = 100;
  std::uint64_t seed = 1;
  Selection selection = Selection::kValidation;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ArchitectureSpec architecture;
  OptimizerSettings optimizer;
  RunSpec run;
  std::filesystem::path output_dir = "runs/experiment";
};

// Parses and validates a JSON document. Relative paths are resolved against
// `base_dir`. Every violation is collected into a single ConfigError.
ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {},
                                   bool check_paths = true);
ExperimentConfig parse_config_file(const std::filesystem::path& path, bool check_paths = true);

// Fully populated JSON rendering of a config (defaults included). Parsing the
// result yields an equal config.
std::string canonical_config(const ExperimentConfig& config);

// Architecture section alone, as JSON (embedded in model files).
std::string architecture_json(const ArchitectureSpec& spec);
ArchitectureSpec parse_architecture_json(const std::string& text);

}  // namespace hingeforest
