#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hingeforest/tensor.hpp"

namespace hingeforest {

enum class Task { kClassification, kRegression };
enum class SplitTag { kAll, kTrain, kValidation, kTest };

std::string_view to_string(Task task);
Task parse_task(std::string_view text);
std::string_view to_string(SplitTag tag);
SplitTag parse_split_tag(std::string_view text);

/// Examples held in memory. Features are N x F (tabular) or N x C x H x W
/// (images); labels are N class indices in [0, K) or N real targets.
struct Dataset {
  Tensor<float> features;
  Tensor<float> labels;
  Task task = Task::kClassification;
  std::vector<std::string> class_names;  // empty for regression
  SplitTag tag = SplitTag::kAll;

  std::size_t size() const { return features.empty() ? 0 : features.extent(0); }
  std::size_t num_classes() const { return class_names.size(); }
  Shape example_shape() const { return Shape(features.shape().begin() + 1, features.shape().end()); }
};

struct CsvOptions {
  // Column index (negative counts from the end) or header name.
  std::variant<std::int64_t, std::string> label_column = std::int64_t{-1};
  bool has_header = false;
  char delimiter = ',';
  Task task = Task::kClassification;
  // Non-numeric feature columns encoded as integer codes by first appearance.
  std::vector<std::size_t> categorical_columns;
  // Fixes the class order (e.g. to reuse a training set's mapping).
  std::vector<std::string> class_names;
};

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options);

// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
// Pixels are scaled to [0, 1]; images are returned as N x 1 x H x W.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

Dataset select_rows(const Dataset& data, std::span<const std::size_t> rows, SplitTag tag);

// Shuffles with `seed` and cuts consecutive blocks of floor(fraction * N)
// rows from the permutation.
std::vector<Dataset> shuffle_split(const Dataset& data, std::span<const double> fractions, std::uint64_t seed);

/// Endless mini-batch stream. Each epoch visits every row exactly once in an
/// order derived from (seed, epoch); the last batch of an epoch may be short.
class MinibatchIterator {
 public:
  struct Batch {
    Tensor<float> features;
    Tensor<float> labels;
    std::size_t epoch = 0;
  };

  MinibatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed);

  Batch next();

  std::size_t batch_size() const { return batch_size_; }
  std::size_t batches_per_epoch() const { return (data_->size() + batch_size_ - 1) / batch_size_; }
  std::uint64_t batches_served() const { return served_; }
  // Non-empty when the requested batch size had to be clamped.
  const std::string& warning() const { return warning_; }

  // Repositions the stream as if `batches` batches had already been drawn.
  void seek(std::uint64_t batches);

 private:
  void start_epoch(std::size_t epoch);

  const Dataset* data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::uint64_t served_ = 0;
  std::string warning_;
};

}  // namespace hingeforest
