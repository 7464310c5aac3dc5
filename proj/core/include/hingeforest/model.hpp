#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hingeforest/config.hpp"
#include "hingeforest/graph.hpp"
#include "hingeforest/layers.hpp"

namespace hingeforest {

// Node names used by build_graph.
namespace nodes {
inline constexpr const char* kData = "data";
inline constexpr const char* kLabels = "labels";
inline constexpr const char* kFeatures = "features";
inline constexpr const char* kFlatten = "flatten";
inline constexpr const char* kBatchNorm = "batch_norm";
inline constexpr const char* kForest = "forest";
inline constexpr const char* kAggregate = "aggregate";
inline constexpr const char* kLoss = "loss";
}  // namespace nodes

/// Everything needed to rebuild a graph without the training config.
struct ModelInfo {
  ArchitectureSpec architecture;
  Shape example_shape;
  std::size_t outputs = 1;
  Task task = Task::kClassification;
  std::vector<std::string> class_names;
  std::uint64_t seed = 1;
};

// Derives the model description for a dataset. Classification uses one
// output per class; regression uses a single output.
ModelInfo describe_model(const ArchitectureSpec& architecture, const Dataset& train, std::uint64_t seed);

// data -> [features -> [flatten]] -> batch_norm -> forest -> aggregate -> loss
// Throws ConfigError when the feature layer does not fit the example shape.
template <typename T>
Graph<T> build_graph(const ModelInfo& info);

// Node whose output holds the per-example predictions (N x K).
inline const char* prediction_node() { return nodes::kAggregate; }

template <typename T>
void set_batch_norm_frozen(Graph<T>& graph, bool frozen);

/// Optimizer state carried in checkpoints.
template <typename T>
struct TrainingState {
  std::uint64_t step = 0;
  std::vector<Tensor<T>> optimizer_state;
  std::uint64_t optimizer_steps = 0;
  double best_error = 0;
  std::uint64_t best_step = 0;
  bool has_best = false;
};

// Binary container, little-endian:
//   "HFMODEL\0" | u32 version | u64 manifest bytes | manifest (JSON)
//   | u32 tensor count | tensors | u32 buffer count | index buffers
// Tensors are stored as name, element width (4 or 8), rank, extents, data.
template <typename T>
void save_model(const std::filesystem::path& path, Graph<T>& graph, const ModelInfo& info,
                const TrainingState<T>* state = nullptr);

template <typename T>
struct LoadedModel {
  ModelInfo info;
  Graph<T> graph;
  std::optional<TrainingState<T>> state;
};

// Throws DataError on a bad magic, unsupported version or truncated file.
template <typename T>
LoadedModel<T> load_model(const std::filesystem::path& path);

inline constexpr std::uint32_t kModelFormatVersion = 1;

}  // namespace hingeforest
