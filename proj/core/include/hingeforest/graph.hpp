#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hingeforest/tensor.hpp"

namespace hingeforest {

enum class Mode { kTrain, kTest };

/// A named tensor owned by a node together with its gradient. Non-learnable
/// parameters (running statistics) are persisted but never optimized.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool learnable = true;

  Parameter(std::string n, Tensor<T> v, bool is_learnable = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), learnable(is_learnable) {}
};

/// Integer state that is fixed at initialization (e.g. forest feature indices).
struct IndexBuffer {
  std::string name;
  std::vector<std::int32_t>* values;
};

/// A layer in the computation graph. Implementations validate their input
/// shapes in output_shape() and accumulate (+=) into the input gradients
/// and parameter gradients in backward().
template <typename T>
class Node {
 public:
  virtual ~Node() = default;

  virtual std::string kind() const = 0;

  // Throws ConfigError when the inputs are not acceptable.
  virtual Shape output_shape(std::span<const Shape> inputs) const = 0;

  virtual void forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode mode) = 0;

  // input_grads entries may be null for inputs that do not need gradients.
  virtual void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output,
                        const Tensor<T>& output_grad, std::span<Tensor<T>* const> input_grads) = 0;

  virtual std::span<Parameter<T>> parameters() { return {}; }
  virtual std::vector<IndexBuffer> index_buffers() { return {}; }
};

/// Directed acyclic graph of layers with a single batch input, an optional
/// label input and one scalar loss node.
template <typename T>
class Graph {
 public:
  struct ParameterRef {
    std::string node;
    Parameter<T>* parameter;

    std::string qualified_name() const { return node + "." + parameter->name; }
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  void add_input(std::string name);
  void add_labels(std::string name);
  Node<T>& add(std::string name, std::unique_ptr<Node<T>> node, std::vector<std::string> inputs);
  void set_loss(std::string name);

  // Kahn's algorithm; among ready nodes the earliest inserted goes first.
  std::vector<std::string> topological_order() const;

  T run_forward(const Tensor<T>& batch, const Tensor<T>& labels, Mode mode = Mode::kTrain);
  T run_forward(const Tensor<T>& batch, Mode mode = Mode::kTrain);
  void run_backward();

  bool contains(const std::string& name) const { return index_.contains(name); }
  const Tensor<T>& output(const std::string& name) const;
  const Tensor<T>& gradient(const std::string& name) const;
  Node<T>& node(const std::string& name);
  const Node<T>& node(const std::string& name) const;

  template <typename N>
  N& node_as(const std::string& name) {
    auto* typed = dynamic_cast<N*>(&node(name));
    if (typed == nullptr) throw ConfigError("node '" + name + "' has unexpected kind");
    return *typed;
  }

  // Parameters of every node in topological order.
  std::vector<ParameterRef> parameters();
  std::vector<std::pair<std::string, IndexBuffer>> index_buffers();

  const std::string& loss_name() const { return loss_; }
  const std::string& input_name() const { return input_; }
  std::vector<std::string> node_names() const;
  const std::vector<std::string>& inputs_of(const std::string& name) const;
  bool is_source(const std::string& name) const;

 private:
  struct Entry {
    std::string name;
    std::unique_ptr<Node<T>> op;  // null for sources
    std::vector<std::string> inputs;
    mutable std::vector<std::size_t> input_index;
    Tensor<T> output;
    Tensor<T> grad;
  };

  std::size_t index_of(const std::string& name) const;
  const std::vector<std::size_t>& order() const;
  void add_entry(std::string name, std::unique_ptr<Node<T>> node, std::vector<std::string> inputs);

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string input_;
  std::string labels_;
  std::string loss_;
  mutable std::vector<std::size_t> order_;
  mutable bool order_valid_ = false;
  bool forward_done_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace hingeforest
