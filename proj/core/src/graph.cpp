#include "hingeforest/graph.hpp"

#include <algorithm>

namespace hingeforest {

template <typename T>
void Graph<T>::add_entry(std::string name, std::unique_ptr<Node<T>> node, std::vector<std::string> inputs) {
  if (name.empty()) throw ConfigError("node names must be non-empty");
  if (index_.contains(name)) throw ConfigError("duplicate node name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(node), std::move(inputs), {}, {}, {}});
  order_valid_ = false;
  forward_done_ = false;
}

template <typename T>
void Graph<T>::add_input(std::string name) {
  if (!input_.empty()) throw ConfigError("graph already has input '" + input_ + "'");
  input_ = name;
  add_entry(std::move(name), nullptr, {});
}

template <typename T>
void Graph<T>::add_labels(std::string name) {
  if (!labels_.empty()) throw ConfigError("graph already has labels '" + labels_ + "'");
  labels_ = name;
  add_entry(std::move(name), nullptr, {});
}

template <typename T>
Node<T>& Graph<T>::add(std::string name, std::unique_ptr<Node<T>> node, std::vector<std::string> inputs) {
  if (!node) throw ConfigError("node '" + name + "' has no implementation");
  Node<T>& ref = *node;
  add_entry(std::move(name), std::move(node), std::move(inputs));
  return ref;
}

template <typename T>
void Graph<T>::set_loss(std::string name) {
  index_of(name);
  loss_ = std::move(name);
}

template <typename T>
std::size_t Graph<T>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown node '" + name + "'");
  return it->second;
}

template <typename T>
const std::vector<std::size_t>& Graph<T>::order() const {
  if (order_valid_) return order_;

  const std::size_t n = entries_.size();
  std::vector<std::size_t> pending(n, 0);
  std::vector<std::vector<std::size_t>> consumers(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const std::string& input : entries_[i].inputs) {
      auto it = index_.find(input);
      if (it == index_.end()) {
        throw ConfigError("node '" + entries_[i].name + "' reads unknown node '" + input + "'");
      }
      consumers[it->second].push_back(i);
      ++pending[i];
    }
  }

  // Ready set kept sorted by insertion index for a stable tie-break.
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (pending[i] == 0) ready.push_back(i);
  }
  std::vector<std::size_t> result;
  result.reserve(n);
  while (!ready.empty()) {
    auto first = std::min_element(ready.begin(), ready.end());
    const std::size_t next = *first;
    ready.erase(first);
    result.push_back(next);
    for (std::size_t consumer : consumers[next]) {
      if (--pending[consumer] == 0) ready.push_back(consumer);
    }
  }
  if (result.size() != n) {
    // Any node left with pending inputs lies on or downstream of a cycle;
    // walk back along unresolved inputs until a node repeats.
    std::size_t node = 0;
    while (pending[node] == 0) ++node;
    std::vector<bool> seen(n, false);
    while (!seen[node]) {
      seen[node] = true;
      for (const std::string& input : entries_[node].inputs) {
        const std::size_t j = index_.at(input);
        if (pending[j] != 0) {
          node = j;
          break;
        }
      }
    }
    throw ConfigError("cycle detected in graph at node '" + entries_[node].name + "'");
  }

  for (const Entry& entry : entries_) {
    entry.input_index.clear();
    for (const std::string& input : entry.inputs) entry.input_index.push_back(index_.at(input));
  }
  order_ = std::move(result);
  order_valid_ = true;
  return order_;
}

template <typename T>
std::vector<std::string> Graph<T>::topological_order() const {
  std::vector<std::string> names;
  for (std::size_t i : order()) names.push_back(entries_[i].name);
  return names;
}

template <typename T>
const std::vector<std::string>& Graph<T>::inputs_of(const std::string& name) const {
  return entries_[index_of(name)].inputs;
}

template <typename T>
bool Graph<T>::is_source(const std::string& name) const {
  return !entries_[index_of(name)].op;
}

template <typename T>
std::vector<std::string> Graph<T>::node_names() const {
  std::vector<std::string> names;
  for (const Entry& e : entries_) names.push_back(e.name);
  return names;
}

template <typename T>
T Graph<T>::run_forward(const Tensor<T>& batch, Mode mode) {
  if (!labels_.empty()) throw ConfigError("graph expects labels in '" + labels_ + "'");
  return run_forward(batch, Tensor<T>(), mode);
}

template <typename T>
T Graph<T>::run_forward(const Tensor<T>& batch, const Tensor<T>& labels, Mode mode) {
  if (input_.empty()) throw ConfigError("graph has no input node");
  if (loss_.empty()) throw ConfigError("graph has no loss node");
  if (batch.rank() == 0 || batch.extent(0) == 0) throw ConfigError("batch must contain at least one example");
  if (!labels_.empty() && (labels.rank() == 0 || labels.extent(0) != batch.extent(0))) {
    throw ConfigError("batch has " + std::to_string(batch.extent(0)) + " examples but labels have " +
                      (labels.rank() == 0 ? std::string("none") : std::to_string(labels.extent(0))));
  }
  forward_done_ = false;

  const auto& sequence = order();
  entries_[index_of(input_)].output = batch;
  if (!labels_.empty()) entries_[index_of(labels_)].output = labels;

  std::vector<Shape> shapes;
  std::vector<const Tensor<T>*> inputs;
  for (std::size_t i : sequence) {
    Entry& entry = entries_[i];
    if (!entry.op) continue;
    shapes.clear();
    inputs.clear();
    for (std::size_t j : entry.input_index) {
      shapes.push_back(entries_[j].output.shape());
      inputs.push_back(&entries_[j].output);
    }
    Shape out_shape;
    try {
      out_shape = entry.op->output_shape(shapes);
    } catch (const ConfigError& e) {
      std::string sources;
      for (const std::string& name : entry.inputs) {
        sources += (sources.empty() ? "'" : ", '") + name + "' " + shape_string(entries_[index_.at(name)].output.shape());
      }
      throw ConfigError("node '" + entry.name + "' (" + entry.op->kind() + ") rejects input from " + sources +
                        ": " + e.what());
    }
    entry.output.resize(out_shape);
    entry.op->forward(inputs, entry.output, mode);
    if (!entry.output.all_finite()) {
      throw NumericFault(entry.name, "non-finite output produced by node '" + entry.name + "'");
    }
  }

  const Tensor<T>& loss = entries_[index_of(loss_)].output;
  if (loss.size() != 1) {
    throw ConfigError("loss node '" + loss_ + "' must produce a scalar, got " + shape_string(loss.shape()));
  }
  forward_done_ = true;
  return loss[0];
}

template <typename T>
void Graph<T>::run_backward() {
  if (!forward_done_) throw StateError("run_backward called before run_forward");
  const auto& sequence = order();

  for (Entry& entry : entries_) {
    entry.grad.resize(entry.output.shape());
    entry.grad.fill(T{0});
    if (entry.op) {
      for (Parameter<T>& p : entry.op->parameters()) p.grad.fill(T{0});
    }
  }
  entries_[index_of(loss_)].grad.fill(T{1});

  const std::size_t labels_index = labels_.empty() ? entries_.size() : index_of(labels_);
  std::vector<const Tensor<T>*> inputs;
  std::vector<Tensor<T>*> input_grads;
  for (auto it = sequence.rbegin(); it != sequence.rend(); ++it) {
    Entry& entry = entries_[*it];
    if (!entry.op) continue;
    inputs.clear();
    input_grads.clear();
    for (std::size_t j : entry.input_index) {
      inputs.push_back(&entries_[j].output);
      input_grads.push_back(j == labels_index ? nullptr : &entries_[j].grad);
    }
    entry.op->backward(inputs, entry.output, entry.grad, input_grads);

    for (const Parameter<T>& p : entry.op->parameters()) {
      if (!p.grad.all_finite()) {
        throw NumericFault(entry.name, "non-finite gradient for '" + entry.name + "." + p.name + "'");
      }
    }
    for (const Tensor<T>* g : input_grads) {
      if (g != nullptr && !g->all_finite()) {
        throw NumericFault(entry.name, "non-finite input gradient produced by node '" + entry.name + "'");
      }
    }
  }
}

template <typename T>
const Tensor<T>& Graph<T>::output(const std::string& name) const {
  return entries_[index_of(name)].output;
}

template <typename T>
const Tensor<T>& Graph<T>::gradient(const std::string& name) const {
  return entries_[index_of(name)].grad;
}

template <typename T>
Node<T>& Graph<T>::node(const std::string& name) {
  Entry& entry = entries_[index_of(name)];
  if (!entry.op) throw ConfigError("'" + name + "' is a source, not a layer");
  return *entry.op;
}

template <typename T>
const Node<T>& Graph<T>::node(const std::string& name) const {
  const Entry& entry = entries_[index_of(name)];
  if (!entry.op) throw ConfigError("'" + name + "' is a source, not a layer");
  return *entry.op;
}

template <typename T>
std::vector<typename Graph<T>::ParameterRef> Graph<T>::parameters() {
  std::vector<ParameterRef> refs;
  for (std::size_t i : order()) {
    Entry& entry = entries_[i];
    if (!entry.op) continue;
    for (Parameter<T>& p : entry.op->parameters()) refs.push_back({entry.name, &p});
  }
  return refs;
}

template <typename T>
std::vector<std::pair<std::string, IndexBuffer>> Graph<T>::index_buffers() {
  std::vector<std::pair<std::string, IndexBuffer>> buffers;
  for (std::size_t i : order()) {
    Entry& entry = entries_[i];
    if (!entry.op) continue;
    for (IndexBuffer b : entry.op->index_buffers()) buffers.emplace_back(entry.name, b);
  }
  return buffers;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace hingeforest
