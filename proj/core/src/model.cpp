#include "hingeforest/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "hingeforest/hinge_forest.hpp"
#include "hingeforest/random.hpp"
#include "json.hpp"

namespace hingeforest {

ModelInfo describe_model(const ArchitectureSpec& architecture, const Dataset& train, std::uint64_t seed) {
  ModelInfo info;
  info.architecture = architecture;
  info.example_shape = train.example_shape();
  info.task = train.task;
  info.seed = seed;
  if (train.task == Task::kClassification) {
    info.class_names = train.class_names;
    info.outputs = train.num_classes();
    if (info.outputs < 2) throw ConfigError("classification needs at least two classes in the training data");
    if (architecture.forest.outputs && *architecture.forest.outputs != info.outputs) {
      throw ConfigError("architecture.forest.outputs is " + std::to_string(*architecture.forest.outputs) +
                        " but the data has " + std::to_string(info.outputs) + " classes");
    }
  } else {
    info.outputs = 1;
  }
  return info;
}

template <typename T>
Graph<T> build_graph(const ModelInfo& info) {
  const ArchitectureSpec& arch = info.architecture;
  const Shape& example = info.example_shape;
  if (example.empty()) throw ConfigError("examples must have at least one dimension");

  Graph<T> graph;
  graph.add_input(nodes::kData);
  graph.add_labels(nodes::kLabels);
  std::string previous = nodes::kData;
  std::size_t width = shape_size(example);

  auto flatten = [&] {
    graph.add(nodes::kFlatten, std::make_unique<Flatten<T>>(), {previous});
    previous = nodes::kFlatten;
  };

  switch (arch.features.type) {
    case FeatureLayerSpec::Type::kNone:
      if (example.size() > 1) flatten();
      break;
    case FeatureLayerSpec::Type::kInnerProduct: {
      if (example.size() > 1) flatten();
      auto layer = std::make_unique<InnerProduct<T>>(width, arch.features.count);
      Rng rng = make_rng(info.seed, 1);
      fill_normal(layer->weights(), rng, 0.0, 0.01);
      graph.add(nodes::kFeatures, std::move(layer), {previous});
      previous = nodes::kFeatures;
      width = arch.features.count;
      break;
    }
    case FeatureLayerSpec::Type::kConvolution: {
      if (example.size() != 3) {
        throw ConfigError("convolution needs C x H x W examples, got " + shape_string(example) +
                          "; use inner_product or none for flat features");
      }
      const std::size_t k = arch.features.kernel_size;
      if (example[1] < k || example[2] < k) {
        throw ConfigError("convolution kernel " + std::to_string(k) + " is larger than the " +
                          std::to_string(example[1]) + " x " + std::to_string(example[2]) + " image");
      }
      auto layer = std::make_unique<Conv2d<T>>(example[0], arch.features.kernels, k, arch.features.stride);
      Rng rng = make_rng(info.seed, 1);
      fill_normal(layer->kernels(), rng, 0.0, 0.01);
      graph.add(nodes::kFeatures, std::move(layer), {previous});
      previous = nodes::kFeatures;
      const std::size_t h = Conv2d<T>::output_extent(example[1], k, arch.features.stride);
      const std::size_t w = Conv2d<T>::output_extent(example[2], k, arch.features.stride);
      width = arch.features.kernels * h * w;
      flatten();
      break;
    }
  }

  graph.add(nodes::kBatchNorm,
            std::make_unique<RunningBatchNorm<T>>(width, arch.batch_norm_momentum, arch.batch_norm_epsilon), {previous});

  ForestShape shape;
  shape.kind = arch.forest.kind;
  shape.trees = arch.forest.trees;
  shape.depth = arch.forest.depth;
  shape.features = width;
  shape.outputs = info.outputs;
  const std::uint64_t forest_seed = make_rng(info.seed, 2)();
  graph.add(nodes::kForest, std::make_unique<HingeForest<T>>(initialize_forest<T>(shape, forest_seed)),
            {nodes::kBatchNorm});
  graph.add(nodes::kAggregate, std::make_unique<TreeMeanAggregate<T>>(), {nodes::kForest});

  if (info.task == Task::kClassification) {
    graph.add(nodes::kLoss, std::make_unique<SoftmaxCrossEntropy<T>>(), {nodes::kAggregate, nodes::kLabels});
  } else {
    graph.add(nodes::kLoss, std::make_unique<L2Loss<T>>(), {nodes::kAggregate, nodes::kLabels});
  }
  graph.set_loss(nodes::kLoss);
  return graph;
}

template <typename T>
void set_batch_norm_frozen(Graph<T>& graph, bool frozen) {
  for (const std::string& name : graph.node_names()) {
    if (graph.is_source(name)) continue;
    if (auto* bn = dynamic_cast<RunningBatchNorm<T>*>(&graph.node(name))) bn->set_frozen(frozen);
  }
}

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'H', 'F', 'M', 'O', 'D', 'E', 'L', '\0'};

template <typename U>
U to_little(U value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(U)];
    std::memcpy(bytes, &value, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(bytes[i], bytes[sizeof(U) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(U));
  }
  return value;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw DataError("cannot write '" + path.string() + "'");
  }

  template <typename U>
  void scalar(U value) {
    value = to_little(value);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(U));
  }

  void text(const std::string& s) {
    scalar<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  template <typename U>
  void array(std::span<const U> values) {
    if constexpr (std::endian::native == std::endian::little) {
      out_.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    } else {
      for (U v : values) scalar(v);
    }
  }

  void raw(const char* data, std::size_t size) { out_.write(data, static_cast<std::streamsize>(size)); }

  void close(const std::filesystem::path& path) {
    out_.close();
    if (!out_) throw DataError("failed while writing '" + path.string() + "'");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file '" + path.string() + "'");
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  template <typename U>
  U scalar() {
    U value;
    std::memcpy(&value, take(sizeof(U)), sizeof(U));
    return to_little(value);
  }

  std::string text() {
    const auto size = scalar<std::uint64_t>();
    const char* data = take(size);
    return std::string(data, size);
  }

  template <typename U>
  void array(std::span<U> out) {
    const char* data = take(out.size_bytes());
    std::memcpy(out.data(), data, out.size_bytes());
    if constexpr (std::endian::native == std::endian::big) {
      for (U& v : out) v = to_little(v);
    }
  }

  const char* take(std::size_t count) {
    if (count > bytes_.size() - offset_) {
      throw DataError("model file '" + path_.string() + "' is truncated at byte " + std::to_string(offset_));
    }
    const char* p = bytes_.data() + offset_;
    offset_ += count;
    return p;
  }

  bool at_end() const { return offset_ == bytes_.size(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::vector<char> bytes_;
  std::size_t offset_ = 0;
};

template <typename T>
void write_tensor(Writer& w, const std::string& name, const Tensor<T>& tensor) {
  w.text(name);
  w.scalar<std::uint32_t>(sizeof(T));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t e : tensor.shape()) w.scalar<std::uint64_t>(e);
  w.array<T>(tensor.values());
}

template <typename T>
std::pair<std::string, Tensor<T>> read_tensor(Reader& r) {
  std::string name = r.text();
  const auto width = r.scalar<std::uint32_t>();
  const auto rank = r.scalar<std::uint32_t>();
  if (rank > 8) throw DataError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = r.scalar<std::uint64_t>();
    if (e == 0 || e > (std::uint64_t{1} << 40)) throw DataError("tensor '" + name + "' has an invalid extent");
  }
  const std::size_t count = shape_size(shape);
  std::vector<T> values(count);
  if (width == 4) {
    std::vector<float> stored(count);
    r.array<float>(stored);
    std::copy(stored.begin(), stored.end(), values.begin());
  } else if (width == 8) {
    std::vector<double> stored(count);
    r.array<double>(stored);
    for (std::size_t i = 0; i < count; ++i) values[i] = static_cast<T>(stored[i]);
  } else {
    throw DataError("tensor '" + name + "' has unsupported element width " + std::to_string(width));
  }
  return {std::move(name), Tensor<T>(std::move(shape), std::move(values))};
}

json info_to_json(const ModelInfo& info) {
  return {{"architecture", json::parse(architecture_json(info.architecture))},
          {"example_shape", info.example_shape},
          {"outputs", info.outputs},
          {"task", std::string(to_string(info.task))},
          {"class_names", info.class_names},
          {"seed", info.seed}};
}

ModelInfo info_from_json(const json& manifest) {
  ModelInfo info;
  info.architecture = parse_architecture_json(manifest.at("architecture").dump());
  info.example_shape = manifest.at("example_shape").get<Shape>();
  info.outputs = manifest.at("outputs").get<std::size_t>();
  info.task = parse_task(manifest.at("task").get<std::string>());
  info.class_names = manifest.at("class_names").get<std::vector<std::string>>();
  info.seed = manifest.at("seed").get<std::uint64_t>();
  return info;
}

}  // namespace

template <typename T>
void save_model(const std::filesystem::path& path, Graph<T>& graph, const ModelInfo& info,
                const TrainingState<T>* state) {
  json manifest = info_to_json(info);
  manifest["format"] = "hingeforest-model";
  if (state != nullptr) {
    manifest["training"] = {{"step", state->step},
                            {"optimizer_steps", state->optimizer_steps},
                            {"optimizer_slots", state->optimizer_state.size()},
                            {"best_error", state->best_error},
                            {"best_step", state->best_step},
                            {"has_best", state->has_best}};
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path temp = path;
  temp += ".partial";
  {
    Writer w(temp);
    w.raw(kMagic, sizeof(kMagic));
    w.scalar<std::uint32_t>(kModelFormatVersion);
    w.text(manifest.dump());

    const auto params = graph.parameters();
    const std::size_t extra = state != nullptr ? state->optimizer_state.size() : 0;
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(params.size() + extra));
    for (const auto& ref : params) write_tensor(w, ref.qualified_name(), ref.parameter->value);
    for (std::size_t i = 0; i < extra; ++i) {
      write_tensor(w, "optimizer." + std::to_string(i), state->optimizer_state[i]);
    }

    auto buffers = graph.index_buffers();
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(buffers.size()));
    for (const auto& [node, buffer] : buffers) {
      w.text(node + "." + buffer.name);
      w.scalar<std::uint64_t>(buffer.values->size());
      w.array<std::int32_t>(*buffer.values);
    }
    w.close(temp);
  }
  std::filesystem::rename(temp, path);
}

template <typename T>
LoadedModel<T> load_model(const std::filesystem::path& path) {
  Reader r(path);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("'" + path.string() + "' is not a hinge forest model file");
  }
  const auto version = r.scalar<std::uint32_t>();
  if (version != kModelFormatVersion) {
    throw DataError("'" + path.string() + "' has format version " + std::to_string(version) + ", expected " +
                    std::to_string(kModelFormatVersion));
  }

  json manifest;
  ModelInfo info;
  try {
    manifest = json::parse(r.text());
    info = info_from_json(manifest);
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "' has a malformed manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("'" + path.string() + "' has a malformed manifest: " + e.what());
  }

  LoadedModel<T> model{info, build_graph<T>(info), std::nullopt};

  std::map<std::string, Tensor<T>> tensors;
  const auto tensor_count = r.scalar<std::uint32_t>();
  for (std::uint32_t i = 0; i < tensor_count; ++i) tensors.insert(read_tensor<T>(r));

  for (const auto& ref : model.graph.parameters()) {
    const auto it = tensors.find(ref.qualified_name());
    if (it == tensors.end()) throw DataError("model file lacks parameter '" + ref.qualified_name() + "'");
    if (it->second.shape() != ref.parameter->value.shape()) {
      throw DataError("parameter '" + ref.qualified_name() + "' has shape " + shape_string(it->second.shape()) +
                      ", expected " + shape_string(ref.parameter->value.shape()));
    }
    ref.parameter->value = std::move(it->second);
  }

  std::map<std::string, std::vector<std::int32_t>> buffers;
  const auto buffer_count = r.scalar<std::uint32_t>();
  for (std::uint32_t i = 0; i < buffer_count; ++i) {
    std::string name = r.text();
    const auto count = r.scalar<std::uint64_t>();
    if (count > (std::uint64_t{1} << 40)) throw DataError("index buffer '" + name + "' is implausibly large");
    std::vector<std::int32_t> values(count);
    r.array<std::int32_t>(values);
    buffers.emplace(std::move(name), std::move(values));
  }
  for (auto& [node, buffer] : model.graph.index_buffers()) {
    const auto it = buffers.find(node + "." + buffer.name);
    if (it == buffers.end() || it->second.size() != buffer.values->size()) {
      throw DataError("model file lacks a matching index buffer '" + node + "." + buffer.name + "'");
    }
    *buffer.values = std::move(it->second);
  }
  if (!r.at_end()) throw DataError("'" + path.string() + "' has trailing bytes");

  if (manifest.contains("training")) {
    const json& t = manifest["training"];
    TrainingState<T> state;
    state.step = t.at("step").get<std::uint64_t>();
    state.optimizer_steps = t.at("optimizer_steps").get<std::uint64_t>();
    state.best_error = t.at("best_error").get<double>();
    state.best_step = t.at("best_step").get<std::uint64_t>();
    state.has_best = t.at("has_best").get<bool>();
    const auto slots = t.at("optimizer_slots").get<std::size_t>();
    for (std::size_t i = 0; i < slots; ++i) {
      const auto it = tensors.find("optimizer." + std::to_string(i));
      if (it == tensors.end()) throw DataError("checkpoint lacks optimizer state " + std::to_string(i));
      state.optimizer_state.push_back(std::move(it->second));
    }
    model.state = std::move(state);
  }
  return model;
}

template Graph<float> build_graph<float>(const ModelInfo&);
template Graph<double> build_graph<double>(const ModelInfo&);
template void set_batch_norm_frozen<float>(Graph<float>&, bool);
template void set_batch_norm_frozen<double>(Graph<double>&, bool);
template void save_model<float>(const std::filesystem::path&, Graph<float>&, const ModelInfo&,
                                const TrainingState<float>*);
template void save_model<double>(const std::filesystem::path&, Graph<double>&, const ModelInfo&,
                                 const TrainingState<double>*);
template LoadedModel<float> load_model<float>(const std::filesystem::path&);
template LoadedModel<double> load_model<double>(const std::filesystem::path&);

}  // namespace hingeforest
