#include "hingeforest/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "hingeforest/metrics.hpp"
#include "hingeforest/optimizers.hpp"

namespace hingeforest {

const Dataset* PreparedData::find(SplitTag tag) const {
  switch (tag) {
    case SplitTag::kTrain:
      return &train;
    case SplitTag::kValidation:
      return validation ? &*validation : nullptr;
    case SplitTag::kTest:
      return test ? &*test : nullptr;
    case SplitTag::kAll:
      return nullptr;
  }
  return nullptr;
}

namespace {

// Cuts `data` into blocks and hands them to the train, validation and test
// roles, starting at block `rotate`.
std::vector<Dataset> assign_roles(const Dataset& data, const DatasetSpec& spec) {
  if (spec.fractions.empty()) {
    Dataset all = data;
    all.tag = SplitTag::kTrain;
    return {std::move(all)};
  }
  std::vector<Dataset> blocks = shuffle_split(data, spec.fractions, spec.seed);
  static constexpr SplitTag kRoles[] = {SplitTag::kTrain, SplitTag::kValidation, SplitTag::kTest};
  std::vector<Dataset> roles;
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    Dataset block = blocks[(j + spec.rotate) % blocks.size()];
    block.tag = kRoles[j];
    roles.push_back(std::move(block));
  }
  return roles;
}

}  // namespace

PreparedData prepare_data(const DatasetSpec& spec) {
  Dataset source;
  std::optional<Dataset> test_file;
  if (spec.format == DatasetSpec::Format::kCsv) {
    source = load_csv(spec.path, spec.csv);
    if (spec.test_path) {
      CsvOptions options = spec.csv;
      options.class_names = source.class_names;
      test_file = load_csv(*spec.test_path, options);
    }
  } else {
    source = load_idx(spec.train_images, spec.train_labels);
    test_file = load_idx(spec.test_images, spec.test_labels);
    if (test_file->num_classes() > source.num_classes()) {
      throw DataError("test images contain labels absent from the training images");
    }
    test_file->class_names = source.class_names;
  }
  if (test_file && test_file->example_shape() != source.example_shape()) {
    throw DataError("test examples have shape " + shape_string(test_file->example_shape()) + ", training examples " +
                    shape_string(source.example_shape()));
  }

  std::vector<Dataset> roles = assign_roles(source, spec);
  PreparedData data{std::move(roles[0]), std::nullopt, std::nullopt};
  if (roles.size() > 1) data.validation = std::move(roles[1]);
  if (roles.size() > 2) data.test = std::move(roles[2]);
  if (test_file) {
    test_file->tag = SplitTag::kTest;
    data.test = std::move(*test_file);
  }
  return data;
}

template <typename T>
Evaluation evaluate(Graph<T>& graph, const Dataset& data, Task task, std::size_t chunk) {
  if (data.size() == 0) throw ConfigError("cannot evaluate an empty dataset");
  if (chunk == 0) chunk = data.size();
  double loss_sum = 0;
  std::size_t wrong = 0;
  RSquared r2;
  for (std::size_t first = 0; first < data.size(); first += chunk) {
    const std::size_t count = std::min(chunk, data.size() - first);
    const Tensor<T> features = slice_rows(data.features, first, count).template cast<T>();
    const Tensor<T> labels = slice_rows(data.labels, first, count).template cast<T>();
    const T loss = graph.run_forward(features, labels, Mode::kTest);
    loss_sum += static_cast<double>(loss) * static_cast<double>(count);
    const Tensor<T>& scores = graph.output(prediction_node());
    if (task == Task::kClassification) {
      const Tensor<float> chunk_labels = slice_rows(data.labels, first, count);
      wrong += static_cast<std::size_t>(std::lround(misclassification_rate(scores, chunk_labels) * count));
    } else {
      for (std::size_t i = 0; i < count; ++i) r2.add(static_cast<double>(scores[i]), data.labels[first + i]);
    }
  }
  Evaluation result;
  result.loss = loss_sum / static_cast<double>(data.size());
  if (task == Task::kClassification) {
    result.error = static_cast<double>(wrong) / static_cast<double>(data.size());
  } else {
    result.r_squared = r2.value();
    result.error = 1.0 - *result.r_squared;
  }
  return result;
}

std::string format_metric(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.9g", value);
  return buffer;
}

namespace {

using Scalar = float;

constexpr const char* kMetricsHeader = "step\tsplit\tloss\terror";

class MetricsLog {
 public:
  MetricsLog(const std::filesystem::path& path, std::optional<std::uint64_t> keep_through) {
    std::vector<std::string> kept;
    if (keep_through) {
      std::ifstream in(path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line == kMetricsHeader) continue;
        const std::uint64_t step = std::stoull(line.substr(0, line.find('\t')));
        if (step <= *keep_through) kept.push_back(line);
      }
    }
    out_.open(path, std::ios::trunc);
    if (!out_) throw ConfigError("cannot write metrics file '" + path.string() + "'");
    out_ << kMetricsHeader << '\n';
    for (const std::string& line : kept) out_ << line << '\n';
    out_.flush();
  }

  void row(std::uint64_t step, SplitTag split, const Evaluation& e, std::ostream* echo) {
    std::ostringstream line;
    line << step << '\t' << to_string(split) << '\t' << format_metric(e.loss) << '\t' << format_metric(e.error);
    out_ << line.str() << '\n';
    out_.flush();
    if (echo != nullptr) *echo << line.str() << '\n';
  }

 private:
  std::ofstream out_;
};

// Accumulates minibatch statistics between evaluation points.
struct TrainingWindow {
  double loss_sum = 0;
  std::size_t examples = 0;
  std::size_t wrong = 0;
  RSquared r2;

  void add(double loss, const Tensor<Scalar>& scores, const Tensor<float>& labels, Task task) {
    const std::size_t n = labels.size();
    loss_sum += loss * static_cast<double>(n);
    examples += n;
    if (task == Task::kClassification) {
      wrong += static_cast<std::size_t>(std::lround(misclassification_rate(scores, labels) * n));
    } else {
      for (std::size_t i = 0; i < n; ++i) r2.add(scores[i], labels[i]);
    }
  }

  Evaluation result(Task task) const {
    Evaluation e;
    e.loss = loss_sum / static_cast<double>(examples);
    if (task == Task::kClassification) {
      e.error = static_cast<double>(wrong) / static_cast<double>(examples);
    } else {
      e.r_squared = r2.value();
      e.error = 1.0 - *e.r_squared;
    }
    return e;
  }
};

}  // namespace

TrainSummary train(const ExperimentConfig& config, const TrainOptions& options) {
  const PreparedData data = prepare_data(config.dataset);
  return train(config, data, options);
}

TrainSummary train(const ExperimentConfig& config, const PreparedData& data, const TrainOptions& options) {
  const RunSpec& run = config.run;
  const Task task = data.train.task;
  const SplitTag selection_tag = run.selection == Selection::kValidation ? SplitTag::kValidation : SplitTag::kTest;
  const Dataset* selection = data.find(selection_tag);
  if (selection == nullptr) {
    throw ConfigError(std::string("run.selection is ") + std::string(to_string(selection_tag)) +
                      " but the data has no such split");
  }

  const std::filesystem::path& dir = config.output_dir;
  std::filesystem::create_directories(dir);
  TrainSummary summary;
  summary.metrics_path = dir / "metrics.tsv";
  summary.best_model_path = dir / "model_best.bin";
  summary.final_model_path = dir / "model_final.bin";
  const std::filesystem::path checkpoint_path = dir / "checkpoint.bin";
  {
    std::ofstream echo(dir / "config.json", std::ios::trunc);
    echo << canonical_config(config) << '\n';
  }

  const ModelInfo info = describe_model(config.architecture, data.train, run.seed);
  Graph<Scalar> graph = build_graph<Scalar>(info);
  Optimizer<Scalar> optimizer(config.optimizer);
  MinibatchIterator batches(data.train, run.batch_size, make_rng(run.seed, 3)());
  if (options.log != nullptr && !batches.warning().empty()) *options.log << "warning: " << batches.warning() << '\n';

  TrainingState<Scalar> state;
  if (options.resume) {
    if (!std::filesystem::exists(checkpoint_path)) {
      throw ConfigError("cannot resume: no checkpoint at '" + checkpoint_path.string() + "'");
    }
    LoadedModel<Scalar> loaded = load_model<Scalar>(checkpoint_path);
    if (!loaded.state) throw DataError("'" + checkpoint_path.string() + "' carries no training state");
    if (loaded.info.example_shape != info.example_shape || loaded.info.outputs != info.outputs ||
        architecture_json(loaded.info.architecture) != architecture_json(info.architecture)) {
      throw ConfigError("checkpoint architecture does not match the config");
    }
    graph = std::move(loaded.graph);
    state = std::move(*loaded.state);
    optimizer.restore(state.optimizer_state, state.optimizer_steps);
    batches.seek(state.step);
  }
  MetricsLog metrics(summary.metrics_path,
                     options.resume ? std::optional<std::uint64_t>(state.step) : std::nullopt);

  TrainingWindow window;
  auto evaluation_point = [&](std::uint64_t step) {
    if (window.examples > 0) metrics.row(step, SplitTag::kTrain, window.result(task), options.log);
    window = TrainingWindow{};
    Evaluation selected;
    for (const SplitTag tag : {SplitTag::kValidation, SplitTag::kTest}) {
      const Dataset* split = data.find(tag);
      if (split == nullptr) continue;
      const Evaluation e = evaluate(graph, *split, task);
      metrics.row(step, tag, e, options.log);
      if (tag == selection_tag) selected = e;
    }
    if (!state.has_best || selected.error < state.best_error) {
      state.has_best = true;
      state.best_error = selected.error;
      state.best_step = step;
      save_model(summary.best_model_path, graph, info);
    }
    state.step = step;
    state.optimizer_state = optimizer.state();
    state.optimizer_steps = optimizer.steps();
    save_model(checkpoint_path, graph, info, &state);
    return selected;
  };

  std::uint64_t step = state.step;
  if (!options.resume) summary.final_selection = evaluation_point(0);

  while (step < run.max_steps) {
    MinibatchIterator::Batch batch = batches.next();
    const Tensor<Scalar> features = batch.features.cast<Scalar>();
    const Tensor<Scalar> labels = batch.labels.cast<Scalar>();
    const std::uint64_t current = step + 1;
    try {
      const Scalar loss = graph.run_forward(features, labels, Mode::kTrain);
      if (!std::isfinite(loss)) throw NumericFault(graph.loss_name(), "loss is not finite");
      graph.run_backward();
      optimizer.step(graph);
      window.add(loss, graph.output(prediction_node()), batch.labels, task);
    } catch (const NumericFault& fault) {
      throw NumericFault(fault.node(), "training step " + std::to_string(current) + ": " + fault.what() +
                                           " (node '" + fault.node() + "')");
    }
    step = current;
    if (step % run.eval_interval == 0 || step == run.max_steps) summary.final_selection = evaluation_point(step);
  }

  save_model(summary.final_model_path, graph, info);
  summary.steps = step;
  summary.best_step = state.best_step;
  summary.best_selection_error = state.best_error;

  if (data.test) {
    summary.final_test = evaluate(graph, *data.test, task);
    LoadedModel<Scalar> best = load_model<Scalar>(summary.best_model_path);
    summary.best_test = evaluate(best.graph, *data.test, task);
  }
  return summary;
}

template Evaluation evaluate<float>(Graph<float>&, const Dataset&, Task, std::size_t);
template Evaluation evaluate<double>(Graph<double>&, const Dataset&, Task, std::size_t);

}  // namespace hingeforest
