#include "hingeforest/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "hingeforest/hinge_forest.hpp"
#include "hingeforest/layers.hpp"
#include "hingeforest/model.hpp"
#include "hingeforest/random.hpp"
#include "hingeforest/trainer.hpp"

namespace hingeforest {

double gradcheck_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic));
}

namespace {

struct Target {
  std::string name;
  std::span<double> values;
  Tensor<double> grad;
};

// Routes taken by every forest in the graph, example-major.
struct Routes {
  std::vector<std::vector<TraversalResult<double>>> forests;
};

Routes capture_routes(Graph<double>& graph, const std::vector<std::string>& forest_nodes) {
  Routes routes;
  for (const std::string& name : forest_nodes) {
    routes.forests.push_back(graph.node_as<HingeForest<double>>(name).traversals());
  }
  return routes;
}

// True when the perturbation moved the decision structure or brought a
// margin that depends on the coordinate close to its kink.
bool crosses_kink(const Routes& plus, const Routes& minus, double limit) {
  for (std::size_t f = 0; f < plus.forests.size(); ++f) {
    const auto& a = plus.forests[f];
    const auto& b = minus.forests[f];
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].leaf != b[i].leaf || a[i].vertex != b[i].vertex) return true;
      if (a[i].margin != b[i].margin && std::min(std::abs(a[i].margin), std::abs(b[i].margin)) < limit) return true;
    }
  }
  return false;
}

}  // namespace

GradcheckReport gradient_check(Graph<double>& graph, const Tensor<double>& batch, const Tensor<double>& labels,
                               const GradcheckOptions& options) {
  if (options.samples == 0) throw ConfigError("gradcheck needs at least one sample");
  if (!(options.step > 0.0)) throw ConfigError("gradcheck step must be positive");

  std::vector<std::string> forest_nodes;
  for (const std::string& name : graph.node_names()) {
    if (graph.is_source(name)) continue;
    if (dynamic_cast<HingeForest<double>*>(&graph.node(name)) != nullptr) forest_nodes.push_back(name);
  }

  Tensor<double> input = batch;
  auto loss = [&] { return graph.run_forward(input, labels, Mode::kTest); };

  loss();
  graph.run_backward();
  std::vector<Target> targets;
  for (const auto& ref : graph.parameters()) {
    if (!ref.parameter->learnable) continue;
    targets.push_back({ref.qualified_name(), ref.parameter->value.values(), ref.parameter->grad});
  }
  if (options.include_input) targets.push_back({graph.input_name(), input.values(), graph.gradient(graph.input_name())});
  if (targets.empty()) throw ConfigError("graph has nothing to differentiate");

  GradcheckReport report;
  report.tolerance = options.tolerance;
  Rng rng = make_rng(options.seed, 7);
  const double h = options.step;
  const std::size_t max_attempts = options.samples * 20;
  for (std::size_t attempt = 0; attempt < max_attempts && report.checked < options.samples; ++attempt) {
    Target& target = targets[attempt % targets.size()];
    std::uniform_int_distribution<std::size_t> pick(0, target.values.size() - 1);
    const std::size_t index = pick(rng);
    double& value = target.values[index];
    const double original = value;

    value = original + h;
    const double up = loss();
    const Routes plus = capture_routes(graph, forest_nodes);
    value = original - h;
    const double down = loss();
    const Routes minus = capture_routes(graph, forest_nodes);
    value = original;

    if (crosses_kink(plus, minus, options.kink_factor * h)) {
      ++report.skipped;
      continue;
    }
    GradcheckEntry entry{target.name, index, target.grad[index], (up - down) / (2.0 * h), 0.0};
    entry.relative_error = gradcheck_relative_error(entry.analytic, entry.numeric);
    ++report.checked;
    if (!report.worst || entry.relative_error > report.max_relative_error) {
      report.max_relative_error = entry.relative_error;
      report.worst = entry;
    }
    if (!(entry.relative_error < options.tolerance)) report.failures.push_back(entry);
  }
  return report;
}

void calibrate_batch_norm(Graph<double>& graph, const Tensor<double>& batch, const Tensor<double>& labels) {
  graph.run_forward(batch, labels, Mode::kTest);
  for (const std::string& name : graph.node_names()) {
    if (graph.is_source(name)) continue;
    auto* bn = dynamic_cast<RunningBatchNorm<double>*>(&graph.node(name));
    if (bn == nullptr) continue;
    const Tensor<double>& x = graph.output(graph.inputs_of(name).front());
    const std::size_t rows = x.extent(0);
    const std::size_t width = x.size() / rows;
    for (std::size_t f = 0; f < width; ++f) {
      double sum = 0;
      for (std::size_t n = 0; n < rows; ++n) sum += x[n * width + f];
      const double mean = sum / static_cast<double>(rows);
      double squares = 0;
      for (std::size_t n = 0; n < rows; ++n) squares += (x[n * width + f] - mean) * (x[n * width + f] - mean);
      bn->mean()[f] = mean;
      bn->stddev()[f] = std::sqrt(squares / static_cast<double>(rows));
    }
  }
  set_batch_norm_frozen(graph, true);
}

GradcheckReport gradcheck_config(const ExperimentConfig& config, const GradcheckOptions& options) {
  const PreparedData data = prepare_data(config.dataset);
  const ModelInfo info = describe_model(config.architecture, data.train, config.run.seed);
  Graph<double> graph = build_graph<double>(info);

  MinibatchIterator batches(data.train, options.batch_size, make_rng(options.seed, 3)());
  const MinibatchIterator::Batch batch = batches.next();
  const Tensor<double> features = batch.features.cast<double>();
  const Tensor<double> labels = batch.labels.cast<double>();
  calibrate_batch_norm(graph, features, labels);
  return gradient_check(graph, features, labels, options);
}

}  // namespace hingeforest
