#include "hingeforest/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hingeforest {
namespace {

using nlohmann::json;

// Walks one JSON object, recording every problem instead of stopping at the
// first one. Keys that are never read are reported as unknown.
class Section {
 public:
  Section(const json* node, std::string path, std::vector<std::string>& errors)
      : node_(node), path_(std::move(path)), errors_(&errors) {
    if (node_ != nullptr && !node_->is_object()) {
      error("", "must be an object");
      node_ = nullptr;
    }
  }

  ~Section() {
    if (node_ == nullptr) return;
    for (const auto& [key, value] : node_->items()) {
      if (!seen_.contains(key)) error(key, "is not a recognized key");
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    const json* sub = has(key) ? &node_->at(key) : nullptr;
    return Section(sub, qualified(key), *errors_);
  }

  bool has(const std::string& key) const { return node_ != nullptr && node_->contains(key); }

  template <typename V>
  void read(const std::string& key, V& out) {
    seen_.insert(key);
    if (!has(key)) return;
    try {
      out = node_->at(key).get<V>();
    } catch (const json::exception&) {
      error(key, "has the wrong type");
    }
  }

  std::size_t read_count(const std::string& key, std::size_t fallback, bool allow_zero = false) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const json& v = node_->at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < (allow_zero ? 0 : 1)) {
      error(key, allow_zero ? "must be a non-negative integer" : "must be a positive integer");
      return fallback;
    }
    return v.get<std::size_t>();
  }

  double read_number(const std::string& key, double fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const json& v = node_->at(key);
    if (!v.is_number()) {
      error(key, "must be a number");
      return fallback;
    }
    return v.get<double>();
  }

  std::string read_string(const std::string& key, std::string fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const json& v = node_->at(key);
    if (!v.is_string()) {
      error(key, "must be a string");
      return fallback;
    }
    return v.get<std::string>();
  }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    return has(key) ? &node_->at(key) : nullptr;
  }

  void error(const std::string& key, const std::string& message) {
    errors_->push_back(qualified(key) + " " + message);
  }

  std::string qualified(const std::string& key) const {
    if (key.empty()) return path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json* node_;
  std::string path_;
  std::vector<std::string>* errors_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& text) {
  std::filesystem::path p(text);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

template <typename Fn>
void guarded(std::vector<std::string>& errors, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    errors.emplace_back(e.what());
  }
}

void parse_dataset(Section s, const std::filesystem::path& base, bool check_paths, DatasetSpec& d,
                   std::vector<std::string>& errors) {
  const std::string format = s.read_string("format", "csv");
  if (format == "csv") {
    d.format = DatasetSpec::Format::kCsv;
  } else if (format == "idx") {
    d.format = DatasetSpec::Format::kIdx;
  } else {
    s.error("format", "must be 'csv' or 'idx'");
  }

  auto path_field = [&](const std::string& key, bool required, std::filesystem::path& out) {
    const std::string text = s.read_string(key, "");
    if (text.empty()) {
      if (required) s.error(key, "is required");
      return false;
    }
    out = resolve(base, text);
    if (check_paths && !std::filesystem::exists(out)) s.error(key, "refers to missing file '" + out.string() + "'");
    return true;
  };

  const bool csv = d.format == DatasetSpec::Format::kCsv;
  path_field("path", csv, d.path);
  std::filesystem::path test_path;
  if (path_field("test_path", false, test_path)) d.test_path = test_path;
  path_field("train_images", !csv, d.train_images);
  path_field("train_labels", !csv, d.train_labels);
  path_field("test_images", !csv, d.test_images);
  path_field("test_labels", !csv, d.test_labels);

  if (const json* label = s.raw("label_column")) {
    if (label->is_number_integer()) {
      d.csv.label_column = label->get<std::int64_t>();
    } else if (label->is_string()) {
      d.csv.label_column = label->get<std::string>();
    } else {
      s.error("label_column", "must be an integer index or a column name");
    }
  }
  s.read("has_header", d.csv.has_header);
  const std::string delimiter = s.read_string("delimiter", ",");
  if (delimiter.size() != 1) {
    s.error("delimiter", "must be a single character");
  } else {
    d.csv.delimiter = delimiter[0];
  }
  guarded(errors, [&] { d.csv.task = parse_task(s.read_string("task", "classification")); });
  if (!csv && d.csv.task != Task::kClassification) s.error("task", "must be classification for idx data");
  s.read("categorical_columns", d.csv.categorical_columns);

  if (s.has("fractions")) {
    s.read("fractions", d.fractions);
  } else if (csv) {
    d.fractions = d.test_path ? std::vector<double>{0.8, 0.2} : std::vector<double>{0.6, 0.2, 0.2};
  }
  double total = 0;
  for (double f : d.fractions) {
    if (!(f > 0.0)) s.error("fractions", "entries must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-9) s.error("fractions", "must sum to at most 1");
  const std::size_t max_roles = (csv && !d.test_path) ? 3 : 2;
  if (d.fractions.size() > max_roles) {
    s.error("fractions", "may list at most " + std::to_string(max_roles) + " splits for this dataset");
  }
  d.rotate = s.read_count("rotate", 0, true);
  if (d.rotate > 0 && d.fractions.size() < 2) s.error("rotate", "requires at least two splits");
  d.seed = s.read_count("seed", 1, true);
}

void parse_architecture(Section s, ArchitectureSpec& a, std::vector<std::string>& errors) {
  {
    Section f = s.child("features");
    const std::string type = f.read_string("type", "inner_product");
    if (type == "inner_product") {
      a.features.type = FeatureLayerSpec::Type::kInnerProduct;
    } else if (type == "convolution") {
      a.features.type = FeatureLayerSpec::Type::kConvolution;
    } else if (type == "none") {
      a.features.type = FeatureLayerSpec::Type::kNone;
    } else {
      f.error("type", "must be inner_product, convolution or none");
    }
    a.features.count = f.read_count("count", a.features.count);
    a.features.kernels = f.read_count("kernels", a.features.kernels);
    a.features.kernel_size = f.read_count("kernel_size", a.features.kernel_size);
    a.features.stride = f.read_count("stride", a.features.stride);
  }
  {
    Section f = s.child("forest");
    if (!s.has("forest")) s.error("forest", "is required");
    guarded(errors, [&] { a.forest.kind = parse_forest_kind(f.read_string("kind", "tree")); });
    if (!f.has("trees") && s.has("forest")) f.error("trees", "is required");
    if (!f.has("depth") && s.has("forest")) f.error("depth", "is required");
    a.forest.trees = f.read_count("trees", 0);
    a.forest.depth = f.read_count("depth", 0);
    if (a.forest.depth > 24) f.error("depth", "must not exceed 24");
    if (f.has("outputs")) a.forest.outputs = f.read_count("outputs", 1);
  }
  {
    Section b = s.child("batch_norm");
    a.batch_norm_momentum = b.read_number("momentum", a.batch_norm_momentum);
    a.batch_norm_epsilon = b.read_number("epsilon", a.batch_norm_epsilon);
    if (!(a.batch_norm_momentum > 0.0 && a.batch_norm_momentum <= 1.0)) b.error("momentum", "must lie in (0, 1]");
    if (!(a.batch_norm_epsilon > 0.0)) b.error("epsilon", "must be positive");
  }
}

double default_learning_rate(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kAdam:
      return 0.005;
    case OptimizerKind::kAdaGrad:
      return 0.05;
    case OptimizerKind::kSgd:
      return 0.01;
  }
  return 0.01;
}

void parse_optimizer(Section s, OptimizerSettings& o, std::vector<std::string>& errors) {
  guarded(errors, [&] { o.kind = parse_optimizer_kind(s.read_string("name", "adagrad")); });
  o.learning_rate = s.read_number("learning_rate", default_learning_rate(o.kind));
  o.beta1 = s.read_number("beta1", o.beta1);
  o.beta2 = s.read_number("beta2", o.beta2);
  o.epsilon = s.read_number("epsilon", o.epsilon);
  o.weight_decay = s.read_number("weight_decay", o.weight_decay);
  if (!(o.learning_rate > 0.0)) s.error("learning_rate", "must be positive");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0)) s.error("beta1", "must lie in [0, 1)");
  if (!(o.beta2 >= 0.0 && o.beta2 < 1.0)) s.error("beta2", "must lie in [0, 1)");
  if (!(o.epsilon > 0.0)) s.error("epsilon", "must be positive");
  if (!(o.weight_decay >= 0.0)) s.error("weight_decay", "must be non-negative");
}

void parse_run(Section s, RunSpec& r) {
  r.batch_size = s.read_count("batch_size", r.batch_size);
  r.max_steps = s.read_count("max_steps", r.max_steps, true);
  r.eval_interval = s.read_count("eval_interval", r.eval_interval);
  r.seed = s.read_count("seed", r.seed, true);
  const std::string selection = s.read_string("selection", "validation");
  if (selection == "validation") {
    r.selection = Selection::kValidation;
  } else if (selection == "test") {
    r.selection = Selection::kTest;
  } else {
    s.error("selection", "must be 'validation' or 'test'");
  }
}

bool has_validation_split(const DatasetSpec& d) { return d.fractions.size() >= 2; }

bool has_test_split(const DatasetSpec& d) {
  if (d.format == DatasetSpec::Format::kIdx || d.test_path) return true;
  return d.fractions.size() >= 3;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir,
                                   bool check_paths) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  ExperimentConfig config;
  std::vector<std::string> errors;
  {
    Section top(&root, "", errors);
    if (!top.has("dataset")) top.error("dataset", "is required");
    if (!top.has("architecture")) top.error("architecture", "is required");
    parse_dataset(top.child("dataset"), base_dir, check_paths, config.dataset, errors);
    parse_architecture(top.child("architecture"), config.architecture, errors);
    parse_optimizer(top.child("optimizer"), config.optimizer, errors);
    parse_run(top.child("run"), config.run);
    Section output = top.child("output");
    config.output_dir = resolve(base_dir, output.read_string("dir", config.output_dir.string()));
  }

  const ArchitectureSpec& arch = config.architecture;
  if (arch.features.type == FeatureLayerSpec::Type::kConvolution &&
      config.dataset.format != DatasetSpec::Format::kIdx) {
    errors.emplace_back("architecture.features.type convolution requires image (idx) data");
  }
  if (config.dataset.task() == Task::kRegression && arch.forest.outputs && *arch.forest.outputs != 1) {
    errors.emplace_back("architecture.forest.outputs must be 1 for regression");
  }
  if (config.run.selection == Selection::kValidation && !has_validation_split(config.dataset)) {
    errors.emplace_back("run.selection validation requires a validation split in dataset.fractions");
  }
  if (config.run.selection == Selection::kTest && !has_test_split(config.dataset)) {
    errors.emplace_back("run.selection test requires a test split");
  }

  if (!errors.empty()) {
    std::ostringstream message;
    message << "invalid configuration (" << errors.size() << " problem" << (errors.size() == 1 ? "" : "s") << "):";
    for (const std::string& e : errors) message << "\n  - " << e;
    throw ConfigError(message.str());
  }
  return config;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path, bool check_paths) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path.parent_path(), check_paths);
}

namespace {

json architecture_to_json(const ArchitectureSpec& a) {
  json features;
  switch (a.features.type) {
    case FeatureLayerSpec::Type::kNone:
      features = {{"type", "none"}};
      break;
    case FeatureLayerSpec::Type::kInnerProduct:
      features = {{"type", "inner_product"}, {"count", a.features.count}};
      break;
    case FeatureLayerSpec::Type::kConvolution:
      features = {{"type", "convolution"},
                  {"kernels", a.features.kernels},
                  {"kernel_size", a.features.kernel_size},
                  {"stride", a.features.stride}};
      break;
  }
  json forest = {{"kind", std::string(to_string(a.forest.kind))}, {"trees", a.forest.trees}, {"depth", a.forest.depth}};
  if (a.forest.outputs) forest["outputs"] = *a.forest.outputs;
  return {{"features", features},
          {"forest", forest},
          {"batch_norm", {{"momentum", a.batch_norm_momentum}, {"epsilon", a.batch_norm_epsilon}}}};
}

}  // namespace

std::string architecture_json(const ArchitectureSpec& spec) { return architecture_to_json(spec).dump(); }

ArchitectureSpec parse_architecture_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("architecture is not valid JSON: ") + e.what());
  }
  ArchitectureSpec spec;
  std::vector<std::string> errors;
  parse_architecture(Section(&root, "architecture", errors), spec, errors);
  if (!errors.empty()) throw ConfigError("invalid architecture: " + errors.front());
  return spec;
}

std::string canonical_config(const ExperimentConfig& config) {
  const DatasetSpec& d = config.dataset;
  json dataset;
  dataset["format"] = d.format == DatasetSpec::Format::kCsv ? "csv" : "idx";
  if (d.format == DatasetSpec::Format::kCsv) {
    dataset["path"] = d.path.string();
    if (d.test_path) dataset["test_path"] = d.test_path->string();
    if (const auto* index = std::get_if<std::int64_t>(&d.csv.label_column)) {
      dataset["label_column"] = *index;
    } else {
      dataset["label_column"] = std::get<std::string>(d.csv.label_column);
    }
    dataset["has_header"] = d.csv.has_header;
    dataset["delimiter"] = std::string(1, d.csv.delimiter);
    dataset["categorical_columns"] = d.csv.categorical_columns;
  } else {
    dataset["train_images"] = d.train_images.string();
    dataset["train_labels"] = d.train_labels.string();
    dataset["test_images"] = d.test_images.string();
    dataset["test_labels"] = d.test_labels.string();
  }
  dataset["task"] = std::string(to_string(d.task()));
  dataset["fractions"] = d.fractions;
  dataset["rotate"] = d.rotate;
  dataset["seed"] = d.seed;

  const OptimizerSettings& o = config.optimizer;
  json optimizer = {{"name", std::string(to_string(o.kind))},
                    {"learning_rate", o.learning_rate},
                    {"beta1", o.beta1},
                    {"beta2", o.beta2},
                    {"epsilon", o.epsilon},
                    {"weight_decay", o.weight_decay}};
  const RunSpec& r = config.run;
  json run = {{"batch_size", r.batch_size},
              {"max_steps", r.max_steps},
              {"eval_interval", r.eval_interval},
              {"seed", r.seed},
              {"selection", r.selection == Selection::kValidation ? "validation" : "test"}};

  json root = {{"dataset", dataset},
               {"architecture", architecture_to_json(config.architecture)},
               {"optimizer", optimizer},
               {"run", run},
               {"output", {{"dir", config.output_dir.string()}}}};
  return root.dump(2);
}

}  // namespace hingeforest
