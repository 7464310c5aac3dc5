#include "hingeforest/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "hingeforest/random.hpp"

namespace hingeforest {

std::string_view to_string(Task task) { return task == Task::kClassification ? "classification" : "regression"; }

Task parse_task(std::string_view text) {
  if (text == "classification") return Task::kClassification;
  if (text == "regression") return Task::kRegression;
  throw ConfigError("task must be 'classification' or 'regression', got '" + std::string(text) + "'");
}

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kAll:
      return "all";
    case SplitTag::kTrain:
      return "train";
    case SplitTag::kValidation:
      return "validation";
    case SplitTag::kTest:
      return "test";
  }
  return "unknown";
}

SplitTag parse_split_tag(std::string_view text) {
  if (text == "all") return SplitTag::kAll;
  if (text == "train") return SplitTag::kTrain;
  if (text == "validation") return SplitTag::kValidation;
  if (text == "test") return SplitTag::kTest;
  throw ConfigError("split must be one of all, train, validation, test; got '" + std::string(text) + "'");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\"");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\"");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_line(std::string_view line, char delimiter) {
  std::vector<std::string_view> cells;
  if (delimiter == ' ' || delimiter == '\t') {
    // Runs of whitespace separate cells.
    std::size_t pos = 0;
    while (pos < line.size()) {
      pos = line.find_first_not_of(" \t\r", pos);
      if (pos == std::string_view::npos) break;
      std::size_t end = line.find_first_of(" \t\r", pos);
      if (end == std::string_view::npos) end = line.size();
      cells.push_back(line.substr(pos, end - pos));
      pos = end;
    }
    return cells;
  }
  std::size_t start = 0;
  while (true) {
    const std::size_t end = line.find(delimiter, start);
    cells.push_back(trim(line.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start)));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return cells;
}

bool parse_double(std::string_view text, double& value) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(value);
}

std::string location(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");

  std::vector<std::string> header;
  std::size_t columns = 0;
  std::size_t label_index = 0;
  bool label_resolved = false;
  std::vector<std::unordered_map<std::string, std::size_t>> categories;
  std::vector<bool> is_categorical;

  std::unordered_map<std::string, std::size_t> class_index;
  std::vector<std::string> class_names = options.class_names;
  for (std::size_t i = 0; i < class_names.size(); ++i) class_index.emplace(class_names[i], i);
  const bool fixed_classes = !class_names.empty();

  std::vector<float> features;
  std::vector<float> labels;
  std::string line;
  std::size_t line_number = 0;
  std::size_t rows = 0;

  auto resolve_label = [&](std::size_t width) {
    if (const auto* index = std::get_if<std::int64_t>(&options.label_column)) {
      const std::int64_t resolved = *index < 0 ? static_cast<std::int64_t>(width) + *index : *index;
      if (resolved < 0 || resolved >= static_cast<std::int64_t>(width)) {
        throw ConfigError("label column " + std::to_string(*index) + " is outside the " + std::to_string(width) +
                          " columns of '" + path.string() + "'");
      }
      label_index = static_cast<std::size_t>(resolved);
    } else {
      const std::string& name = std::get<std::string>(options.label_column);
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw ConfigError("label column '" + name + "' not found in '" + path.string() + "'");
      label_index = static_cast<std::size_t>(it - header.begin());
    }
    is_categorical.assign(width, false);
    for (std::size_t c : options.categorical_columns) {
      if (c >= width) throw ConfigError("categorical column " + std::to_string(c) + " is outside the file");
      is_categorical[c] = true;
    }
    categories.resize(width);
    label_resolved = true;
  };

  while (std::getline(in, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line, options.delimiter);
    if (options.has_header && header.empty()) {
      for (auto c : cells) header.emplace_back(c);
      continue;
    }
    if (columns == 0) {
      columns = cells.size();
      if (columns < 2) throw DataError(location(path, line_number) + ": need at least one feature and a label");
      resolve_label(columns);
    }
    if (cells.size() != columns) {
      throw DataError(location(path, line_number) + ": expected " + std::to_string(columns) + " columns, found " +
                      std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < columns; ++c) {
      const std::string_view cell = cells[c];
      if (c == label_index) {
        if (options.task == Task::kRegression) {
          double value = 0;
          if (!parse_double(cell, value)) {
            throw DataError(location(path, line_number) + ", column " + std::to_string(c + 1) +
                            ": non-numeric regression target '" + std::string(cell) + "'");
          }
          labels.push_back(static_cast<float>(value));
        } else {
          const std::string key(cell);
          auto it = class_index.find(key);
          if (it == class_index.end()) {
            if (fixed_classes) {
              throw DataError(location(path, line_number) + ": unknown class '" + key + "'");
            }
            it = class_index.emplace(key, class_names.size()).first;
            class_names.push_back(key);
          }
          labels.push_back(static_cast<float>(it->second));
        }
        continue;
      }
      if (is_categorical[c]) {
        auto& codes = categories[c];
        const auto it = codes.try_emplace(std::string(cell), codes.size()).first;
        features.push_back(static_cast<float>(it->second));
        continue;
      }
      double value = 0;
      if (!parse_double(cell, value)) {
        throw DataError(location(path, line_number) + ", column " + std::to_string(c + 1) +
                        ": non-numeric feature '" + std::string(cell) + "'");
      }
      features.push_back(static_cast<float>(value));
    }
    ++rows;
  }
  if (rows == 0 || !label_resolved) throw DataError("'" + path.string() + "' contains no data rows");

  Dataset data;
  data.features = Tensor<float>({rows, columns - 1}, std::move(features));
  data.labels = Tensor<float>({rows}, std::move(labels));
  data.task = options.task;
  if (options.task == Task::kClassification) data.class_names = std::move(class_names);
  return data;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) throw DataError("'" + path.string() + "' is truncated in its header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  if (const auto magic = read_be32(images, 0, images_path); magic != kIdxImageMagic) {
    throw DataError("'" + images_path.string() + "' has magic " + std::to_string(magic) + ", expected 2051");
  }
  if (const auto magic = read_be32(labels, 0, labels_path); magic != kIdxLabelMagic) {
    throw DataError("'" + labels_path.string() + "' has magic " + std::to_string(magic) + ", expected 2049");
  }
  const std::size_t count = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t label_count = read_be32(labels, 4, labels_path);
  if (count != label_count) {
    throw DataError("image file holds " + std::to_string(count) + " images but label file holds " +
                    std::to_string(label_count) + " labels");
  }
  if (count == 0 || rows == 0 || cols == 0) throw DataError("'" + images_path.string() + "' is empty");
  const std::size_t pixels = count * rows * cols;
  if (images.size() != 16 + pixels) {
    throw DataError("'" + images_path.string() + "' should hold " + std::to_string(16 + pixels) + " bytes, found " +
                    std::to_string(images.size()));
  }
  if (labels.size() != 8 + count) {
    throw DataError("'" + labels_path.string() + "' should hold " + std::to_string(8 + count) + " bytes, found " +
                    std::to_string(labels.size()));
  }

  std::vector<float> features(pixels);
  for (std::size_t i = 0; i < pixels; ++i) features[i] = static_cast<float>(images[16 + i]) / 255.0f;
  std::vector<float> targets(count);
  unsigned char max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    targets[i] = static_cast<float>(labels[8 + i]);
    max_label = std::max(max_label, labels[8 + i]);
  }

  Dataset data;
  data.features = Tensor<float>({count, 1, rows, cols}, std::move(features));
  data.labels = Tensor<float>({count}, std::move(targets));
  data.task = Task::kClassification;
  for (unsigned c = 0; c <= max_label; ++c) data.class_names.push_back(std::to_string(c));
  return data;
}

Dataset select_rows(const Dataset& data, std::span<const std::size_t> rows, SplitTag tag) {
  if (rows.empty()) throw ConfigError("cannot select an empty subset");
  Dataset out;
  out.features = gather_rows(data.features, rows);
  out.labels = gather_rows(data.labels, rows);
  out.task = data.task;
  out.class_names = data.class_names;
  out.tag = tag;
  return out;
}

std::vector<Dataset> shuffle_split(const Dataset& data, std::span<const double> fractions, std::uint64_t seed) {
  if (fractions.empty()) throw ConfigError("at least one split fraction is required");
  double total = 0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-9) throw ConfigError("split fractions sum to more than 1");

  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  static constexpr std::array<SplitTag, 3> kRoles = {SplitTag::kTrain, SplitTag::kValidation, SplitTag::kTest};
  std::vector<Dataset> splits;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    // The small slack keeps fractions such as 1/3 of 150 from flooring to 49.
    const auto count = static_cast<std::size_t>(std::floor(fractions[i] * static_cast<double>(n) + 1e-9));
    if (count == 0) {
      throw ConfigError("split " + std::to_string(i) + " with fraction " + std::to_string(fractions[i]) +
                        " would be empty for " + std::to_string(n) + " rows");
    }
    const SplitTag tag = fractions.size() == 1 ? SplitTag::kAll : (i < kRoles.size() ? kRoles[i] : SplitTag::kAll);
    splits.push_back(select_rows(data, std::span(order).subspan(offset, count), tag));
    offset += count;
  }
  return splits;
}

MinibatchIterator::MinibatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), seed_(seed) {
  if (batch_size_ == 0) throw ConfigError("batch size must be at least 1");
  if (data.size() == 0) throw ConfigError("cannot iterate over an empty dataset");
  if (batch_size_ > data.size()) {
    warning_ = "batch size " + std::to_string(batch_size_) + " exceeds the " + std::to_string(data.size()) +
               " available rows; using the whole split";
    batch_size_ = data.size();
  }
  start_epoch(0);
}

void MinibatchIterator::start_epoch(std::size_t epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  order_.resize(data_->size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng = make_rng(seed_, epoch + 1);
  std::shuffle(order_.begin(), order_.end(), rng);
}

MinibatchIterator::Batch MinibatchIterator::next() {
  if (cursor_ >= order_.size()) start_epoch(epoch_ + 1);
  const std::size_t count = std::min(batch_size_, order_.size() - cursor_);
  const std::span<const std::size_t> rows(order_.data() + cursor_, count);
  Batch batch{gather_rows(data_->features, rows), gather_rows(data_->labels, rows), epoch_};
  cursor_ += count;
  ++served_;
  return batch;
}

void MinibatchIterator::seek(std::uint64_t batches) {
  const std::uint64_t per_epoch = batches_per_epoch();
  start_epoch(static_cast<std::size_t>(batches / per_epoch));
  cursor_ = static_cast<std::size_t>(batches % per_epoch) * batch_size_;
  served_ = batches;
}

}  // namespace hingeforest
