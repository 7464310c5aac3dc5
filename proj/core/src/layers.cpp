#include "hingeforest/layers.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace hingeforest {
namespace {

void expect_inputs(std::span<const Shape> inputs, std::size_t count) {
  if (inputs.size() != count) {
    throw ConfigError("expected " + std::to_string(count) + " input(s), got " + std::to_string(inputs.size()));
  }
}

void expect_rank(const Shape& shape, std::size_t rank) {
  if (shape.size() != rank) {
    throw ConfigError("expected rank " + std::to_string(rank) + " input, got " + shape_string(shape));
  }
}

std::size_t per_example(const Shape& shape) { return shape_size(shape) / shape[0]; }

}  // namespace

// ---------------------------------------------------------------------------
// InnerProduct

template <typename T>
InnerProduct<T>::InnerProduct(std::size_t in_features, std::size_t out_features)
    : in_(in_features), out_(out_features) {
  params_.emplace_back("weights", Tensor<T>({out_, in_}));
  params_.emplace_back("bias", Tensor<T>({out_}));
}

template <typename T>
Shape InnerProduct<T>::output_shape(std::span<const Shape> inputs) const {
  expect_inputs(inputs, 1);
  expect_rank(inputs[0], 2);
  if (inputs[0][1] != in_) {
    throw ConfigError("inner extent " + std::to_string(inputs[0][1]) + " does not match weights " +
                      shape_string(params_[0].value.shape()));
  }
  return {inputs[0][0], out_};
}

template <typename T>
void InnerProduct<T>::forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode) {
  const Tensor<T>& x = *inputs[0];
  const Tensor<T>& w = params_[0].value;
  const Tensor<T>& b = params_[1].value;
  const std::size_t batch = x.extent(0);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* xr = x.data() + n * in_;
    T* yr = output.data() + n * out_;
    for (std::size_t o = 0; o < out_; ++o) {
      const T* wr = w.data() + o * in_;
      T sum = b[o];
      for (std::size_t i = 0; i < in_; ++i) sum += wr[i] * xr[i];
      yr[o] = sum;
    }
  }
}

template <typename T>
void InnerProduct<T>::backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>&,
                               const Tensor<T>& output_grad, std::span<Tensor<T>* const> input_grads) {
  const Tensor<T>& x = *inputs[0];
  const Tensor<T>& w = params_[0].value;
  Tensor<T>& dw = params_[0].grad;
  Tensor<T>& db = params_[1].grad;
  Tensor<T>* dx = input_grads[0];
  const std::size_t batch = x.extent(0);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* xr = x.data() + n * in_;
    const T* gr = output_grad.data() + n * out_;
    for (std::size_t o = 0; o < out_; ++o) {
      const T g = gr[o];
      db[o] += g;
      T* dwr = dw.data() + o * in_;
      for (std::size_t i = 0; i < in_; ++i) dwr[i] += g * xr[i];
    }
    if (dx != nullptr) {
      T* dxr = dx->data() + n * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        const T g = gr[o];
        const T* wr = w.data() + o * in_;
        for (std::size_t i = 0; i < in_; ++i) dxr[i] += g * wr[i];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t channels, std::size_t kernels, std::size_t kernel_size, std::size_t stride)
    : channels_(channels), kernels_(kernels), size_(kernel_size), stride_(stride) {
  if (stride_ == 0) throw ConfigError("convolution stride must be positive");
  params_.emplace_back("kernels", Tensor<T>({kernels_, channels_, size_, size_}));
  params_.emplace_back("bias", Tensor<T>({kernels_}));
}

template <typename T>
Shape Conv2d<T>::output_shape(std::span<const Shape> inputs) const {
  expect_inputs(inputs, 1);
  expect_rank(inputs[0], 4);
  const Shape& in = inputs[0];
  if (in[1] != channels_) {
    throw ConfigError("expected " + std::to_string(channels_) + " channels, got " + shape_string(in));
  }
  if (in[2] < size_ || in[3] < size_) {
    throw ConfigError("input " + shape_string(in) + " is smaller than the " + std::to_string(size_) + "x" +
                      std::to_string(size_) + " kernel");
  }
  return {in[0], kernels_, output_extent(in[2], size_, stride_), output_extent(in[3], size_, stride_)};
}

template <typename T>
void Conv2d<T>::forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode) {
  const Tensor<T>& x = *inputs[0];
  const Tensor<T>& w = params_[0].value;
  const Tensor<T>& b = params_[1].value;
  const std::size_t batch = x.extent(0), height = x.extent(2), width = x.extent(3);
  const std::size_t out_h = output.extent(2), out_w = output.extent(3);
  const std::size_t kernel_stride = channels_ * size_ * size_;

  T* y = output.data();
  for (std::size_t n = 0; n < batch; ++n) {
    const T* xn = x.data() + n * channels_ * height * width;
    for (std::size_t k = 0; k < kernels_; ++k) {
      const T* wk = w.data() + k * kernel_stride;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          T sum = b[k];
          for (std::size_t c = 0; c < channels_; ++c) {
            const T* xc = xn + c * height * width + (oy * stride_) * width + ox * stride_;
            const T* wc = wk + c * size_ * size_;
            for (std::size_t ky = 0; ky < size_; ++ky) {
              for (std::size_t kx = 0; kx < size_; ++kx) sum += wc[ky * size_ + kx] * xc[ky * width + kx];
            }
          }
          *y++ = sum;
        }
      }
    }
  }
}

template <typename T>
void Conv2d<T>::backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output,
                         const Tensor<T>& output_grad, std::span<Tensor<T>* const> input_grads) {
  const Tensor<T>& x = *inputs[0];
  const Tensor<T>& w = params_[0].value;
  Tensor<T>& dw = params_[0].grad;
  Tensor<T>& db = params_[1].grad;
  Tensor<T>* dx = input_grads[0];
  const std::size_t batch = x.extent(0), height = x.extent(2), width = x.extent(3);
  const std::size_t out_h = output.extent(2), out_w = output.extent(3);
  const std::size_t kernel_stride = channels_ * size_ * size_;

  const T* g = output_grad.data();
  for (std::size_t n = 0; n < batch; ++n) {
    const std::size_t offset = n * channels_ * height * width;
    const T* xn = x.data() + offset;
    T* dxn = dx != nullptr ? dx->data() + offset : nullptr;
    for (std::size_t k = 0; k < kernels_; ++k) {
      const T* wk = w.data() + k * kernel_stride;
      T* dwk = dw.data() + k * kernel_stride;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const T go = *g++;
          db[k] += go;
          for (std::size_t c = 0; c < channels_; ++c) {
            const std::size_t base = c * height * width + (oy * stride_) * width + ox * stride_;
            const T* xc = xn + base;
            const T* wc = wk + c * size_ * size_;
            T* dwc = dwk + c * size_ * size_;
            for (std::size_t ky = 0; ky < size_; ++ky) {
              for (std::size_t kx = 0; kx < size_; ++kx) {
                dwc[ky * size_ + kx] += go * xc[ky * width + kx];
                if (dxn != nullptr) dxn[base + ky * width + kx] += go * wc[ky * size_ + kx];
              }
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Flatten

template <typename T>
Shape Flatten<T>::output_shape(std::span<const Shape> inputs) const {
  expect_inputs(inputs, 1);
  return {inputs[0][0], per_example(inputs[0])};
}

template <typename T>
void Flatten<T>::forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode) {
  std::copy(inputs[0]->data(), inputs[0]->data() + inputs[0]->size(), output.data());
}

template <typename T>
void Flatten<T>::backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& output_grad,
                          std::span<Tensor<T>* const> input_grads) {
  if (input_grads[0] == nullptr) return;
  T* dx = input_grads[0]->data();
  for (std::size_t i = 0; i < output_grad.size(); ++i) dx[i] += output_grad[i];
}

// ---------------------------------------------------------------------------
// RunningBatchNorm

template <typename T>
RunningBatchNorm<T>::RunningBatchNorm(std::size_t features, double momentum, double epsilon)
    : features_(features), momentum_(momentum), epsilon_(epsilon) {
  if (!(momentum_ > 0.0 && momentum_ <= 1.0)) throw ConfigError("batch norm momentum must lie in (0, 1]");
  if (!(epsilon_ > 0.0)) throw ConfigError("batch norm epsilon must be positive");
  params_.emplace_back("running_mean", Tensor<T>({features_}, T{0}), false);
  params_.emplace_back("running_std", Tensor<T>({features_}, T{1}), false);
}

template <typename T>
Shape RunningBatchNorm<T>::output_shape(std::span<const Shape> inputs) const {
  expect_inputs(inputs, 1);
  expect_rank(inputs[0], 2);
  if (inputs[0][1] != features_) {
    throw ConfigError("expected " + std::to_string(features_) + " features, got " + shape_string(inputs[0]));
  }
  return inputs[0];
}

template <typename T>
void RunningBatchNorm<T>::update_statistics(const Tensor<T>& batch) {
  if (batch.rank() != 2 || batch.extent(0) == 0) throw StateError("batch norm needs a non-empty N x F batch");
  const std::size_t rows = batch.extent(0);
  Tensor<T>& mean = params_[0].value;
  Tensor<T>& stddev = params_[1].value;
  const T keep = static_cast<T>(1.0 - momentum_);
  const T take = static_cast<T>(momentum_);
  for (std::size_t f = 0; f < features_; ++f) {
    double sum = 0.0;
    for (std::size_t n = 0; n < rows; ++n) sum += batch[n * features_ + f];
    const double batch_mean = sum / static_cast<double>(rows);
    double squares = 0.0;
    for (std::size_t n = 0; n < rows; ++n) {
      const double d = batch[n * features_ + f] - batch_mean;
      squares += d * d;
    }
    const double batch_std = std::sqrt(squares / static_cast<double>(rows));
    mean[f] = keep * mean[f] + take * static_cast<T>(batch_mean);
    stddev[f] = keep * stddev[f] + take * static_cast<T>(batch_std);
  }
}

template <typename T>
void RunningBatchNorm<T>::forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode mode) {
  const Tensor<T>& x = *inputs[0];
  if (mode == Mode::kTrain && !frozen_) update_statistics(x);
  const Tensor<T>& mean = params_[0].value;
  const Tensor<T>& stddev = params_[1].value;
  const T eps = static_cast<T>(epsilon_);
  const std::size_t rows = x.extent(0);
  for (std::size_t n = 0; n < rows; ++n) {
    for (std::size_t f = 0; f < features_; ++f) {
      const std::size_t i = n * features_ + f;
      output[i] = (x[i] - mean[f]) / (stddev[f] + eps);
    }
  }
}

template <typename T>
void RunningBatchNorm<T>::backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& output_grad,
                                   std::span<Tensor<T>* const> input_grads) {
  if (input_grads[0] == nullptr) return;
  const Tensor<T>& stddev = params_[1].value;
  const T eps = static_cast<T>(epsilon_);
  Tensor<T>& dx = *input_grads[0];
  const std::size_t rows = output_grad.extent(0);
  for (std::size_t n = 0; n < rows; ++n) {
    for (std::size_t f = 0; f < features_; ++f) {
      const std::size_t i = n * features_ + f;
      dx[i] += output_grad[i] / (stddev[f] + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// TreeMeanAggregate

template <typename T>
Shape TreeMeanAggregate<T>::output_shape(std::span<const Shape> inputs) const {
  expect_inputs(inputs, 1);
  expect_rank(inputs[0], 3);
  return {inputs[0][0], inputs[0][2]};
}

template <typename T>
void TreeMeanAggregate<T>::forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode) {
  const Tensor<T>& x = *inputs[0];
  const std::size_t rows = x.extent(0), trees = x.extent(1), outputs = x.extent(2);
  const T scale = T{1} / static_cast<T>(trees);
  for (std::size_t n = 0; n < rows; ++n) {
    for (std::size_t k = 0; k < outputs; ++k) {
      T sum = 0;
      for (std::size_t m = 0; m < trees; ++m) sum += x[(n * trees + m) * outputs + k];
      output[n * outputs + k] = sum * scale;
    }
  }
}

template <typename T>
void TreeMeanAggregate<T>::backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>&,
                                    const Tensor<T>& output_grad, std::span<Tensor<T>* const> input_grads) {
  if (input_grads[0] == nullptr) return;
  const Tensor<T>& x = *inputs[0];
  const std::size_t rows = x.extent(0), trees = x.extent(1), outputs = x.extent(2);
  const T scale = T{1} / static_cast<T>(trees);
  Tensor<T>& dx = *input_grads[0];
  for (std::size_t n = 0; n < rows; ++n) {
    for (std::size_t m = 0; m < trees; ++m) {
      for (std::size_t k = 0; k < outputs; ++k) dx[(n * trees + m) * outputs + k] += output_grad[n * outputs + k] * scale;
    }
  }
}

// ---------------------------------------------------------------------------
// SoftmaxCrossEntropy

template <typename T>
Shape SoftmaxCrossEntropy<T>::output_shape(std::span<const Shape> inputs) const {
  expect_inputs(inputs, 2);
  expect_rank(inputs[0], 2);
  if (inputs[1][0] != inputs[0][0] || per_example(inputs[1]) != 1) {
    throw ConfigError("labels " + shape_string(inputs[1]) + " do not match logits " + shape_string(inputs[0]));
  }
  return {1};
}

template <typename T>
void SoftmaxCrossEntropy<T>::forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode) {
  const Tensor<T>& logits = *inputs[0];
  const Tensor<T>& labels = *inputs[1];
  const std::size_t rows = logits.extent(0), classes = logits.extent(1);
  probabilities_.resize(logits.shape());
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    const T raw = labels[n];
    const auto label = static_cast<long long>(raw);
    if (static_cast<T>(label) != raw || label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DataError("label " + std::to_string(static_cast<double>(raw)) + " of example " + std::to_string(n) +
                      " is outside [0, " + std::to_string(classes) + ")");
    }
    const T* z = logits.data() + n * classes;
    T* p = probabilities_.data() + n * classes;
    T top = z[0];
    for (std::size_t k = 1; k < classes; ++k) top = std::max(top, z[k]);
    T sum = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      p[k] = std::exp(z[k] - top);
      sum += p[k];
    }
    for (std::size_t k = 0; k < classes; ++k) p[k] /= sum;
    total += static_cast<double>(std::log(sum) + top - z[label]);
  }
  output[0] = static_cast<T>(total / static_cast<double>(rows));
}

template <typename T>
void SoftmaxCrossEntropy<T>::backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>&,
                                      const Tensor<T>& output_grad, std::span<Tensor<T>* const> input_grads) {
  if (input_grads[0] == nullptr) return;
  const Tensor<T>& labels = *inputs[1];
  const std::size_t rows = probabilities_.extent(0), classes = probabilities_.extent(1);
  const T scale = output_grad[0] / static_cast<T>(rows);
  Tensor<T>& dz = *input_grads[0];
  for (std::size_t n = 0; n < rows; ++n) {
    const auto label = static_cast<std::size_t>(labels[n]);
    for (std::size_t k = 0; k < classes; ++k) {
      const T target = k == label ? T{1} : T{0};
      dz[n * classes + k] += (probabilities_[n * classes + k] - target) * scale;
    }
  }
}

// ---------------------------------------------------------------------------
// L2Loss

template <typename T>
Shape L2Loss<T>::output_shape(std::span<const Shape> inputs) const {
  expect_inputs(inputs, 2);
  if (inputs[0][0] != inputs[1][0] || shape_size(inputs[0]) != shape_size(inputs[1])) {
    throw ConfigError("predictions " + shape_string(inputs[0]) + " and targets " + shape_string(inputs[1]) +
                      " differ in shape");
  }
  return {1};
}

template <typename T>
void L2Loss<T>::forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode) {
  const Tensor<T>& pred = *inputs[0];
  const Tensor<T>& target = *inputs[1];
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    total += d * d;
  }
  output[0] = static_cast<T>(total / static_cast<double>(pred.extent(0)));
}

template <typename T>
void L2Loss<T>::backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>&, const Tensor<T>& output_grad,
                         std::span<Tensor<T>* const> input_grads) {
  const Tensor<T>& pred = *inputs[0];
  const Tensor<T>& target = *inputs[1];
  const T scale = T{2} * output_grad[0] / static_cast<T>(pred.extent(0));
  if (input_grads[0] != nullptr) {
    for (std::size_t i = 0; i < pred.size(); ++i) (*input_grads[0])[i] += (pred[i] - target[i]) * scale;
  }
  if (input_grads[1] != nullptr) {
    for (std::size_t i = 0; i < pred.size(); ++i) (*input_grads[1])[i] -= (pred[i] - target[i]) * scale;
  }
}

#define HINGEFOREST_INSTANTIATE_LAYER(Layer) \
  template class Layer<float>;              \
  template class Layer<double>;
HINGEFOREST_INSTANTIATE_LAYER(InnerProduct)
HINGEFOREST_INSTANTIATE_LAYER(Conv2d)
HINGEFOREST_INSTANTIATE_LAYER(Flatten)
HINGEFOREST_INSTANTIATE_LAYER(RunningBatchNorm)
HINGEFOREST_INSTANTIATE_LAYER(TreeMeanAggregate)
HINGEFOREST_INSTANTIATE_LAYER(SoftmaxCrossEntropy)
HINGEFOREST_INSTANTIATE_LAYER(L2Loss)
#undef HINGEFOREST_INSTANTIATE_LAYER

}  // namespace hingeforest
