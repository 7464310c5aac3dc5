#pragma once

#include <cstddef>
#include <vector>

#include "hingeforest/graph.hpp"

namespace hingeforest {

/// Fully connected layer: out[n,o] = sum_i W[o,i] * in[n,i] + b[o].
template <typename T>
class InnerProduct final : public Node<T> {
 public:
  InnerProduct(std::size_t in_features, std::size_t out_features);

  std::string kind() const override { return "inner_product"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  void forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output, const Tensor<T>& output_grad,
                std::span<Tensor<T>* const> input_grads) override;
  std::span<Parameter<T>> parameters() override { return params_; }

  Tensor<T>& weights() { return params_[0].value; }
  Tensor<T>& bias() { return params_[1].value; }

 private:
  std::size_t in_;
  std::size_t out_;
  std::vector<Parameter<T>> params_;
};

/// Valid (unpadded) 2-D cross-correlation over N x C x H x W inputs.
template <typename T>
class Conv2d final : public Node<T> {
 public:
  Conv2d(std::size_t channels, std::size_t kernels, std::size_t kernel_size, std::size_t stride);

  std::string kind() const override { return "conv2d"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  void forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output, const Tensor<T>& output_grad,
                std::span<Tensor<T>* const> input_grads) override;
  std::span<Parameter<T>> parameters() override { return params_; }

  Tensor<T>& kernels() { return params_[0].value; }
  Tensor<T>& bias() { return params_[1].value; }

  static std::size_t output_extent(std::size_t input, std::size_t kernel, std::size_t stride) {
    return (input - kernel) / stride + 1;
  }

 private:
  std::size_t channels_;
  std::size_t kernels_;
  std::size_t size_;
  std::size_t stride_;
  std::vector<Parameter<T>> params_;
};

/// N x d1 x d2 x ... -> N x (d1*d2*...).
template <typename T>
class Flatten final : public Node<T> {
 public:
  std::string kind() const override { return "flatten"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  void forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output, const Tensor<T>& output_grad,
                std::span<Tensor<T>* const> input_grads) override;
};

/// Batch normalization with running statistics only and no learnable affine
/// part. In training mode the running mean/std are first moved towards the
/// batch statistics; the normalization itself always uses the running values,
/// so training and testing forwards share one code path. The backward pass
/// treats the statistics as constants.
template <typename T>
class RunningBatchNorm final : public Node<T> {
 public:
  static constexpr double kDefaultMomentum = 0.05;
  static constexpr double kDefaultEpsilon = 1e-5;

  explicit RunningBatchNorm(std::size_t features, double momentum = kDefaultMomentum,
                            double epsilon = kDefaultEpsilon);

  std::string kind() const override { return "running_batch_norm"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  void forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output, const Tensor<T>& output_grad,
                std::span<Tensor<T>* const> input_grads) override;
  std::span<Parameter<T>> parameters() override { return params_; }

  // Frozen statistics are never updated, even in training mode.
  void set_frozen(bool frozen) { frozen_ = frozen; }
  bool frozen() const { return frozen_; }

  // Moves the running statistics towards the statistics of `batch`.
  void update_statistics(const Tensor<T>& batch);

  Tensor<T>& mean() { return params_[0].value; }
  Tensor<T>& stddev() { return params_[1].value; }
  double momentum() const { return momentum_; }
  double epsilon() const { return epsilon_; }

 private:
  std::size_t features_;
  double momentum_;
  double epsilon_;
  bool frozen_ = false;
  std::vector<Parameter<T>> params_;
};

/// Averages per-tree outputs: N x M x K -> N x K.
template <typename T>
class TreeMeanAggregate final : public Node<T> {
 public:
  std::string kind() const override { return "tree_mean"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  void forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output, const Tensor<T>& output_grad,
                std::span<Tensor<T>* const> input_grads) override;
};

/// Mean over the batch of -log softmax(logits)[label]. Inputs: logits (N x K)
/// and labels (N, integral values in [0, K)).
template <typename T>
class SoftmaxCrossEntropy final : public Node<T> {
 public:
  std::string kind() const override { return "softmax_loss"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  void forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output, const Tensor<T>& output_grad,
                std::span<Tensor<T>* const> input_grads) override;

  const Tensor<T>& probabilities() const { return probabilities_; }

 private:
  Tensor<T> probabilities_;
};

/// Mean over the batch of the squared residual. Inputs: predictions (N x d)
/// and targets with the same number of elements per example.
template <typename T>
class L2Loss final : public Node<T> {
 public:
  std::string kind() const override { return "l2_loss"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  void forward(std::span<const Tensor<T>* const> inputs, Tensor<T>& output, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output, const Tensor<T>& output_grad,
                std::span<Tensor<T>* const> input_grads) override;
};

#define HINGEFOREST_EXTERN_LAYER(Layer) \
  extern template class Layer<float>;   \
  extern template class Layer<double>;
HINGEFOREST_EXTERN_LAYER(InnerProduct)
HINGEFOREST_EXTERN_LAYER(Conv2d)
HINGEFOREST_EXTERN_LAYER(Flatten)
HINGEFOREST_EXTERN_LAYER(RunningBatchNorm)
HINGEFOREST_EXTERN_LAYER(TreeMeanAggregate)
HINGEFOREST_EXTERN_LAYER(SoftmaxCrossEntropy)
HINGEFOREST_EXTERN_LAYER(L2Loss)
#undef HINGEFOREST_EXTERN_LAYER

}  // namespace hingeforest
