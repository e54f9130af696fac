#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "confoundnet/tensor.hpp"

namespace confoundnet {

/// Trainable weights and bias of one layer, with momentum buffers.
///
/// Convolution weights are K x C x kH x kW with a K-long bias. Fully
/// connected weights are O x D (one row per output) with an O-long bias.
struct LayerParams {
  Tensor weights;
  Tensor bias;
  std::vector<double> weight_velocity;
  std::vector<double> bias_velocity;

  LayerParams() = default;
  LayerParams(Shape weight_shape, std::size_t bias_size);

  std::size_t parameter_count() const noexcept { return weights.size() + bias.size(); }
  void zero_grad() noexcept;
  bool operator==(const LayerParams&) const = default;
};

// All backward kernels read the upstream gradient from `output.grad()` and
// accumulate (+=) into the gradient buffers of their inputs and parameters.

Tensor conv2d_forward(const Tensor& input, const LayerParams& params, std::size_t stride,
                      std::size_t pad);
void conv2d_backward(Tensor& input, LayerParams& params, std::size_t stride, std::size_t pad,
                     const Tensor& output);

Tensor relu_forward(const Tensor& input);
void relu_backward(Tensor& input, const Tensor& output);

struct PoolResult {
  Tensor output;
  /// Flat index into the input for every output element.
  std::vector<std::size_t> argmax;
};

/// 2x2 max pool with stride 2. Ties go to the first element in row-major
/// order within the window.
PoolResult maxpool2_forward(const Tensor& input);
void maxpool2_backward(Tensor& input, std::span<const std::size_t> argmax, const Tensor& output);

/// y = W x + b per batch row. Any input of rank >= 2 is treated as N x D with
/// D the product of the trailing dimensions.
Tensor fc_forward(const Tensor& input, const LayerParams& params);
void fc_backward(Tensor& input, LayerParams& params, const Tensor& output);

struct ClassLoss {
  /// Summed over the batch, never averaged.
  double loss = 0.0;
  /// N x C, softmax(x_i) - onehot(c_i) per row.
  Tensor grad;
};

ClassLoss softmax_logloss(const Tensor& logits, std::span<const int> labels);

}  // namespace confoundnet
