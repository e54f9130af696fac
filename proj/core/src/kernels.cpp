#include "confoundnet/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "confoundnet/error.hpp"

namespace confoundnet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kernel_h, kernel_w;
  std::size_t out_h, out_w;
  std::size_t stride, pad;

  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }
};

std::size_t output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                          const char* axis) {
  const std::size_t padded = in + 2 * pad;
  if (padded < kernel) {
    throw GeometryError(std::string("convolution kernel larger than padded ") + axis + " extent");
  }
  if ((padded - kernel) % stride != 0) {
    throw GeometryError(std::string("convolution ") + axis + " extent " + std::to_string(in) +
                        " with pad " + std::to_string(pad) + " and stride " +
                        std::to_string(stride) + " does not give an integer output size");
  }
  return (padded - kernel) / stride + 1;
}

ConvGeometry conv_geometry(const Tensor& input, const LayerParams& params, std::size_t stride,
                           std::size_t pad) {
  if (stride == 0) throw GeometryError("convolution stride must be positive");
  if (input.rank() != 4) {
    throw DimensionError("convolution input must be NCHW, got " + shape_string(input.shape()));
  }
  const Tensor& w = params.weights;
  if (w.rank() != 4) {
    throw DimensionError("convolution weights must be KxCxkHxkW, got " + shape_string(w.shape()));
  }
  if (w.dim(1) != input.dim(1)) {
    throw DimensionError("convolution input has " + std::to_string(input.dim(1)) +
                         " channels but weights expect " + std::to_string(w.dim(1)));
  }
  if (params.bias.size() != w.dim(0)) {
    throw DimensionError("convolution bias length does not match filter count");
  }
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.filters = w.dim(0);
  g.kernel_h = w.dim(2);
  g.kernel_w = w.dim(3);
  g.stride = stride;
  g.pad = pad;
  g.out_h = output_extent(g.height, g.kernel_h, stride, pad, "height");
  g.out_w = output_extent(g.width, g.kernel_w, stride, pad, "width");
  return g;
}

// Unfolds one image into a (C*kH*kW) x (H'*W') matrix.
void im2col(const double* image, const ConvGeometry& g, double* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto height = static_cast<std::ptrdiff_t>(g.height);
  const auto width = static_cast<std::ptrdiff_t>(g.width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        double* dst = cols + row * g.positions();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
            *dst++ = (ih >= 0 && ih < height && iw >= 0 && iw < width) ? plane[ih * width + iw]
                                                                        : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* image) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto height = static_cast<std::ptrdiff_t>(g.height);
  const auto width = static_cast<std::ptrdiff_t>(g.width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        const double* src = cols + row * g.positions();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
          for (std::size_t ow = 0; ow < g.out_w; ++ow, ++src) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
            if (ih >= 0 && ih < height && iw >= 0 && iw < width) plane[ih * width + iw] += *src;
          }
        }
      }
    }
  }
}

void require_output_shape(const Tensor& output, const Shape& expected, const char* kernel) {
  if (output.shape() != expected) {
    throw DimensionError(std::string(kernel) + " backward: gradient shape " +
                         shape_string(output.shape()) + " does not match forward output " +
                         shape_string(expected));
  }
}

std::size_t trailing_size(const Tensor& t) {
  std::size_t d = 1;
  for (std::size_t i = 1; i < t.rank(); ++i) d *= t.dim(i);
  return d;
}

void check_fc_shapes(const Tensor& input, const LayerParams& params) {
  if (input.rank() < 2) {
    throw DimensionError("fully connected input must be batched, got " +
                         shape_string(input.shape()));
  }
  if (params.weights.rank() != 2) {
    throw DimensionError("fully connected weights must be OxD, got " +
                         shape_string(params.weights.shape()));
  }
  if (trailing_size(input) != params.weights.dim(1)) {
    throw DimensionError("fully connected input has " + std::to_string(trailing_size(input)) +
                         " features but weights expect " +
                         std::to_string(params.weights.dim(1)));
  }
  if (params.bias.size() != params.weights.dim(0)) {
    throw DimensionError("fully connected bias length does not match output count");
  }
}

}  // namespace

LayerParams::LayerParams(Shape weight_shape, std::size_t bias_size)
    : weights(std::move(weight_shape)),
      bias(Shape{bias_size}),
      weight_velocity(weights.size(), 0.0),
      bias_velocity(bias_size, 0.0) {}

void LayerParams::zero_grad() noexcept {
  weights.zero_grad();
  bias.zero_grad();
}

Tensor conv2d_forward(const Tensor& input, const LayerParams& params, std::size_t stride,
                      std::size_t pad) {
  const ConvGeometry g = conv_geometry(input, params, stride, pad);
  Tensor output(Shape{g.batch, g.filters, g.out_h, g.out_w});

  ConstMatrixMap weights(params.weights.data().data(), static_cast<Eigen::Index>(g.filters),
                         static_cast<Eigen::Index>(g.patch()));
  ConstVectorMap bias(params.bias.data().data(), static_cast<Eigen::Index>(g.filters));
  RowMatrix cols(g.patch(), g.positions());
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = g.filters * g.positions();
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(input.data().data() + n * in_stride, g, cols.data());
    MatrixMap out(output.data().data() + n * out_stride, static_cast<Eigen::Index>(g.filters),
                  static_cast<Eigen::Index>(g.positions()));
    out.noalias() = weights * cols;
    out.colwise() += bias;
  }
  output.check_finite_data("conv2d output");
  return output;
}

void conv2d_backward(Tensor& input, LayerParams& params, std::size_t stride, std::size_t pad,
                     const Tensor& output) {
  const ConvGeometry g = conv_geometry(input, params, stride, pad);
  require_output_shape(output, Shape{g.batch, g.filters, g.out_h, g.out_w}, "conv2d");

  ConstMatrixMap weights(params.weights.data().data(), static_cast<Eigen::Index>(g.filters),
                         static_cast<Eigen::Index>(g.patch()));
  MatrixMap weight_grad(params.weights.grad().data(), static_cast<Eigen::Index>(g.filters),
                        static_cast<Eigen::Index>(g.patch()));
  auto bias_grad = params.bias.grad();
  RowMatrix cols(g.patch(), g.positions());
  RowMatrix col_grad(g.patch(), g.positions());
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = g.filters * g.positions();
  for (std::size_t n = 0; n < g.batch; ++n) {
    ConstMatrixMap grad_out(output.grad().data() + n * out_stride,
                            static_cast<Eigen::Index>(g.filters),
                            static_cast<Eigen::Index>(g.positions()));
    im2col(input.data().data() + n * in_stride, g, cols.data());
    weight_grad.noalias() += grad_out * cols.transpose();
    for (std::size_t f = 0; f < g.filters; ++f) {
      const double* row = output.grad().data() + n * out_stride + f * g.positions();
      double acc = 0.0;
      for (std::size_t p = 0; p < g.positions(); ++p) acc += row[p];
      bias_grad[f] += acc;
    }
    col_grad.noalias() = weights.transpose() * grad_out;
    col2im_add(col_grad.data(), g, input.grad().data() + n * in_stride);
  }
  input.check_finite_grad("conv2d input");
  params.weights.check_finite_grad("conv2d weights");
  params.bias.check_finite_grad("conv2d bias");
}

Tensor relu_forward(const Tensor& input) {
  Tensor output(input.shape());
  auto in = input.data();
  auto out = output.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  output.check_finite_data("relu output");
  return output;
}

void relu_backward(Tensor& input, const Tensor& output) {
  require_output_shape(output, input.shape(), "relu");
  auto in = input.data();
  auto grad_in = input.grad();
  auto grad_out = output.grad();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] > 0.0) grad_in[i] += grad_out[i];
  }
  input.check_finite_grad("relu input");
}

PoolResult maxpool2_forward(const Tensor& input) {
  if (input.rank() != 4) {
    throw DimensionError("max pool input must be NCHW, got " + shape_string(input.shape()));
  }
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  if (height % 2 != 0 || width % 2 != 0) {
    throw GeometryError("2x2 max pool needs even spatial dims, got " +
                        shape_string(input.shape()));
  }
  const std::size_t out_h = height / 2, out_w = width / 2;
  PoolResult result{Tensor(Shape{batch, channels, out_h, out_w}), {}};
  result.argmax.resize(result.output.size());

  auto in = input.data();
  auto out = result.output.data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < batch * channels; ++plane) {
    const std::size_t base = plane * height * width;
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow, ++o) {
        const std::size_t top_left = base + 2 * oh * width + 2 * ow;
        const std::size_t window[4] = {top_left, top_left + 1, top_left + width,
                                       top_left + width + 1};
        std::size_t best = window[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (in[window[k]] > in[best]) best = window[k];
        }
        out[o] = in[best];
        result.argmax[o] = best;
      }
    }
  }
  result.output.check_finite_data("max pool output");
  return result;
}

void maxpool2_backward(Tensor& input, std::span<const std::size_t> argmax, const Tensor& output) {
  if (input.rank() != 4) throw DimensionError("max pool input must be NCHW");
  require_output_shape(output, Shape{input.dim(0), input.dim(1), input.dim(2) / 2, input.dim(3) / 2},
                       "max pool");
  if (argmax.size() != output.size()) {
    throw DimensionError("max pool argmax length does not match output size");
  }
  auto grad_in = input.grad();
  auto grad_out = output.grad();
  for (std::size_t o = 0; o < argmax.size(); ++o) {
    if (argmax[o] >= grad_in.size()) throw DimensionError("max pool argmax out of range");
    grad_in[argmax[o]] += grad_out[o];
  }
  input.check_finite_grad("max pool input");
}

Tensor fc_forward(const Tensor& input, const LayerParams& params) {
  check_fc_shapes(input, params);
  const auto batch = static_cast<Eigen::Index>(input.dim(0));
  const auto in_features = static_cast<Eigen::Index>(params.weights.dim(1));
  const auto out_features = static_cast<Eigen::Index>(params.weights.dim(0));
  Tensor output(Shape{input.dim(0), params.weights.dim(0)});

  ConstMatrixMap x(input.data().data(), batch, in_features);
  ConstMatrixMap w(params.weights.data().data(), out_features, in_features);
  ConstVectorMap b(params.bias.data().data(), out_features);
  MatrixMap y(output.data().data(), batch, out_features);
  y.noalias() = x * w.transpose();
  y.rowwise() += b.transpose();
  output.check_finite_data("fully connected output");
  return output;
}

void fc_backward(Tensor& input, LayerParams& params, const Tensor& output) {
  check_fc_shapes(input, params);
  require_output_shape(output, Shape{input.dim(0), params.weights.dim(0)}, "fully connected");
  const auto batch = static_cast<Eigen::Index>(input.dim(0));
  const auto in_features = static_cast<Eigen::Index>(params.weights.dim(1));
  const auto out_features = static_cast<Eigen::Index>(params.weights.dim(0));

  ConstMatrixMap x(input.data().data(), batch, in_features);
  ConstMatrixMap w(params.weights.data().data(), out_features, in_features);
  ConstMatrixMap g(output.grad().data(), batch, out_features);
  MatrixMap x_grad(input.grad().data(), batch, in_features);
  MatrixMap w_grad(params.weights.grad().data(), out_features, in_features);
  auto b_grad = params.bias.grad();
  const auto upstream = output.grad();
  const std::size_t rows = input.dim(0), outs = params.weights.dim(0);

  w_grad.noalias() += g.transpose() * x;
  for (std::size_t o = 0; o < outs; ++o) {
    double acc = 0.0;
    for (std::size_t n = 0; n < rows; ++n) acc += upstream[n * outs + o];
    b_grad[o] += acc;
  }
  x_grad.noalias() += g * w;
  input.check_finite_grad("fully connected input");
  params.weights.check_finite_grad("fully connected weights");
  params.bias.check_finite_grad("fully connected bias");
}

ClassLoss softmax_logloss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax log-loss expects N x C logits, got " +
                         shape_string(logits.shape()));
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (classes < 2) throw DimensionError("softmax log-loss needs at least two classes");
  if (labels.size() != batch) {
    throw BatchError("softmax log-loss got " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(batch) + " rows");
  }
  ClassLoss result{0.0, Tensor(Shape{batch, classes})};
  auto x = logits.data();
  auto grad = result.grad.data();
  for (std::size_t i = 0; i < batch; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw LabelError("label " + std::to_string(label) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = x.data() + i * classes;
    double* grad_row = grad.data() + i * classes;
    const double peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      grad_row[j] = std::exp(row[j] - peak);
      denom += grad_row[j];
    }
    result.loss += std::log(denom) - (row[label] - peak);
    for (std::size_t j = 0; j < classes; ++j) grad_row[j] /= denom;
    grad_row[label] -= 1.0;
  }
  if (!std::isfinite(result.loss)) throw NumericError("non-finite softmax log-loss");
  result.grad.check_finite_data("softmax log-loss gradient");
  return result;
}

}  // namespace confoundnet
