#pragma once

// Minimal differentiable operator set. There is no autodiff graph: every
// forward op has a matching *_grad function and composite models chain them
// by hand in reverse order.

#include <cstddef>
#include <span>
#include <vector>

#include "deepsim/image.hpp"

namespace deepsim::nn {

/// Channel-first activation tensor (C, H, W), row-major.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w);
  Tensor(int c, int h, int w, std::vector<double> values);

  [[nodiscard]] std::size_t plane() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] double& at(int c, int y, int x) {
    return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x];
  }
  [[nodiscard]] double at(int c, int y, int x) const {
    return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x];
  }
  [[nodiscard]] bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Converts between the channel-innermost Image layout and channel-first Tensor.
Tensor to_tensor(const Image& image);
Image to_image(const Tensor& t);
/// Stacks single-channel images as channels of one tensor.
Tensor stack_images(std::span<const Image* const> images);

/// k x k cross-correlation, stride 1, zero padding (k-1)/2. Kernel layout
/// (out, in, k, k).
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 1;
  std::vector<double> kernel;
  std::vector<double> bias;

  ConvLayer() = default;
  ConvLayer(int in_ch, int out_ch, int k);

  [[nodiscard]] std::size_t kernel_len() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel_size * kernel_size;
  }
  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

struct ConvGrads {
  std::vector<double> kernel;
  std::vector<double> bias;
  Tensor input;
};

Tensor conv2d(const Tensor& input, const ConvLayer& layer);
/// Kernel, bias and input gradients for upstream dLoss/dOutput.
ConvGrads conv2d_grad(const Tensor& input, const ConvLayer& layer, const Tensor& upstream);
/// Input gradient only; used where parameters are frozen.
Tensor conv2d_input_grad(const ConvLayer& layer, const Tensor& upstream);

Tensor relu(const Tensor& input);
/// Gates upstream by (input > 0); the gradient at exactly 0 is 0.
Tensor relu_grad(const Tensor& input, const Tensor& upstream);

/// 2x2 mean pooling, stride 2. Requires even height and width.
Tensor avgpool2(const Tensor& input);
Tensor avgpool2_grad(const Tensor& upstream);

/// Nearest-neighbour 2x upsampling.
Tensor upsample2(const Tensor& input);
Tensor upsample2_grad(const Tensor& upstream);

/// Channel concatenation, a's channels first.
Tensor concat(const Tensor& a, const Tensor& b);
/// Splits a concatenated gradient back into (first a_channels, rest).
std::pair<Tensor, Tensor> split_channels(const Tensor& t, int a_channels);

struct SoftmaxCeResult {
  double loss = 0.0;
  Tensor grad;
};

/// Mean per-pixel softmax cross-entropy. `labels` has one id per pixel.
SoftmaxCeResult softmax_ce(const Tensor& logits, std::span<const int> labels);
/// Per-pixel softmax probabilities (same shape as logits).
Tensor softmax(const Tensor& logits);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update; `t` is the 1-based step number.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               long t, const AdamConfig& cfg);

}  // namespace deepsim::nn
