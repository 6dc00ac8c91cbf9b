#include "deepsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace deepsim::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Column matrix of shape (C*k*k, H*W): row (c, ky, kx) holds the input
// plane shifted by (ky - pad, kx - pad) with zero fill.
std::vector<double> im2col(const Tensor& in, int k) {
  const int pad = k / 2;
  const int h = in.height, w = in.width;
  const std::size_t hw = in.plane();
  std::vector<double> col(static_cast<std::size_t>(in.channels) * k * k * hw, 0.0);
  for (int c = 0; c < in.channels; ++c) {
    const double* src = in.data.data() + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col.data() + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        const int dy = ky - pad, dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const double* srow = src + static_cast<std::size_t>(sy) * w + dx;
          double* drow = dst + static_cast<std::size_t>(y) * w;
          for (int x = x_lo; x < x_hi; ++x) drow[x] = srow[x];
        }
      }
    }
  }
  return col;
}

void col2im_add(const std::vector<double>& col, int k, Tensor& out) {
  const int pad = k / 2;
  const int h = out.height, w = out.width;
  const std::size_t hw = out.plane();
  for (int c = 0; c < out.channels; ++c) {
    double* dst = out.data.data() + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col.data() + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        const int dy = ky - pad, dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          double* drow = dst + static_cast<std::size_t>(sy) * w + dx;
          const double* srow = src + static_cast<std::size_t>(y) * w;
          for (int x = x_lo; x < x_hi; ++x) drow[x] += srow[x];
        }
      }
    }
  }
}

void check_conv_input(const Tensor& input, const ConvLayer& layer, const char* what) {
  if (input.channels != layer.in_channels) {
    throw ShapeError(std::string(what) + ": input has " + std::to_string(input.channels) +
                     " channels, layer expects " + std::to_string(layer.in_channels));
  }
}

}  // namespace

Tensor::Tensor(int c, int h, int w)
    : channels(c), height(h), width(w),
      data(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w),
           0.0) {
  if (c < 1 || h < 1 || w < 1) throw std::invalid_argument("Tensor: dimensions must be positive");
}

Tensor::Tensor(int c, int h, int w, std::vector<double> values)
    : channels(c), height(h), width(w), data(std::move(values)) {
  if (c < 1 || h < 1 || w < 1) throw std::invalid_argument("Tensor: dimensions must be positive");
  if (data.size() != static_cast<std::size_t>(c) * h * w) {
    throw ShapeError("Tensor: data length does not match shape");
  }
  require_finite(data, "Tensor");
}

Tensor to_tensor(const Image& image) {
  Tensor t(image.channels(), image.height(), image.width());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < image.channels(); ++c) t.at(c, y, x) = image.at(y, x, c);
  return t;
}

Image to_image(const Tensor& t) {
  std::vector<double> out(t.size());
  std::size_t k = 0;
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x)
      for (int c = 0; c < t.channels; ++c) out[k++] = t.at(c, y, x);
  return Image(t.height, t.width, t.channels, std::move(out));
}

Tensor stack_images(std::span<const Image* const> images) {
  if (images.empty()) throw std::invalid_argument("stack_images: no images");
  const Grid g = images.front()->grid();
  Tensor t(static_cast<int>(images.size()), g.height, g.width);
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_grid(g, images[i]->grid(), "stack_images");
    if (images[i]->channels() != 1) throw ShapeError("stack_images: single-channel images only");
    std::copy(images[i]->data().begin(), images[i]->data().end(),
              t.data.begin() + static_cast<std::ptrdiff_t>(i * t.plane()));
  }
  return t;
}

ConvLayer::ConvLayer(int in_ch, int out_ch, int k)
    : in_channels(in_ch), out_channels(out_ch), kernel_size(k) {
  if (in_ch < 1 || out_ch < 1) throw std::invalid_argument("ConvLayer: channel counts must be positive");
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("ConvLayer: kernel size must be odd");
  kernel.assign(kernel_len(), 0.0);
  bias.assign(static_cast<std::size_t>(out_ch), 0.0);
}

Tensor conv2d(const Tensor& input, const ConvLayer& layer) {
  check_conv_input(input, layer, "conv2d");
  const int k = layer.kernel_size;
  const auto hw = static_cast<Eigen::Index>(input.plane());
  const auto rows = static_cast<Eigen::Index>(layer.in_channels) * k * k;
  Tensor out(layer.out_channels, input.height, input.width);
  ConstMapMat weights(layer.kernel.data(), layer.out_channels, rows);
  MapMat result(out.data.data(), layer.out_channels, hw);
  if (k == 1) {
    result.noalias() = weights * ConstMapMat(input.data.data(), rows, hw);
  } else {
    const std::vector<double> col = im2col(input, k);
    result.noalias() = weights * ConstMapMat(col.data(), rows, hw);
  }
  for (int c = 0; c < layer.out_channels; ++c) result.row(c).array() += layer.bias[c];
  return out;
}

ConvGrads conv2d_grad(const Tensor& input, const ConvLayer& layer, const Tensor& upstream) {
  check_conv_input(input, layer, "conv2d_grad");
  if (upstream.channels != layer.out_channels || upstream.height != input.height ||
      upstream.width != input.width) {
    throw ShapeError("conv2d_grad: upstream shape does not match layer output");
  }
  const int k = layer.kernel_size;
  const auto hw = static_cast<Eigen::Index>(input.plane());
  const auto rows = static_cast<Eigen::Index>(layer.in_channels) * k * k;
  ConstMapMat up(upstream.data.data(), layer.out_channels, hw);

  ConvGrads g;
  g.kernel.assign(layer.kernel_len(), 0.0);
  g.bias.assign(static_cast<std::size_t>(layer.out_channels), 0.0);
  MapMat dw(g.kernel.data(), layer.out_channels, rows);
  if (k == 1) {
    dw.noalias() = up * ConstMapMat(input.data.data(), rows, hw).transpose();
  } else {
    const std::vector<double> col = im2col(input, k);
    dw.noalias() = up * ConstMapMat(col.data(), rows, hw).transpose();
  }
  // Plain loop: Eigen's vectorized sum peels by pointer alignment, which would
  // make the result depend on where the buffer was allocated.
  for (int c = 0; c < layer.out_channels; ++c) {
    const double* row = upstream.data.data() + static_cast<std::size_t>(c) * upstream.plane();
    double s = 0.0;
    for (Eigen::Index i = 0; i < hw; ++i) s += row[i];
    g.bias[c] = s;
  }
  g.input = conv2d_input_grad(layer, upstream);
  return g;
}

Tensor conv2d_input_grad(const ConvLayer& layer, const Tensor& upstream) {
  if (upstream.channels != layer.out_channels) {
    throw ShapeError("conv2d_input_grad: upstream channel count does not match layer");
  }
  const int k = layer.kernel_size;
  const auto hw = static_cast<Eigen::Index>(upstream.plane());
  const auto rows = static_cast<Eigen::Index>(layer.in_channels) * k * k;
  ConstMapMat weights(layer.kernel.data(), layer.out_channels, rows);
  ConstMapMat up(upstream.data.data(), layer.out_channels, hw);
  Tensor din(layer.in_channels, upstream.height, upstream.width);
  if (k == 1) {
    MapMat(din.data.data(), rows, hw).noalias() = weights.transpose() * up;
  } else {
    std::vector<double> col(static_cast<std::size_t>(rows * hw));
    MapMat(col.data(), rows, hw).noalias() = weights.transpose() * up;
    col2im_add(col, k, din);
  }
  return din;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_grad(const Tensor& input, const Tensor& upstream) {
  if (!input.same_shape(upstream)) throw ShapeError("relu_grad: shape mismatch");
  Tensor out = upstream;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (!(input.data[i] > 0.0)) out.data[i] = 0.0;
  }
  return out;
}

Tensor avgpool2(const Tensor& input) {
  if (input.height % 2 != 0 || input.width % 2 != 0) {
    throw ShapeError("avgpool2: height and width must be even");
  }
  Tensor out(input.channels, input.height / 2, input.width / 2);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = 0.25 * (input.at(c, 2 * y, 2 * x) + input.at(c, 2 * y, 2 * x + 1) +
                                  input.at(c, 2 * y + 1, 2 * x) + input.at(c, 2 * y + 1, 2 * x + 1));
  return out;
}

Tensor avgpool2_grad(const Tensor& upstream) {
  Tensor out(upstream.channels, upstream.height * 2, upstream.width * 2);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = 0.25 * upstream.at(c, y / 2, x / 2);
  return out;
}

Tensor upsample2(const Tensor& input) {
  Tensor out(input.channels, input.height * 2, input.width * 2);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = input.at(c, y / 2, x / 2);
  return out;
}

Tensor upsample2_grad(const Tensor& upstream) {
  if (upstream.height % 2 != 0 || upstream.width % 2 != 0) {
    throw ShapeError("upsample2_grad: height and width must be even");
  }
  Tensor out(upstream.channels, upstream.height / 2, upstream.width / 2);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = upstream.at(c, 2 * y, 2 * x) + upstream.at(c, 2 * y, 2 * x + 1) +
                          upstream.at(c, 2 * y + 1, 2 * x) + upstream.at(c, 2 * y + 1, 2 * x + 1);
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("concat: spatial mismatch");
  Tensor out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, int a_channels) {
  if (a_channels < 1 || a_channels >= t.channels) throw ShapeError("split_channels: bad split");
  Tensor a(a_channels, t.height, t.width);
  Tensor b(t.channels - a_channels, t.height, t.width);
  const auto mid = t.data.begin() + static_cast<std::ptrdiff_t>(a.size());
  std::copy(t.data.begin(), mid, a.data.begin());
  std::copy(mid, t.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

Tensor softmax(const Tensor& logits) {
  Tensor p(logits.channels, logits.height, logits.width);
  const std::size_t hw = logits.plane();
  for (std::size_t i = 0; i < hw; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < logits.channels; ++c) mx = std::max(mx, logits.data[c * hw + i]);
    double z = 0.0;
    for (int c = 0; c < logits.channels; ++c) {
      const double e = std::exp(logits.data[c * hw + i] - mx);
      p.data[c * hw + i] = e;
      z += e;
    }
    for (int c = 0; c < logits.channels; ++c) p.data[c * hw + i] /= z;
  }
  return p;
}

SoftmaxCeResult softmax_ce(const Tensor& logits, std::span<const int> labels) {
  const std::size_t hw = logits.plane();
  if (labels.size() != hw) throw ShapeError("softmax_ce: label count does not match pixels");
  SoftmaxCeResult r;
  r.grad = Tensor(logits.channels, logits.height, logits.width);
  const double inv_n = 1.0 / static_cast<double>(hw);
  double total = 0.0;
  for (std::size_t i = 0; i < hw; ++i) {
    const int label = labels[i];
    if (label < 0 || label >= logits.channels) {
      throw std::invalid_argument("softmax_ce: label " + std::to_string(label) +
                                  " >= num_classes " + std::to_string(logits.channels));
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < logits.channels; ++c) mx = std::max(mx, logits.data[c * hw + i]);
    double z = 0.0;
    for (int c = 0; c < logits.channels; ++c) z += std::exp(logits.data[c * hw + i] - mx);
    const double log_z = std::log(z);
    total += log_z - (logits.data[label * hw + i] - mx);
    for (int c = 0; c < logits.channels; ++c) {
      const double p = std::exp(logits.data[c * hw + i] - mx - log_z);
      r.grad.data[c * hw + i] = (p - (c == label ? 1.0 : 0.0)) * inv_n;
    }
  }
  r.loss = total * inv_n;
  return r;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               long t, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and state sizes differ");
  }
  if (t < 1) throw std::invalid_argument("adam_step: step number must be >= 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

}  // namespace deepsim::nn
