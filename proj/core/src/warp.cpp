#include "deepsim/warp.hpp"

#include <algorithm>
#include <cmath>

namespace deepsim {

namespace {

struct Axis {
  int i0;
  int i1;
  double frac;
  bool clamped;
};

Axis locate(double v, int n) {
  const double hi = static_cast<double>(n - 1);
  Axis a{};
  a.clamped = v < 0.0 || v > hi;
  const double c = std::clamp(v, 0.0, hi);
  a.i0 = static_cast<int>(std::floor(c));
  a.i1 = std::min(a.i0 + 1, n - 1);
  a.frac = c - a.i0;
  return a;
}

}  // namespace

double bilinear_sample(const Image& image, double y, double x, int channel) {
  const Axis ay = locate(y, image.height());
  const Axis ax = locate(x, image.width());
  const double v00 = image.at(ay.i0, ax.i0, channel);
  const double v01 = image.at(ay.i0, ax.i1, channel);
  const double v10 = image.at(ay.i1, ax.i0, channel);
  const double v11 = image.at(ay.i1, ax.i1, channel);
  // Exact at nodes: a zero fraction contributes nothing from the far taps.
  const double top = v00 + ax.frac * (v01 - v00);
  const double bottom = v10 + ax.frac * (v11 - v10);
  return top + ay.frac * (bottom - top);
}

SampleGrad bilinear_sample_grad(const Image& image, double y, double x, int channel) {
  const Axis ay = locate(y, image.height());
  const Axis ax = locate(x, image.width());
  const double v00 = image.at(ay.i0, ax.i0, channel);
  const double v01 = image.at(ay.i0, ax.i1, channel);
  const double v10 = image.at(ay.i1, ax.i0, channel);
  const double v11 = image.at(ay.i1, ax.i1, channel);
  SampleGrad g;
  const double top = v00 + ax.frac * (v01 - v00);
  const double bottom = v10 + ax.frac * (v11 - v10);
  g.value = top + ay.frac * (bottom - top);
  g.d_dy = ay.clamped ? 0.0 : bottom - top;
  g.d_dx = ax.clamped ? 0.0
                      : (1.0 - ay.frac) * (v01 - v00) + ay.frac * (v11 - v10);
  const double wy = ay.frac;
  const double wx = ax.frac;
  g.taps = {SampleTap{ay.i0, ax.i0, (1 - wy) * (1 - wx)}, SampleTap{ay.i0, ax.i1, (1 - wy) * wx},
            SampleTap{ay.i1, ax.i0, wy * (1 - wx)}, SampleTap{ay.i1, ax.i1, wy * wx}};
  return g;
}

Image warp_image(const Image& image, const DisplacementField& field) {
  require_same_grid(image.grid(), field.grid(), "warp_image");
  const int h = image.height(), w = image.width(), c = image.channels();
  std::vector<double> out(image.size());
  std::size_t k = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sy = y + field.dy(y, x);
      const double sx = x + field.dx(y, x);
      for (int ch = 0; ch < c; ++ch) out[k++] = bilinear_sample(image, sy, sx, ch);
    }
  }
  return Image(h, w, c, std::move(out));
}

DisplacementField warp_image_grad(const Image& image, const DisplacementField& field,
                                  const Image& upstream) {
  require_same_grid(image.grid(), field.grid(), "warp_image_grad");
  require_same_grid(image.grid(), upstream.grid(), "warp_image_grad upstream");
  if (upstream.channels() != image.channels()) {
    throw ShapeError("warp_image_grad: upstream channel count differs from image");
  }
  const int h = image.height(), w = image.width(), c = image.channels();
  std::vector<double> grad(2 * image.grid().pixels(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sy = y + field.dy(y, x);
      const double sx = x + field.dx(y, x);
      double gy = 0.0, gx = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double up = upstream.at(y, x, ch);
        if (up == 0.0) continue;
        const SampleGrad s = bilinear_sample_grad(image, sy, sx, ch);
        gy += up * s.d_dy;
        gx += up * s.d_dx;
      }
      const std::size_t i = 2 * (static_cast<std::size_t>(y) * w + x);
      grad[i] = gy;
      grad[i + 1] = gx;
    }
  }
  return DisplacementField(h, w, std::move(grad));
}

LabelMap warp_labels(const LabelMap& labels, const DisplacementField& field) {
  require_same_grid(labels.grid(), field.grid(), "warp_labels");
  const int h = labels.height(), w = labels.width();
  std::vector<int> out(labels.grid().pixels());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sy = std::clamp(y + field.dy(y, x), 0.0, h - 1.0);
      const double sx = std::clamp(x + field.dx(y, x), 0.0, w - 1.0);
      const int iy = static_cast<int>(std::floor(sy + 0.5));
      const int ix = static_cast<int>(std::floor(sx + 0.5));
      out[static_cast<std::size_t>(y) * w + x] = labels.at(iy, ix);
    }
  }
  return LabelMap(h, w, labels.num_classes(), std::move(out));
}

Image warp_onehot(const LabelMap& labels, const DisplacementField& field) {
  return warp_image(labels.one_hot(), field);
}

Image jacobian_determinant(const DisplacementField& field) {
  const int h = field.height(), w = field.width();
  std::vector<double> det(field.grid().pixels());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Degenerate 1-pixel extents have zero derivative along that axis.
      double dyy = 0, dxy = 0, dyx = 0, dxx = 0;
      if (h > 1) {
        const int y0 = y + 1 < h ? y : y - 1;
        dyy = field.dy(y0 + 1, x) - field.dy(y0, x);
        dxy = field.dx(y0 + 1, x) - field.dx(y0, x);
      }
      if (w > 1) {
        const int x0 = x + 1 < w ? x : x - 1;
        dyx = field.dy(y, x0 + 1) - field.dy(y, x0);
        dxx = field.dx(y, x0 + 1) - field.dx(y, x0);
      }
      det[static_cast<std::size_t>(y) * w + x] = (1.0 + dyy) * (1.0 + dxx) - dyx * dxy;
    }
  }
  return Image(h, w, 1, std::move(det));
}

}  // namespace deepsim
