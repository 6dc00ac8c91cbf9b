#pragma once

// Spatial transformer: I o Phi by bilinear sampling with border replication,
// plus the gradient of the warped image with respect to the displacement.

#include <array>

#include "deepsim/image.hpp"

namespace deepsim {

/// One bilinear tap: source pixel and its interpolation weight.
struct SampleTap {
  int y = 0;
  int x = 0;
  double weight = 0.0;
};

/// A bilinear sample with its derivatives. The four taps are the stencil for
/// d value / d input; weights lie in [0, 1] and sum to 1. Derivatives in a
/// direction whose coordinate was clamped are zero.
struct SampleGrad {
  double value = 0.0;
  double d_dy = 0.0;
  double d_dx = 0.0;
  std::array<SampleTap, 4> taps{};
};

/// Bilinear interpolation at (y, x) after clamping to [0, H-1] x [0, W-1].
double bilinear_sample(const Image& image, double y, double x, int channel = 0);
SampleGrad bilinear_sample_grad(const Image& image, double y, double x, int channel = 0);

/// output[p] = bilinear_sample(image, p + u(p)) for every channel.
Image warp_image(const Image& image, const DisplacementField& field);

/// dLoss/du given dLoss/d(warped image). `upstream` has the image's shape.
DisplacementField warp_image_grad(const Image& image, const DisplacementField& field,
                                  const Image& upstream);

/// Nearest-neighbour transport; class ids are preserved exactly.
LabelMap warp_labels(const LabelMap& labels, const DisplacementField& field);

/// Bilinear warp of the one-hot encoding (num_classes channels).
Image warp_onehot(const LabelMap& labels, const DisplacementField& field);

/// det(I + grad u) per pixel. Forward differences, backward on the last
/// row and column.
Image jacobian_determinant(const DisplacementField& field);

}  // namespace deepsim
