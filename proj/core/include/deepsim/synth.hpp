#pragma once

// Synthetic registration data: blob scenes with label maps, smooth
// ground-truth warps, and independent acquisition noise per image.

#include <cstdint>

#include "deepsim/image.hpp"

namespace deepsim {

struct SceneSpec {
  int height = 64;
  int width = 64;
  int num_blobs = 5;
  double min_radius = 3.0;
  double max_radius = 6.0;
  /// Background plus blob classes; blob class c (1-based) has intensity
  /// class_intensity(c).
  int num_classes = 4;
  double background = 0.0;
  double min_intensity = 0.4;
  double max_intensity = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  /// Peak intensity of blob class c >= 1, evenly spaced on [min, max].
  [[nodiscard]] double class_intensity(int c) const;
  /// Mean foreground peak intensity minus background.
  [[nodiscard]] double foreground_contrast() const;
};

struct WarpSpec {
  double amplitude = 4.0;
  double smoothness_sigma = 40.0;
  std::uint64_t seed = 0;
};

struct Scene {
  Image image;
  LabelMap labels;
};

/// Throws std::invalid_argument on infeasible specs (grid not divisible by 4,
/// blobs that cannot fit, bad ranges).
void validate(const SceneSpec& spec);
void validate(const WarpSpec& spec);

/// Scene `index` of the spec: non-overlapping radial bumps, each labelled by
/// its support disk, plus Gaussian noise of noise_sigma. Deterministic in
/// (seed, index).
Scene gen_scene(const SceneSpec& spec, std::uint64_t index);
/// The same scene without noise.
Scene gen_clean_scene(const SceneSpec& spec, std::uint64_t index);

/// Gaussian white noise per component, blurred by a truncated Gaussian
/// (radius 3 sigma, replicated border), rescaled so the largest component
/// magnitude equals the amplitude.
DisplacementField random_smooth_field(const Grid& grid, const WarpSpec& spec);

struct SynthPair {
  Scene moving;
  Scene fixed;
  DisplacementField truth;
};

/// moving = clean scene + noise; fixed = clean scene warped by truth + noise.
/// Warping the moving image by truth reproduces the clean fixed image.
SynthPair make_pair(const SceneSpec& spec, const WarpSpec& warp_spec, std::uint64_t index);

/// Additive Gaussian noise drawn from `stream`.
Image add_noise(const Image& image, double sigma, std::uint64_t seed, std::uint64_t stream);

}  // namespace deepsim
