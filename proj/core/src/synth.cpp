#include "deepsim/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "deepsim/rng.hpp"
#include "deepsim/warp.hpp"

namespace deepsim {

namespace {

constexpr int kPlacementAttempts = 200;
constexpr int kLayoutAttempts = 100;

enum Stream : std::uint64_t { kLayout = 1, kMovingNoise = 2, kFixedNoise = 3, kWarp = 4 };

Rng pair_rng(std::uint64_t seed, std::uint64_t index) { return Rng(seed).split(index); }

// Flat-topped radial profile: 1 at the centre, 0 at the support boundary.
double bump(double t) { return t >= 1.0 ? 0.0 : 1.0 - std::pow(t, 6); }

struct Blob {
  double cy, cx, radius;
  int label;
};

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    s += k[i + radius];
  }
  for (double& v : k) v /= s;
  return k;
}

// Separable blur with replicated borders.
std::vector<double> blur(const std::vector<double>& f, int h, int w, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(f.size()), out(f.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += k[d + r] * f[static_cast<std::size_t>(y) * w + std::clamp(x + d, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += k[d + r] * tmp[static_cast<std::size_t>(std::clamp(y + d, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  return out;
}

}  // namespace

double SceneSpec::class_intensity(int c) const {
  if (c <= 0) return background;
  if (num_classes <= 2) return max_intensity;
  return min_intensity + (max_intensity - min_intensity) * (c - 1) / (num_classes - 2);
}

double SceneSpec::foreground_contrast() const {
  double s = 0.0;
  for (int c = 1; c < num_classes; ++c) s += class_intensity(c);
  return num_classes > 1 ? s / (num_classes - 1) - background : 0.0;
}

void validate(const SceneSpec& s) {
  if (s.height < 4 || s.width < 4 || s.height % 4 != 0 || s.width % 4 != 0) {
    throw std::invalid_argument("SceneSpec: grid must be positive and divisible by 4");
  }
  if (s.num_blobs < 0) throw std::invalid_argument("SceneSpec: num_blobs must be >= 0");
  if (s.num_classes < 1 || (s.num_blobs > 0 && s.num_classes < 2)) {
    throw std::invalid_argument("SceneSpec: need at least one blob class");
  }
  if (!(s.min_radius > 0.0) || s.max_radius < s.min_radius) {
    throw std::invalid_argument("SceneSpec: bad radius range");
  }
  if (s.num_blobs > 0 && 2.0 * s.max_radius + 2.0 > std::min(s.height, s.width)) {
    throw std::invalid_argument("SceneSpec: blob radius " + std::to_string(s.max_radius) +
                                " does not fit a " + std::to_string(s.height) + "x" +
                                std::to_string(s.width) + " grid");
  }
  if (!(s.noise_sigma >= 0.0)) throw std::invalid_argument("SceneSpec: noise_sigma must be >= 0");
}

void validate(const WarpSpec& s) {
  if (!(s.amplitude >= 0.0)) throw std::invalid_argument("WarpSpec: amplitude must be >= 0");
  if (!(s.smoothness_sigma > 0.0)) throw std::invalid_argument("WarpSpec: smoothness_sigma must be > 0");
}

Scene gen_clean_scene(const SceneSpec& spec, std::uint64_t index) {
  validate(spec);
  const int h = spec.height, w = spec.width;
  RngCursor draw(pair_rng(spec.seed, index).split(kLayout));

  // Greedy placement can paint itself into a corner; redraw the whole layout
  // when a blob does not fit.
  std::vector<Blob> blobs;
  for (int layout = 0; layout < kLayoutAttempts && static_cast<int>(blobs.size()) < spec.num_blobs; ++layout) {
    blobs.clear();
    for (int b = 0; b < spec.num_blobs; ++b) {
      const double r = draw.uniform(spec.min_radius, spec.max_radius);
      const int label = 1 + static_cast<int>(draw.below(static_cast<std::uint64_t>(spec.num_classes - 1)));
      bool placed = false;
      for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
        const double cy = draw.uniform(r + 1.0, h - r - 2.0);
        const double cx = draw.uniform(r + 1.0, w - r - 2.0);
        placed = std::all_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
          return std::hypot(cy - o.cy, cx - o.cx) >= r + o.radius + 2.0;
        });
        if (placed) blobs.push_back({cy, cx, r, label});
      }
      if (!placed) break;
    }
  }
  if (static_cast<int>(blobs.size()) < spec.num_blobs) {
    throw std::invalid_argument("SceneSpec: cannot place " + std::to_string(spec.num_blobs) +
                                " non-overlapping blobs");
  }

  std::vector<double> img(static_cast<std::size_t>(h) * w, spec.background);
  std::vector<int> lab(static_cast<std::size_t>(h) * w, 0);
  for (const Blob& b : blobs) {
    const double peak = spec.class_intensity(b.label) - spec.background;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double t = std::hypot(y - b.cy, x - b.cx) / b.radius;
        if (t >= 1.0) continue;
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        img[i] += peak * bump(t);
        lab[i] = b.label;
      }
    }
  }
  return Scene{Image(h, w, 1, std::move(img)), LabelMap(h, w, spec.num_classes, std::move(lab))};
}

Image add_noise(const Image& image, double sigma, std::uint64_t seed, std::uint64_t stream) {
  if (sigma == 0.0) return image;
  const Rng rng = Rng(seed).split(stream);
  std::vector<double> v(image.data().begin(), image.data().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += sigma * rng.normal(i);
  return Image(image.height(), image.width(), image.channels(), std::move(v));
}

Scene gen_scene(const SceneSpec& spec, std::uint64_t index) {
  Scene s = gen_clean_scene(spec, index);
  const std::uint64_t noise_seed = pair_rng(spec.seed, index).split(kMovingNoise).seed();
  s.image = add_noise(s.image, spec.noise_sigma, noise_seed, 0);
  return s;
}

DisplacementField random_smooth_field(const Grid& grid, const WarpSpec& spec) {
  validate(spec);
  const int h = grid.height, w = grid.width;
  if (spec.amplitude == 0.0) return DisplacementField::zeros(h, w);
  const Rng rng(spec.seed);
  const auto kernel = gaussian_kernel(spec.smoothness_sigma);
  std::array<std::vector<double>, 2> comp;
  double peak = 0.0;
  for (int c = 0; c < 2; ++c) {
    const Rng stream = rng.split(static_cast<std::uint64_t>(c));
    std::vector<double> noise(grid.pixels());
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = stream.normal(i);
    comp[c] = blur(noise, h, w, kernel);
    for (double v : comp[c]) peak = std::max(peak, std::abs(v));
  }
  std::vector<double> u(2 * grid.pixels(), 0.0);
  if (peak > 0.0) {
    const double scale = spec.amplitude / peak;
    for (std::size_t i = 0; i < grid.pixels(); ++i) {
      u[2 * i] = scale * comp[0][i];
      u[2 * i + 1] = scale * comp[1][i];
    }
  }
  return DisplacementField(h, w, std::move(u));
}

SynthPair make_pair(const SceneSpec& spec, const WarpSpec& warp_spec, std::uint64_t index) {
  const Scene clean = gen_clean_scene(spec, index);
  WarpSpec ws = warp_spec;
  ws.seed = Rng(warp_spec.seed).split(index).split(kWarp).seed();
  DisplacementField truth = random_smooth_field(clean.image.grid(), ws);

  const Rng base = pair_rng(spec.seed, index);
  SynthPair p;
  p.moving = Scene{add_noise(clean.image, spec.noise_sigma, base.split(kMovingNoise).seed(), 0), clean.labels};
  p.fixed = Scene{add_noise(warp_image(clean.image, truth), spec.noise_sigma, base.split(kFixedNoise).seed(), 0),
                  warp_labels(clean.labels, truth)};
  p.truth = std::move(truth);
  return p;
}

}  // namespace deepsim
