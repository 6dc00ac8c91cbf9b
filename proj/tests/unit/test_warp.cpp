#include <cmath>

#include "doctest.h"

#include "deepsim/warp.hpp"
#include "support/oracles.hpp"

using namespace deepsim;

namespace {

Image ramp(int h, int w) {
  std::vector<double> v;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) v.push_back(10.0 * y + x);
  return Image(h, w, 1, std::move(v));
}

// Integer shift with edge clamp: out[y][x] = in[clamp(y+dy)][clamp(x+dx)].
Image integer_shift(const Image& in, int dy, int dx) {
  std::vector<double> v;
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x)
      v.push_back(in.at(std::clamp(y + dy, 0, in.height() - 1), std::clamp(x + dx, 0, in.width() - 1)));
  return Image(in.height(), in.width(), 1, std::move(v));
}

double squared_error(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  return s;
}

}  // namespace

TEST_CASE("bilinear sample at nodes, midpoints and clamped coordinates") {
  const Image img(2, 2, 1, {0, 1, 2, 3});
  CHECK(bilinear_sample(img, 0, 0) == 0.0);
  CHECK(bilinear_sample(img, 1, 1) == 3.0);
  CHECK(bilinear_sample(img, 0, 1) == 1.0);
  CHECK(bilinear_sample(img, 0.5, 0.5) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(bilinear_sample(img, -3.0, -3.0) == 0.0);
  CHECK(bilinear_sample(img, 7.0, -1.0) == 2.0);

  const Image r = oracle::random_image(5, 6, 1);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) CHECK(bilinear_sample(r, y, x) == r.at(y, x));
}

TEST_CASE("bilinear stencil weights are a partition of unity") {
  const Image r = oracle::random_image(6, 6, 2);
  const Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const double y = rng.uniform(2 * i, -1.0, 7.0), x = rng.uniform(2 * i + 1, -1.0, 7.0);
    const SampleGrad s = bilinear_sample_grad(r, y, x);
    double sum = 0, value = 0;
    for (const auto& t : s.taps) {
      CHECK(t.weight >= 0.0);
      CHECK(t.weight <= 1.0);
      sum += t.weight;
      value += t.weight * r.at(t.y, t.x);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(value == doctest::Approx(s.value).epsilon(1e-12));
    CHECK(s.value == bilinear_sample(r, y, x));
  }
}

TEST_CASE("warp_image identities and shifts") {
  const Image img = oracle::random_image(7, 5, 3);
  CHECK(warp_image(img, DisplacementField::zeros(7, 5)) == img);

  const Image rampi = ramp(4, 4);
  CHECK(warp_image(rampi, DisplacementField::constant(4, 4, 0.0, 1.0)) == integer_shift(rampi, 0, 1));
  CHECK(warp_image(rampi, DisplacementField::constant(4, 4, -1.0, 0.0)) == integer_shift(rampi, -1, 0));

  CHECK_THROWS_AS(warp_image(img, DisplacementField::zeros(5, 7)), ShapeError);
}

TEST_CASE("warped values stay within the source range") {
  const Image img = oracle::random_image(8, 8, 4, -2.0, 3.0);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Image w = warp_image(img, oracle::random_field(8, 8, 100 + s, 4.0));
    CHECK(w.min_value() >= img.min_value() - 1e-12);
    CHECK(w.max_value() <= img.max_value() + 1e-12);
  }
}

TEST_CASE("warping toward a translated target recovers the shift") {
  const Image src = oracle::random_image(8, 8, 21);
  const Image target = integer_shift(src, 1, -2);
  int best_dy = 99, best_dx = 99;
  double best = 1e300;
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) {
      const double e = squared_error(warp_image(src, DisplacementField::constant(8, 8, dy, dx)), target);
      if (e < best) {
        best = e;
        best_dy = dy;
        best_dx = dx;
      }
    }
  CHECK(best_dy == 1);
  CHECK(best_dx == -2);
  CHECK(best < squared_error(src, target));
}

TEST_CASE("warp_image_grad") {
  SUBCASE("constant image has zero gradient") {
    const Image c = Image::filled(6, 6, 1, 2.5);
    const auto g = warp_image_grad(c, oracle::random_field(6, 6, 3, 2.0), oracle::random_image(6, 6, 9));
    for (double v : g.data()) CHECK(v == 0.0);
  }
  SUBCASE("zero upstream has zero gradient") {
    const auto g = warp_image_grad(oracle::random_image(6, 6, 1), oracle::random_field(6, 6, 3, 2.0),
                                   Image::filled(6, 6, 1, 0.0));
    for (double v : g.data()) CHECK(v == 0.0);
  }
  SUBCASE("matches central differences away from kinks") {
    const Image img = oracle::random_image(6, 6, 31);
    const Image weights = oracle::random_image(6, 6, 32, -1.0, 1.0);
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 5 && seed < 200; ++seed) {
      // Fields mostly interior so clamping does not dominate.
      std::vector<double> u;
      const Rng rng(1000 + seed);
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
          u.push_back(std::clamp(rng.uniform(2 * (y * 6 + x), -1.5, 1.5), 0.2 - y, 4.8 - y));
          u.push_back(std::clamp(rng.uniform(2 * (y * 6 + x) + 1, -1.5, 1.5), 0.2 - x, 4.8 - x));
        }
      const DisplacementField f(6, 6, u);
      if (!oracle::kink_free(f, 1e-3)) continue;
      ++checked;
      auto functional = [&](const std::vector<double>& v) {
        const Image w = warp_image(img, DisplacementField(6, 6, v));
        double s = 0;
        for (std::size_t i = 0; i < w.size(); ++i) s += weights.data()[i] * w.data()[i];
        return s;
      };
      const auto numeric = oracle::central_difference(functional, u, 1e-5);
      const auto analytic = warp_image_grad(img, f, weights);
      const std::vector<double> a(analytic.data().begin(), analytic.data().end());
      CHECK(oracle::max_relative_error(a, numeric) < 1e-6);
    }
    CHECK(checked == 5);
  }
  SUBCASE("multi-channel gradient sums over channels") {
    const Image img = oracle::random_image(5, 5, 3, 0.0, 1.0, 3);
    const Image up = oracle::random_image(5, 5, 4, -1.0, 1.0, 3);
    const auto f = DisplacementField::constant(5, 5, 0.3, 0.6);
    const auto g = warp_image_grad(img, f, up);
    double expect_y = 0;
    for (int c = 0; c < 3; ++c) expect_y += up.at(2, 2, c) * bilinear_sample_grad(img, 2.3, 2.6, c).d_dy;
    CHECK(g.dy(2, 2) == doctest::Approx(expect_y).epsilon(1e-12));
  }
}

TEST_CASE("gradient is zero in a clamped direction") {
  const Image img = oracle::random_image(4, 4, 8);
  const auto s = bilinear_sample_grad(img, -2.0, 1.5);
  CHECK(s.d_dy == 0.0);
  CHECK(s.d_dx != 0.0);
}

TEST_CASE("warp_labels nearest neighbour") {
  const LabelMap l(3, 4, 4, {0, 1, 2, 3, 1, 1, 2, 2, 3, 3, 0, 0});
  CHECK(warp_labels(l, DisplacementField::zeros(3, 4)) == l);
  const LabelMap shifted = warp_labels(l, DisplacementField::constant(3, 4, 0.0, 1.0));
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) CHECK(shifted.at(y, x) == l.at(y, std::min(x + 1, 3)));
  CHECK(warp_labels(l, oracle::random_field(3, 4, 4, 0.49)) == l);
}

TEST_CASE("warp_onehot") {
  const LabelMap l(4, 4, 3, {0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 1, 1, 2, 2, 1, 1});
  CHECK(warp_onehot(l, DisplacementField::zeros(4, 4)) == l.one_hot());

  const Image w = warp_onehot(l, oracle::random_field(4, 4, 12, 3.0));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      double s = 0;
      for (int c = 0; c < 3; ++c) {
        CHECK(w.at(y, x, c) >= 0.0);
        CHECK(w.at(y, x, c) <= 1.0);
        s += w.at(y, x, c);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }

  // Vertical mask edge between columns 1 and 2; half-pixel shift.
  const Image half = warp_onehot(l, DisplacementField::constant(4, 4, 0.0, 0.5));
  CHECK(half.at(0, 1, 1) == doctest::Approx(0.5));
  CHECK(half.at(0, 1, 0) == doctest::Approx(0.5));
  CHECK(half.at(0, 0, 0) == 1.0);
}

TEST_CASE("jacobian determinant") {
  const Image ones = jacobian_determinant(DisplacementField::zeros(5, 5));
  for (double v : ones.data()) CHECK(v == 1.0);

  std::vector<double> u;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      u.push_back(0.1 * y);
      u.push_back(0.1 * x);
    }
  const Image det = jacobian_determinant(DisplacementField(6, 6, u));
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) CHECK(det.at(y, x) == doctest::Approx(1.21).epsilon(1e-12));

  // Column 1 pushed two pixels right folds over column 2.
  std::vector<double> fold(18, 0.0);
  for (int y = 0; y < 3; ++y) fold[2 * (y * 3 + 1) + 1] = 2.0;
  const Image fdet = jacobian_determinant(DisplacementField(3, 3, fold));
  int folded = 0;
  for (double v : fdet.data()) folded += v <= 0.0;
  CHECK(folded >= 1);
  CHECK(fdet.at(0, 1) == doctest::Approx(-1.0));
}
