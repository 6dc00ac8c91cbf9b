#include <cmath>
#include <filesystem>

#include "doctest.h"

#include "deepsim/similarity.hpp"
#include "deepsim/tensor_io.hpp"
#include "deepsim/warp.hpp"
#include "support/oracles.hpp"

using namespace deepsim;

namespace {

// Sampled coordinates stay interior and at least 0.15 px from integers.
DisplacementField kink_free_field(int h, int w, std::uint64_t seed) {
  const Rng rng(seed);
  std::vector<double> u;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = 2 * static_cast<std::size_t>(y * w + x);
      u.push_back((y < h / 2 ? 1.0 : -1.0) * rng.uniform(i, 0.15, 0.85));
      u.push_back((x < w / 2 ? 1.0 : -1.0) * rng.uniform(i + 1, 0.15, 0.85));
    }
  return DisplacementField(h, w, std::move(u));
}

FeaturePyramid random_pyramid(std::uint64_t seed, double lo = 0.0) {
  FeaturePyramid p;
  p.levels.push_back(oracle::random_tensor(4, 4, 4, seed, lo, 1.0));
  p.levels.push_back(oracle::random_tensor(6, 2, 2, seed + 1, lo, 1.0));
  p.levels.push_back(oracle::random_tensor(8, 1, 1, seed + 2, lo, 1.0));
  return p;
}

LabelMap quadrant_labels(int h, int w, int shift) {
  std::vector<int> v;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) v.push_back((y + shift) * 2 / h % 2 + ((x + shift) * 2 / w % 2 ? 1 : 0));
  return LabelMap(h, w, 3, std::move(v));
}

std::vector<MetricKind> every_metric() {
  auto seg = std::make_shared<SegUNet>(3, Rng(31));
  seg->freeze();
  return {MseMetric{}, NccMetric{3}, NccMetric{5}, NccSupMetric{3, 0.5}, DeepSimMetric{seg, "memory"},
          RandSimMetric{4, random_extractor(4)}};
}

}  // namespace

TEST_CASE("mse") {
  CHECK(mse(Image(1, 2, 1, {0, 2}), Image(1, 2, 1, {1, 0})) == 2.5);
  const Image a = oracle::random_image(5, 5, 1), b = oracle::random_image(5, 5, 2);
  CHECK(mse(a, a) == 0.0);
  CHECK(mse(a, b) == mse(b, a));
  CHECK_THROWS_AS(mse(a, oracle::random_image(5, 4, 2)), ShapeError);
}

TEST_CASE("patch ncc") {
  const Image a = oracle::random_image(7, 7, 11);
  std::vector<double> neg, affine;
  for (double v : a.data()) {
    neg.push_back(-v);
    affine.push_back(2 * v + 3);
  }
  CHECK(patch_ncc(a, a, 3) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(patch_ncc(a, Image(7, 7, 1, neg), 3) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(patch_ncc(a, Image(7, 7, 1, affine), 5) == doctest::Approx(1.0).epsilon(1e-6));

  const Image b = oracle::random_image(7, 7, 12);
  for (int win : {3, 5, 9}) CHECK(std::abs(patch_ncc(a, b, win) - oracle::naive_patch_ncc(a, b, win)) < 1e-10);
  const double v = patch_ncc(a, b, 3);
  CHECK(v >= 0.0);
  CHECK(v <= 1.0);

  // Constant images stay finite.
  CHECK(patch_ncc(Image::filled(4, 4, 1, 1.0), Image::filled(4, 4, 1, 2.0), 3) == 0.0);
  CHECK_THROWS_AS(patch_ncc(a, oracle::random_image(6, 7, 1), 3), ShapeError);
}

TEST_CASE("single-window ncc is a squared centered cosine") {
  const Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(25), b(25);
    for (int i = 0; i < 25; ++i) {
      a[i] = rng.uniform(100 * t + i, -1, 1);
      b[i] = rng.uniform(100 * t + 50 + i, -1, 1);
    }
    CHECK(std::abs(window_ncc(a, b) - oracle::squared_centered_cosine(a, b)) < 1e-10);
  }
}

TEST_CASE("patch ncc gradient") {
  const Image a = oracle::random_image(7, 6, 21), b = oracle::random_image(7, 6, 22);
  for (int win : {3, 5}) {
    const Image g = patch_ncc_grad(a, b, win);
    auto f = [&](const std::vector<double>& x) { return patch_ncc(Image(7, 6, 1, x), b, win); };
    const auto numeric = oracle::central_difference(f, std::vector<double>(a.data().begin(), a.data().end()), 1e-6);
    CHECK(oracle::max_relative_error(std::vector<double>(g.data().begin(), g.data().end()), numeric, 1e-6) < 1e-5);
  }
}

TEST_CASE("cosine and deepsim") {
  const double zero[] = {0, 0, 0}, one[] = {1, 2, 3};
  CHECK(cosine_similarity(zero, one) == 0.0);
  CHECK(cosine_similarity(zero, zero) == 0.0);
  CHECK(cosine_similarity(one, one) == doctest::Approx(1.0).epsilon(1e-15));

  const auto p = random_pyramid(1, 0.01);
  CHECK(std::abs(deepsim::deepsim(p, p) - 1.0) < 1e-6);

  // Disjoint channel support at every location.
  FeaturePyramid a = random_pyramid(2), b = random_pyramid(3);
  for (std::size_t l = 0; l < 3; ++l) {
    auto& ta = a.levels[l];
    auto& tb = b.levels[l];
    for (int c = 0; c < ta.channels; ++c)
      for (int i = 0; i < static_cast<int>(ta.plane()); ++i) (c % 2 ? ta : tb).data[c * ta.plane() + i] = 0.0;
  }
  CHECK(deepsim::deepsim(a, b) == 0.0);

  const auto q = random_pyramid(4), r = random_pyramid(5);
  CHECK(std::abs(deepsim::deepsim(q, r) - oracle::naive_deepsim(q.levels, r.levels)) < 1e-10);

  // Positive per-location rescaling.
  auto scaled = r;
  const Rng rng(6);
  for (auto& t : scaled.levels)
    for (std::size_t i = 0; i < t.plane(); ++i) {
      const double s = rng.uniform(i, 0.1, 10.0);
      for (int c = 0; c < t.channels; ++c) t.data[c * t.plane() + i] *= s;
    }
  CHECK(deepsim::deepsim(q, scaled) == doctest::Approx(deepsim::deepsim(q, r)).epsilon(1e-12));

  auto bad = r;
  bad.levels.pop_back();
  CHECK_THROWS_AS(deepsim::deepsim(q, bad), ShapeError);
}

TEST_CASE("deepsim gradient") {
  const auto a = random_pyramid(7, 0.05), b = random_pyramid(8);
  const auto g = deepsim_grad(a, b);
  for (std::size_t l = 0; l < 3; ++l) {
    auto f = [&](const std::vector<double>& x) {
      auto m = a;
      m.levels[l].data = x;
      return deepsim::deepsim(m, b);
    };
    CHECK(oracle::max_relative_error(g.levels[l].data, oracle::central_difference(f, a.levels[l].data, 1e-6), 1e-6) <
          1e-6);
  }
}

TEST_CASE("diffusion regularizer") {
  CHECK(diffusion_regularizer(DisplacementField::constant(6, 5, 1.5, -2.0)) == 0.0);

  const int n = 5;
  std::vector<double> u;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      u.push_back(static_cast<double>(x));
      u.push_back(0.0);
    }
  // d(u_y)/dx = 1 on every pixel except the last column: n * (n - 1) unit terms.
  CHECK(diffusion_regularizer(DisplacementField(n, n, u)) == doctest::Approx(n * (n - 1.0) / (n * n)).epsilon(1e-15));

  const auto f = oracle::random_field(7, 6, 3, 2.0);
  CHECK(std::abs(diffusion_regularizer(f) - oracle::naive_diffusion(f)) < 1e-12);
  CHECK(diffusion_regularizer(f) > 0.0);

  const auto g = diffusion_regularizer_grad(f);
  auto fn = [&](const std::vector<double>& x) { return diffusion_regularizer(DisplacementField(7, 6, x)); };
  const auto numeric =
      oracle::central_difference(fn, std::vector<double>(f.data().begin(), f.data().end()), 1e-5);
  CHECK(oracle::max_relative_error(std::vector<double>(g.data().begin(), g.data().end()), numeric, 1e-6) < 1e-6);
}

TEST_CASE("soft dice") {
  const LabelMap l = quadrant_labels(4, 4, 0);
  CHECK(dice_soft(l.one_hot(), l.one_hot()) == doctest::Approx(1.0).epsilon(1e-6));

  const Image a(1, 4, 1, {1, 1, 0, 0}), b(1, 4, 1, {0, 0, 1, 1}), c(1, 4, 1, {0, 1, 1, 0});
  CHECK(dice_soft(a, b) < 1e-6);
  CHECK(dice_soft(a, c) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK_THROWS_AS(dice_soft(a, Image(1, 4, 2, std::vector<double>(8, 0.0))), ShapeError);

  const Image p = oracle::random_image(4, 4, 2, 0.0, 1.0, 3);
  const Image q = l.one_hot();
  const Image g = dice_soft_grad(p, q);
  auto fn = [&](const std::vector<double>& x) { return dice_soft(Image(4, 4, 3, x), q); };
  CHECK(oracle::max_relative_error(std::vector<double>(g.data().begin(), g.data().end()),
                                   oracle::central_difference(fn, std::vector<double>(p.data().begin(), p.data().end()),
                                                              1e-6),
                                   1e-6) < 1e-6);
}

TEST_CASE("metric grammar") {
  CHECK(std::holds_alternative<MseMetric>(parse_metric("mse")));
  CHECK(std::get<NccMetric>(parse_metric("ncc:7")).window == 7);
  const auto s = std::get<NccSupMetric>(parse_metric("nccsup:5:0.25"));
  CHECK(s.window == 5);
  CHECK(s.dice_weight == 0.25);
  CHECK(std::get<RandSimMetric>(parse_metric("randsim:12")).seed == 12);
  CHECK(metric_spec(parse_metric("nccsup:5:0.25")) == metric_spec(NccSupMetric{5, 0.25}));
  CHECK_THROWS_AS(parse_metric("ncc:4"), std::invalid_argument);
  CHECK_THROWS_AS(parse_metric("ncc:1"), std::invalid_argument);
  CHECK_THROWS_AS(parse_metric("nccsup:3:-1"), std::invalid_argument);
  CHECK_THROWS_AS(parse_metric("vgg"), std::invalid_argument);
  CHECK_THROWS_AS(parse_metric("deepsim:/nonexistent/seg.ckpt"), IoError);
  CHECK(needs_labels(NccSupMetric{}));
  CHECK(!needs_labels(NccMetric{}));

  auto seg = std::make_shared<SegUNet>(2, Rng(1));
  CHECK_THROWS_AS(validate_metric(DeepSimMetric{seg, ""}), std::invalid_argument);

  const auto dir = std::filesystem::temp_directory_path() / "deepsim_unit_sim" / "seg.ckpt";
  std::filesystem::remove_all(dir);
  SegUNet frozen(2, Rng(1));
  save_seg_checkpoint(dir, frozen);  // saved unfrozen; loading for a metric freezes it
  const auto m = std::get<DeepSimMetric>(parse_metric("deepsim:" + dir.string()));
  CHECK(m.extractor->frozen());
  CHECK(m.extractor->net() == frozen.net());
}

TEST_CASE("registration loss at perfect alignment") {
  const Image img = oracle::random_image(8, 8, 51);
  const LabelMap l = quadrant_labels(8, 8, 1);
  const LabelPair labels{l, l};
  for (const auto& m : every_metric()) {
    CAPTURE(metric_spec(m));
    const auto r = registration_loss(m, img, img, DisplacementField::zeros(8, 8), 0.3, &labels, true);
    CHECK(r.terms.reg == 0.0);
    CHECK(r.terms.data >= -1e-6);
    CHECK(r.terms.data <= 1e-6);
    if (std::holds_alternative<MseMetric>(m)) CHECK(r.terms.data == 0.0);
    double norm = 0;
    for (double v : r.grad->data()) norm += v * v;
    if (std::holds_alternative<NccSupMetric>(m)) {
      // The Dice term has a kink at the optimum: any small move costs.
      for (std::uint64_t s = 0; s < 5; ++s) {
        const auto nudged = registration_loss(m, img, img, oracle::random_field(8, 8, s, 0.05), 0.3, &labels);
        CHECK(nudged.terms.total >= r.terms.total);
      }
    } else if (std::holds_alternative<NccMetric>(m)) {
      // Exact up to the stabilizing epsilon in the correlation denominator.
      CHECK(std::sqrt(norm) < 1e3 * kNccEps);
    } else {
      CHECK(std::sqrt(norm) < 1e-8);
    }
  }
}

TEST_CASE("registration loss composition") {
  const Image a = oracle::random_image(8, 8, 61), b = oracle::random_image(8, 8, 62);
  const auto f = oracle::random_field(8, 8, 63, 1.5);
  const LabelPair labels{quadrant_labels(8, 8, 0), quadrant_labels(8, 8, 2)};
  for (const auto& m : every_metric()) {
    CAPTURE(metric_spec(m));
    const auto zero = registration_loss(m, a, b, f, 0.0, &labels);
    CHECK(zero.terms.total == zero.terms.data);
    const auto r = registration_loss(m, a, b, f, 0.7, &labels);
    CHECK(r.terms.total == r.terms.data + 0.7 * r.terms.reg);
    CHECK(r.terms.lambda == 0.7);
    CHECK(r.terms.data >= -1e-6);
    CHECK(!r.grad.has_value());
  }
  CHECK_THROWS_AS(registration_loss(NccSupMetric{}, a, b, f, 0.1, nullptr), std::invalid_argument);
  CHECK_THROWS_AS(registration_loss(MseMetric{}, a, oracle::random_image(8, 4, 1), f, 0.1), ShapeError);
  CHECK_THROWS_AS(registration_loss(MseMetric{}, a, b, f, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(registration_loss(RandSimMetric{1, random_extractor(1)}, oracle::random_image(6, 6, 1),
                                    oracle::random_image(6, 6, 2), DisplacementField::zeros(6, 6), 0.1),
                  ShapeError);
}

TEST_CASE("registration loss field gradient matches finite differences for every metric") {
  const Image a = oracle::random_image(8, 8, 71), b = oracle::random_image(8, 8, 72);
  const LabelPair labels{quadrant_labels(8, 8, 0), quadrant_labels(8, 8, 2)};
  const auto field = kink_free_field(8, 8, 73);
  for (const auto& m : every_metric()) {
    CAPTURE(metric_spec(m));
    const RegistrationObjective obj(m, a, b, 0.2, labels);
    const auto r = obj.evaluate(field, true);
    REQUIRE(r.grad.has_value());
    CHECK(r.terms.total == registration_loss(m, a, b, field, 0.2, &labels).terms.total);
    auto fn = [&](const std::vector<double>& x) { return obj.evaluate(DisplacementField(8, 8, x), false).terms.total; };
    const auto numeric =
        oracle::central_difference(fn, std::vector<double>(field.data().begin(), field.data().end()), 1e-5);
    const std::vector<double> analytic(r.grad->data().begin(), r.grad->data().end());
    CHECK(oracle::max_relative_error(analytic, numeric, 1e-6) < 1e-4);
  }
}
