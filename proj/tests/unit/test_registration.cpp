#include <cmath>
#include <limits>

#include "doctest.h"

#include "deepsim/eval.hpp"
#include "deepsim/registration.hpp"
#include "deepsim/synth.hpp"
#include "deepsim/warp.hpp"
#include "support/oracles.hpp"

using namespace deepsim;

namespace {

SceneSpec small_spec(int size) {
  SceneSpec s;
  s.height = s.width = size;
  s.num_blobs = 2;
  s.min_radius = size / 8.0;
  s.max_radius = size / 5.0;
  s.num_classes = 3;
  return s;
}

std::vector<RegSample> small_dataset(int n, int size, double amplitude) {
  WarpSpec w;
  w.amplitude = amplitude;
  w.smoothness_sigma = size / 2.0;
  std::vector<RegSample> out;
  for (int i = 0; i < n; ++i) {
    auto p = make_pair(small_spec(size), w, static_cast<std::uint64_t>(i));
    out.push_back({p.moving.image, p.fixed.image, LabelPair{p.moving.labels, p.fixed.labels}});
  }
  return out;
}

}  // namespace

TEST_CASE("register_iterative basics") {
  const Image img = oracle::random_image(16, 16, 1);
  SUBCASE("steps = 0") {
    IterConfig cfg;
    cfg.steps = 0;
    const auto r = register_iterative(img, oracle::random_image(16, 16, 2), cfg);
    CHECK(r.trace.size() == 1);
    CHECK(r.field == DisplacementField::zeros(16, 16));
  }
  SUBCASE("moving = fixed stays at the identity") {
    // MSE's gradient is exactly zero here. Feature and NCC metrics leave
    // rounding- or epsilon-sized gradients that Adam's normalized steps blow
    // up to lr-sized moves, so they are checked for stationarity instead.
    for (const auto& metric : {MetricKind{MseMetric{}}}) {
      IterConfig cfg;
      cfg.steps = 50;
      cfg.metric = metric;
      const auto r = register_iterative(img, img, cfg);
      CHECK(r.trace.size() == 51);
      CHECK(r.field.mean_norm() < 0.05);
      CHECK(r.trace.back().total <= r.trace.front().total);
    }
  }
  SUBCASE("deterministic") {
    IterConfig cfg;
    cfg.steps = 20;
    cfg.metric = NccMetric{5};
    const Image other = oracle::random_image(16, 16, 3);
    CHECK(register_iterative(img, other, cfg).field == register_iterative(img, other, cfg).field);
  }
  SUBCASE("invalid configuration") {
    IterConfig cfg;
    cfg.steps = -1;
    CHECK_THROWS_AS(register_iterative(img, img, cfg), std::invalid_argument);
    cfg = IterConfig{};
    cfg.lr = 0;
    CHECK_THROWS_AS(register_iterative(img, img, cfg), std::invalid_argument);
    cfg = IterConfig{};
    cfg.metric = NccSupMetric{};
    CHECK_THROWS_AS(register_iterative(img, img, cfg), std::invalid_argument);
  }
  SUBCASE("divergence aborts with the step index") {
    IterConfig cfg;
    cfg.steps = 10;
    cfg.lr = std::numeric_limits<double>::max();
    try {
      register_iterative(img, oracle::random_image(16, 16, 4), cfg);
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(e.step() >= 1);
      CHECK(e.step() <= 10);
    }
  }
}

TEST_CASE("register_iterative recovers a known smooth warp") {
  const SceneSpec spec{};
  const WarpSpec warp{};
  const auto p = make_pair(spec, warp, 1);
  const auto fg = present_foreground(p.moving.labels, p.fixed.labels);
  const double before = mean_dice(p.moving.labels, p.fixed.labels, fg);
  IterConfig cfg;
  cfg.lambda = 0.1;
  const auto r = register_iterative(p.moving.image, p.fixed.image, cfg);
  const double after = mean_dice(warp_labels(p.moving.labels, r.field), p.fixed.labels, fg);
  CHECK(before <= 0.8);
  CHECK(after >= 0.95);
  CHECK(r.trace.back().total <= r.trace.front().total);
}

TEST_CASE("train_registration") {
  const auto data = small_dataset(3, 16, 2.0);
  SUBCASE("epochs = 0") {
    RegUNet net(Rng(1));
    const UNet before = net.net();
    TrainConfig cfg;
    cfg.epochs = 0;
    const auto r = train_registration(net, data, cfg);
    CHECK(net.net() == before);
    REQUIRE(r.epoch_loss.size() == 1);
    double mean = 0;
    for (const auto& s : data) mean += mse(s.moving, s.fixed);
    CHECK(r.epoch_loss[0] == doctest::Approx(mean / 3).epsilon(1e-14));
    CHECK(r.epoch_dice.size() == 1);
  }
  SUBCASE("preconditions") {
    RegUNet net(Rng(1));
    TrainConfig cfg;
    cfg.metric = NccSupMetric{};
    auto unlabeled = data;
    unlabeled[1].labels.reset();
    CHECK_THROWS_AS(train_registration(net, unlabeled, cfg), std::invalid_argument);
    auto unfrozen = std::make_shared<SegUNet>(2, Rng(1));
    cfg.metric = DeepSimMetric{unfrozen, ""};
    CHECK_THROWS_AS(train_registration(net, data, cfg), std::invalid_argument);
    CHECK_THROWS_AS(train_registration(net, {}, TrainConfig{}), std::invalid_argument);
  }
  SUBCASE("deterministic and decreasing") {
    RegUNet a(Rng(2)), b(Rng(2));
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 3;
    cfg.lr = 5e-4;
    cfg.seed = 9;
    const auto ra = train_registration(a, data, cfg);
    const auto rb = train_registration(b, data, cfg);
    CHECK(ra.epoch_loss == rb.epoch_loss);
    CHECK(a.net() == b.net());
    for (double v : ra.epoch_loss) CHECK(std::isfinite(v));
    std::vector<double> avg;
    for (std::size_t i = 5; i < ra.epoch_loss.size(); ++i) {
      double s = 0;
      for (std::size_t j = i - 4; j <= i; ++j) s += ra.epoch_loss[j];
      avg.push_back(s / 5);
    }
    for (std::size_t i = 1; i < avg.size(); ++i) CHECK(avg[i] <= avg[i - 1]);
    CHECK(ra.epoch_dice.back() > ra.epoch_dice.front());
  }
}

TEST_CASE("amortized training approaches the iterative optimum on one pair") {
  const auto data = small_dataset(1, 16, 2.0);
  IterConfig icfg;
  icfg.lambda = 0.1;
  const double iterative = register_iterative(data[0].moving, data[0].fixed, icfg).trace.back().total;

  RegUNet net(Rng(3));
  TrainConfig cfg;
  cfg.epochs = 400;
  cfg.batch_size = 1;
  cfg.lr = 2e-3;
  cfg.lambda = 0.1;
  const auto r = train_registration(net, data, cfg);
  const auto field = reg_forward(net, data[0].moving, data[0].fixed);
  const double amortized = registration_loss(MseMetric{}, data[0].moving, data[0].fixed, field, 0.1).terms.total;
  CAPTURE(iterative);
  CAPTURE(amortized);
  CAPTURE(r.epoch_loss.front());
  CHECK(amortized <= 1.1 * iterative);
}

TEST_CASE("convergence report") {
  std::vector<double> halving;
  for (int i = 0; i < 20; ++i) halving.push_back(std::ldexp(1.0, -i));
  CHECK(steps_to_fraction(halving, 0.9) == 4);

  const std::vector<double> bumpy = {10, 4, 6, 2, 3, 1};
  // Target 10 - 0.9 * 9 = 1.9: first crossing at index 5.
  CHECK(steps_to_fraction(bumpy, 0.9) == 5);
  const std::vector<double> early = {10, 1.5, 3, 2, 1};
  CHECK(steps_to_fraction(early, 0.9) == 1);

  const auto rows = convergence_report({{"deepsim", halving}, {"mse", halving}});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].steps_to_fraction == rows[1].steps_to_fraction);
  const std::string csv = convergence_csv(rows);
  CHECK(csv.rfind("metric,steps_to_fraction,initial_loss,final_loss\n", 0) == 0);
  CHECK_THROWS_AS(convergence_report({}), std::invalid_argument);
  CHECK_THROWS_AS(convergence_report({{"mse", {}}}), std::invalid_argument);
}
