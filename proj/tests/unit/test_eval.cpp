#include <cmath>
#include <limits>

#include "doctest.h"

#include "deepsim/eval.hpp"
#include "deepsim/warp.hpp"
#include "support/oracles.hpp"

using namespace deepsim;

namespace {

LabelMap row(std::vector<int> v, int classes = 2) {
  const int w = static_cast<int>(v.size());
  return LabelMap(1, w, classes, std::move(v));
}

LabelMap random_labels(int h, int w, int classes, std::uint64_t seed) {
  const Rng rng(seed);
  std::vector<int> v(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<int>(rng.below(i, classes));
  return LabelMap(h, w, classes, std::move(v));
}

double dice_oracle(const LabelMap& a, const LabelMap& b, int c) {
  int na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    na += a.data()[i] == c;
    nb += b.data()[i] == c;
    both += a.data()[i] == c && b.data()[i] == c;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * both / (na + nb);
}

}  // namespace

TEST_CASE("dice") {
  CHECK(dice(row({1, 1, 0, 0}), row({1, 1, 0, 0}), 1) == 1.0);
  CHECK(dice(row({1, 1, 0, 0}), row({0, 0, 1, 1}), 1) == 0.0);
  CHECK(dice(row({1, 1, 0, 0}), row({0, 1, 1, 0}), 1) == 0.5);
  CHECK(dice(row({0, 0}), row({0, 0}), 1) == 1.0);
  CHECK(dice(row({1, 0}), row({0, 0}), 1) == 0.0);
  CHECK_THROWS_AS(dice(row({1, 0}), row({1, 0, 0}), 1), ShapeError);

  const LabelMap a = random_labels(9, 9, 4, 1), b = random_labels(9, 9, 4, 2);
  for (int c = 0; c < 4; ++c) {
    CHECK(dice(a, b, c) == dice(b, a, c));
    CHECK(dice(a, b, c) == doctest::Approx(dice_oracle(a, b, c)).epsilon(1e-15));
    CHECK(dice(a, a, c) == 1.0);
  }
}

TEST_CASE("mean dice") {
  const LabelMap a = row({1, 1, 2, 2, 0, 0}, 3), b = row({1, 1, 0, 2, 2, 0}, 3);
  const int both[] = {1, 2};
  CHECK(mean_dice(a, b, both) == 0.75);
  CHECK(mean_dice(a, a, both) == 1.0);

  const LabelMap x = random_labels(8, 8, 5, 3), y = random_labels(8, 8, 5, 4);
  const int fg[] = {1, 2, 3, 4};
  double s = 0;
  for (int c : fg) s += dice_oracle(x, y, c);
  CHECK(mean_dice(x, y, fg) == doctest::Approx(s / 4).epsilon(1e-15));
  CHECK(present_foreground(a, b) == std::vector<int>{1, 2});
}

TEST_CASE("wilcoxon signed rank") {
  const double x5[] = {1.5, 2.5, 3.5, 4.5, 5.5}, y5[] = {1, 2, 3, 4, 5};
  SUBCASE("n=5 all positive") {
    const auto r = wilcoxon_signed_rank(x5, y5, TestDirection::greater);
    CHECK(r.p_value == 0.03125);
    CHECK(r.exact);
    CHECK(r.n == 5);
    CHECK(wilcoxon_signed_rank(x5, y5, TestDirection::less).p_value == 1.0);
    CHECK(wilcoxon_signed_rank(x5, y5, TestDirection::two_sided).p_value == 0.0625);
  }
  SUBCASE("all zero differences") {
    const auto r = wilcoxon_signed_rank(y5, y5, TestDirection::greater);
    CHECK(r.all_zero);
    CHECK(r.p_value == 1.0);
  }
  SUBCASE("mismatched lengths") {
    const double three[] = {1, 2, 3};
    CHECK_THROWS_AS(wilcoxon_signed_rank(x5, three, TestDirection::greater), std::invalid_argument);
  }
  SUBCASE("exact agrees with full enumeration for n <= 12") {
    const Rng rng(17);
    for (int n = 1; n <= 12; ++n)
      for (int rep = 0; rep < 4; ++rep) {
        std::vector<double> d(n);
        for (int i = 0; i < n; ++i) {
          d[i] = rng.uniform(1000 * n + 100 * rep + i, -1, 1);
          if (rep == 3) d[i] = std::round(d[i] * 3) / 3;  // ties and zeros
        }
        CAPTURE(n);
        CAPTURE(rep);
        CHECK(std::abs(wilcoxon_exact_p(d, TestDirection::greater) - oracle::brute_force_wilcoxon(d, true)) < 1e-12);
        CHECK(std::abs(wilcoxon_exact_p(d, TestDirection::less) - oracle::brute_force_wilcoxon(d, false)) < 1e-12);
      }
  }
  SUBCASE("normal approximation tracks the exact distribution at n=12") {
    const Rng rng(23);
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<double> d(12);
      for (int i = 0; i < 12; ++i) d[i] = rng.uniform(100 * rep + i, -0.6, 1.0);
      CHECK(std::abs(wilcoxon_normal_p(d, TestDirection::greater) - wilcoxon_exact_p(d, TestDirection::greater)) <
            0.02);
    }
  }
  SUBCASE("large n switches to the normal approximation") {
    std::vector<double> x(30), y(30, 0.0);
    for (int i = 0; i < 30; ++i) x[i] = i % 4 == 0 ? -0.1 * i : 0.1 * (i + 1);
    const auto r = wilcoxon_signed_rank(x, y, TestDirection::greater);
    CHECK(!r.exact);
    CHECK(r.p_value > 0.0);
    CHECK(r.p_value < 0.05);
  }
  SUBCASE("average ranks for ties") {
    const double d[] = {1, -1, 2, 3, 3};
    CHECK(signed_rank_magnitudes(d) == std::vector<double>{1.5, 1.5, 3, 4.5, 4.5});
  }
  CHECK(parse_direction("greater") == TestDirection::greater);
  CHECK(parse_direction(to_string(TestDirection::two_sided)) == TestDirection::two_sided);
  CHECK_THROWS_AS(parse_direction("sideways"), std::invalid_argument);
}

TEST_CASE("cohen's d") {
  const double x[] = {2, 4}, y[] = {1, 3};
  CHECK(cohens_d(x, y) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(cohens_d(y, x) == -cohens_d(x, y));
  const double a[] = {1, 2, 3}, b[] = {3, 2, 1};
  CHECK(cohens_d(a, b) == 0.0);
  const double xs[] = {20, 40}, ys[] = {10, 30};
  CHECK(cohens_d(xs, ys) == doctest::Approx(cohens_d(x, y)).epsilon(1e-14));
  const double c[] = {1, 1}, d[] = {2, 2};
  CHECK_THROWS_AS(cohens_d(c, d), std::invalid_argument);
  const double one[] = {1};
  CHECK_THROWS_AS(cohens_d(one, x), std::invalid_argument);
}

TEST_CASE("significance stars") {
  CHECK(significance_stars(0.2) == "");
  CHECK(significance_stars(0.05) == "*");
  CHECK(significance_stars(0.03125) == "*");
  CHECK(significance_stars(0.01) == "**");
  CHECK(significance_stars(0.001) == "***");
  CHECK(significance_stars(0.0) == "***");
}

TEST_CASE("smoothness stats") {
  const auto zero = smoothness_stats(DisplacementField::zeros(6, 6));
  CHECK(zero.mean_grad_sq == 0.0);
  CHECK(zero.folding_fraction == 0.0);

  std::vector<double> u;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      u.push_back(0.1 * y);
      u.push_back(0.1 * x);
    }
  const DisplacementField expand(8, 8, u);
  const auto s = smoothness_stats(expand);
  CHECK(s.folding_fraction == 0.0);
  CHECK(s.mean_grad_sq == doctest::Approx(oracle::naive_diffusion(expand)).epsilon(1e-14));

  std::vector<double> fold(18, 0.0);
  for (int y = 0; y < 3; ++y) fold[2 * (y * 3 + 1) + 1] = 2.0;
  const auto f = smoothness_stats(DisplacementField(3, 3, fold));
  CHECK(f.folding_fraction > 0.0);
  CHECK(f.folding_fraction <= 1.0);
}

TEST_CASE("render grid") {
  const Image g = render_grid(DisplacementField::zeros(16, 12), 4);
  CHECK(g.height() == 16);
  CHECK(g.width() == 12);
  CHECK(g.channels() == 1);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 12; ++x) {
      CHECK(g.at(y, x) == g.at(y % 4, x % 4));
      CHECK(g.at(y, x) == ((y % 4 == 0 || x % 4 == 0) ? 1.0 : 0.0));
    }
  const auto shift = DisplacementField::constant(16, 12, 1.0, -2.0);
  CHECK(render_grid(shift, 4) == warp_image(g, shift));
  CHECK_THROWS_AS(render_grid(DisplacementField::zeros(4, 4), 1), std::invalid_argument);
}

TEST_CASE("evaluate_run") {
  // Five pairs; moving labels shifted by one pixel from fixed.
  std::vector<EvalPair> pairs;
  for (int i = 0; i < 5; ++i) {
    std::vector<int> fixed(16, 0), moving(16, 0);
    for (int x = 4 + i; x < 10 + i; ++x) fixed[x] = 1;
    for (int x = 5 + i; x < 11 + i; ++x) moving[x] = 1;
    pairs.push_back({row(moving), row(fixed)});
  }
  const std::vector<DisplacementField> aligned(5, DisplacementField::constant(1, 16, 0.0, 1.0));
  const std::vector<DisplacementField> none(5, DisplacementField::zeros(1, 16));

  SUBCASE("deepsim ahead on every pair") {
    const auto rep = evaluate_run(pairs, {{"deepsim", aligned}, {"mse", none}, {"ncc", none}}, "deepsim");
    REQUIRE(rep.rows.size() == 2);
    for (const auto& r : rep.rows) {
      CHECK(r.p_value == 0.03125);
      CHECK(r.stars == "*");
      CHECK(r.n == 5);
      CHECK(r.baseline.mean_dice_post < 1.0);
    }
    const auto& ds = *std::find_if(rep.summaries.begin(), rep.summaries.end(),
                                   [](const MetricSummary& m) { return m.metric == "deepsim"; });
    CHECK(ds.mean_dice_post == 1.0);
    CHECK(ds.mean_dice_pre == doctest::Approx(5.0 / 6.0));
    const std::string csv = report_csv(rep);
    CHECK(csv.rfind("metric,mean_dice_pre,mean_dice_post,mean_grad_sq,folding_fraction,p_value,stars,cohens_d,n\n", 0) ==
          0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  }
  SUBCASE("identical scores") {
    const auto rep = evaluate_run(pairs, {{"deepsim", none}, {"mse", none}}, "deepsim");
    REQUIRE(rep.rows.size() == 1);
    CHECK(rep.rows[0].all_zero);
    CHECK(rep.rows[0].stars == "");
    CHECK(rep.rows[0].p_value == 1.0);
    CHECK(std::isnan(rep.rows[0].cohens_d));
  }
  SUBCASE("errors") {
    const std::vector<DisplacementField> short_list(4, DisplacementField::zeros(1, 16));
    CHECK_THROWS_AS(evaluate_run(pairs, {{"deepsim", aligned}, {"mse", short_list}}, "deepsim"),
                    std::invalid_argument);
    CHECK_THROWS_AS(evaluate_run(pairs, {{"mse", none}}, "deepsim"), std::invalid_argument);
  }
}
