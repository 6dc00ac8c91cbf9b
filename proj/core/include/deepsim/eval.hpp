#pragma once

// Evaluation protocol: Dice overlap, smoothness and folding of fields, paired
// Wilcoxon signed-rank tests with Cohen's d, and grid-line renders.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "deepsim/image.hpp"

namespace deepsim {

/// Soerensen Dice of one class: 2|A n B| / (|A| + |B|). Both empty gives 1.
double dice(const LabelMap& a, const LabelMap& b, int class_id);
/// Unweighted mean of per-class Dice.
double mean_dice(const LabelMap& a, const LabelMap& b, std::span<const int> classes);
/// Foreground classes (id >= 1) present in either map.
std::vector<int> present_foreground(const LabelMap& a, const LabelMap& b);

enum class TestDirection { greater, less, two_sided };

TestDirection parse_direction(const std::string& s);
std::string to_string(TestDirection d);

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;  // sum of ranks of positive differences
  int n = 0;            // non-zero differences
  bool all_zero = false;
  bool exact = false;
  TestDirection direction = TestDirection::greater;
};

/// Paired signed-rank test of x against y. Zero differences are dropped and
/// tied magnitudes get average ranks. Exact null distribution for n <= 20,
/// otherwise the normal approximation with tie and continuity corrections.
/// `greater` tests whether x tends to exceed y. All-zero input yields p = 1
/// with all_zero set.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                    TestDirection direction);

inline constexpr int kWilcoxonExactMaxN = 20;

/// Exact p-value from the complete sign-flip distribution of the ranks.
double wilcoxon_exact_p(std::span<const double> differences, TestDirection direction);
/// Normal approximation with tie correction and 0.5 continuity correction.
double wilcoxon_normal_p(std::span<const double> differences, TestDirection direction);

/// Average ranks (1-based) of |d| over the non-zero differences, in input order.
std::vector<double> signed_rank_magnitudes(std::span<const double> nonzero_differences);

/// (mean x - mean y) / pooled sample standard deviation. Throws
/// std::invalid_argument for n < 2 or zero pooled variance.
double cohens_d(std::span<const double> x, std::span<const double> y);

/// "", "*", "**", "***" at p <= 0.05, 0.01, 0.001.
std::string significance_stars(double p_value);

struct SmoothnessStats {
  double mean_grad_sq = 0.0;
  double folding_fraction = 0.0;
};

/// Mean |grad u|^2 (as the diffusion regularizer) and the fraction of pixels
/// with non-positive Jacobian determinant.
SmoothnessStats smoothness_stats(const DisplacementField& field);

/// Uniform grid lines every `spacing` pixels, warped by the field.
Image render_grid(const DisplacementField& field, int spacing);

struct EvalPair {
  LabelMap moving;
  LabelMap fixed;
};

struct MetricSummary {
  std::string metric;
  std::vector<double> dice_pre;
  std::vector<double> dice_post;
  double mean_dice_pre = 0.0;
  double mean_dice_post = 0.0;
  double mean_grad_sq = 0.0;
  double folding_fraction = 0.0;
};

struct ComparisonRow {
  MetricSummary baseline;
  double p_value = 1.0;
  std::string stars;
  double cohens_d = 0.0;  // NaN when undefined
  std::size_t n = 0;
  bool all_zero = false;
};

struct EvalReport {
  std::string reference;  // the DeepSim run every baseline is compared against
  TestDirection direction = TestDirection::greater;
  std::vector<MetricSummary> summaries;  // every run, in name order
  std::vector<ComparisonRow> rows;       // one per baseline
};

/// Per-pair Dice before/after, smoothness, then for each baseline a paired
/// Wilcoxon test (reference vs baseline, post-registration Dice) and
/// Cohen's d. Throws on mismatched pair counts or a missing reference.
EvalReport evaluate_run(const std::vector<EvalPair>& test_set,
                        const std::map<std::string, std::vector<DisplacementField>>& fields,
                        const std::string& reference, TestDirection direction = TestDirection::greater);

/// report.csv: metric,mean_dice_pre,mean_dice_post,mean_grad_sq,folding_fraction,p_value,stars,cohens_d,n
std::string report_csv(const EvalReport& report);
/// summary.csv: per-run statistics including the reference run.
std::string summary_csv(const EvalReport& report);

}  // namespace deepsim
