#include "deepsim/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "deepsim/similarity.hpp"
#include "deepsim/warp.hpp"

namespace deepsim {

double dice(const LabelMap& a, const LabelMap& b, int class_id) {
  require_same_grid(a.grid(), b.grid(), "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const bool in_a = a.data()[i] == class_id;
    const bool in_b = b.data()[i] == class_id;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double mean_dice(const LabelMap& a, const LabelMap& b, std::span<const int> classes) {
  if (classes.empty()) throw std::invalid_argument("mean_dice: no classes given");
  double s = 0.0;
  for (int c : classes) s += dice(a, b, c);
  return s / static_cast<double>(classes.size());
}

std::vector<int> present_foreground(const LabelMap& a, const LabelMap& b) {
  std::set<int> ids;
  for (int v : a.data())
    if (v > 0) ids.insert(v);
  for (int v : b.data())
    if (v > 0) ids.insert(v);
  return {ids.begin(), ids.end()};
}

TestDirection parse_direction(const std::string& s) {
  if (s == "greater") return TestDirection::greater;
  if (s == "less") return TestDirection::less;
  if (s == "two-sided" || s == "two_sided") return TestDirection::two_sided;
  throw std::invalid_argument("unknown test direction '" + s + "' (greater | less | two-sided)");
}

std::string to_string(TestDirection d) {
  switch (d) {
    case TestDirection::greater: return "greater";
    case TestDirection::less: return "less";
    case TestDirection::two_sided: return "two-sided";
  }
  return "?";
}

std::vector<double> signed_rank_magnitudes(std::span<const double> d) {
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

namespace {

std::vector<double> nonzero(std::span<const double> d) {
  std::vector<double> out;
  for (double v : d)
    if (v != 0.0) out.push_back(v);
  return out;
}

double positive_rank_sum(std::span<const double> d, const std::vector<double>& ranks) {
  double w = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0) w += ranks[i];
  return w;
}

double upper_tail_normal(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

double wilcoxon_exact_p(std::span<const double> differences, TestDirection direction) {
  const std::vector<double> d = nonzero(differences);
  if (d.empty()) return 1.0;
  const std::vector<double> ranks = signed_rank_magnitudes(d);
  // Average ranks are multiples of 1/2, so doubled ranks are integers and
  // the sign-flip distribution is a subset-sum count over them.
  std::vector<int> doubled(ranks.size());
  int total = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    doubled[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
    total += doubled[i];
  }
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  int reach = 0;
  for (int r : doubled) {
    for (int s = reach; s >= 0; --s) counts[s + r] += counts[s];
    reach += r;
  }
  const int observed = static_cast<int>(std::lround(2.0 * positive_rank_sum(d, ranks)));
  const double all = std::ldexp(1.0, static_cast<int>(d.size()));
  double upper = 0.0, lower = 0.0;
  for (int s = 0; s <= total; ++s) {
    if (s >= observed) upper += counts[s];
    if (s <= observed) lower += counts[s];
  }
  upper /= all;
  lower /= all;
  switch (direction) {
    case TestDirection::greater: return upper;
    case TestDirection::less: return lower;
    case TestDirection::two_sided: return std::min(1.0, 2.0 * std::min(upper, lower));
  }
  return 1.0;
}

double wilcoxon_normal_p(std::span<const double> differences, TestDirection direction) {
  const std::vector<double> d = nonzero(differences);
  if (d.empty()) return 1.0;
  const std::vector<double> ranks = signed_rank_magnitudes(d);
  const double n = static_cast<double>(d.size());
  const double mean = n * (n + 1.0) / 4.0;
  double tie_term = 0.0;
  {
    std::vector<double> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i);
      tie_term += t * t * t - t;
      i = j;
    }
  }
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (!(var > 0.0)) return 1.0;
  const double sd = std::sqrt(var);
  const double w = positive_rank_sum(d, ranks);
  switch (direction) {
    case TestDirection::greater: return upper_tail_normal((w - mean - 0.5) / sd);
    case TestDirection::less: return upper_tail_normal((mean - w - 0.5) / sd);
    case TestDirection::two_sided:
      return std::min(1.0, 2.0 * upper_tail_normal((std::abs(w - mean) - 0.5) / sd));
  }
  return 1.0;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                    TestDirection direction) {
  if (x.size() != y.size()) throw std::invalid_argument("wilcoxon: samples must be paired");
  if (x.empty()) throw std::invalid_argument("wilcoxon: no samples");
  std::vector<double> diff(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) diff[i] = x[i] - y[i];
  require_finite(diff, "wilcoxon");
  const std::vector<double> d = nonzero(diff);
  WilcoxonResult r;
  r.direction = direction;
  r.n = static_cast<int>(d.size());
  if (d.empty()) {
    r.all_zero = true;
    r.p_value = 1.0;
    return r;
  }
  r.w_plus = positive_rank_sum(d, signed_rank_magnitudes(d));
  r.exact = r.n <= kWilcoxonExactMaxN;
  r.p_value = r.exact ? wilcoxon_exact_p(d, direction) : wilcoxon_normal_p(d, direction);
  return r;
}

double cohens_d(std::span<const double> x, std::span<const double> y) {
  if (x.size() < 2 || y.size() < 2) throw std::invalid_argument("cohens_d: need at least 2 values per group");
  auto mean = [](std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  auto ss = [](std::span<const double> v, double m) {
    double s = 0.0;
    for (double e : v) s += (e - m) * (e - m);
    return s;
  };
  const double mx = mean(x), my = mean(y);
  const double pooled_var = (ss(x, mx) + ss(y, my)) / static_cast<double>(x.size() + y.size() - 2);
  if (!(pooled_var > 0.0)) throw std::invalid_argument("cohens_d: zero pooled variance");
  return (mx - my) / std::sqrt(pooled_var);
}

std::string significance_stars(double p) {
  if (p <= 0.001) return "***";
  if (p <= 0.01) return "**";
  if (p <= 0.05) return "*";
  return "";
}

SmoothnessStats smoothness_stats(const DisplacementField& field) {
  SmoothnessStats s;
  s.mean_grad_sq = diffusion_regularizer(field);
  const Image det = jacobian_determinant(field);
  std::size_t folded = 0;
  for (double v : det.data()) folded += v <= 0.0;
  s.folding_fraction = static_cast<double>(folded) / static_cast<double>(det.size());
  return s;
}

Image render_grid(const DisplacementField& field, int spacing) {
  if (spacing < 2) throw std::invalid_argument("render_grid: spacing must be >= 2");
  const int h = field.height(), w = field.width();
  std::vector<double> lines(field.grid().pixels(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (y % spacing == 0 || x % spacing == 0) lines[static_cast<std::size_t>(y) * w + x] = 1.0;
  return warp_image(Image(h, w, 1, std::move(lines)), field);
}

EvalReport evaluate_run(const std::vector<EvalPair>& test_set,
                        const std::map<std::string, std::vector<DisplacementField>>& fields,
                        const std::string& reference, TestDirection direction) {
  if (test_set.empty()) throw std::invalid_argument("evaluate_run: empty test set");
  if (!fields.contains(reference)) {
    throw std::invalid_argument("evaluate_run: reference run '" + reference + "' not found");
  }
  EvalReport report;
  report.reference = reference;
  report.direction = direction;
  std::map<std::string, MetricSummary> by_name;
  for (const auto& [name, run] : fields) {
    if (run.size() != test_set.size()) {
      throw std::invalid_argument("evaluate_run: run '" + name + "' has " + std::to_string(run.size()) +
                                  " fields for " + std::to_string(test_set.size()) + " pairs");
    }
    MetricSummary s;
    s.metric = name;
    for (std::size_t i = 0; i < run.size(); ++i) {
      const auto& pair = test_set[i];
      const auto classes = present_foreground(pair.moving, pair.fixed);
      const LabelMap warped = warp_labels(pair.moving, run[i]);
      s.dice_pre.push_back(classes.empty() ? 1.0 : mean_dice(pair.moving, pair.fixed, classes));
      s.dice_post.push_back(classes.empty() ? 1.0 : mean_dice(warped, pair.fixed, classes));
      const auto sm = smoothness_stats(run[i]);
      s.mean_grad_sq += sm.mean_grad_sq;
      s.folding_fraction += sm.folding_fraction;
    }
    const double n = static_cast<double>(run.size());
    s.mean_dice_pre = std::accumulate(s.dice_pre.begin(), s.dice_pre.end(), 0.0) / n;
    s.mean_dice_post = std::accumulate(s.dice_post.begin(), s.dice_post.end(), 0.0) / n;
    s.mean_grad_sq /= n;
    s.folding_fraction /= n;
    by_name[name] = s;
    report.summaries.push_back(std::move(s));
  }
  const MetricSummary& ref = by_name.at(reference);
  for (const auto& [name, summary] : by_name) {
    if (name == reference) continue;
    ComparisonRow row;
    row.baseline = summary;
    const auto w = wilcoxon_signed_rank(ref.dice_post, summary.dice_post, direction);
    row.p_value = w.p_value;
    row.all_zero = w.all_zero;
    row.stars = w.all_zero ? "" : significance_stars(w.p_value);
    row.n = summary.dice_post.size();
    try {
      row.cohens_d = cohens_d(ref.dice_post, summary.dice_post);
    } catch (const std::invalid_argument&) {
      row.cohens_d = std::numeric_limits<double>::quiet_NaN();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

}  // namespace

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "metric,mean_dice_pre,mean_dice_post,mean_grad_sq,folding_fraction,p_value,stars,cohens_d,n\n";
  for (const auto& r : report.rows) {
    out << r.baseline.metric << ',' << num(r.baseline.mean_dice_pre) << ',' << num(r.baseline.mean_dice_post)
        << ',' << num(r.baseline.mean_grad_sq) << ',' << num(r.baseline.folding_fraction) << ','
        << num(r.p_value) << ',' << r.stars << ',' << num(r.cohens_d) << ',' << r.n << '\n';
  }
  return out.str();
}

std::string summary_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "metric,mean_dice_pre,mean_dice_post,mean_grad_sq,folding_fraction,n,reference\n";
  for (const auto& s : report.summaries) {
    out << s.metric << ',' << num(s.mean_dice_pre) << ',' << num(s.mean_dice_post) << ','
        << num(s.mean_grad_sq) << ',' << num(s.folding_fraction) << ',' << s.dice_post.size() << ','
        << (s.metric == report.reference ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace deepsim
