#include "runs.hpp"

#include "deepsim/tensor_io.hpp"
#include "deepsim/warp.hpp"

namespace deepsim::cli {

std::vector<RegResult> register_pairs(const std::vector<PairData>& pairs, const MetricKind& metric,
                                      const RegParams& params, const RegUNet* model, int jobs,
                                      const std::string& label) {
  std::vector<RegResult> results(pairs.size());
  IterConfig cfg;
  cfg.steps = params.steps;
  cfg.lr = params.lr;
  cfg.lambda = params.lambda;
  cfg.metric = metric;
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    const PairData& p = pairs[i];
    const std::optional<LabelPair> labels =
        needs_labels(metric) ? std::optional<LabelPair>(LabelPair{p.moving_labels, p.fixed_labels}) : std::nullopt;
    try {
      if (model) {
        RegResult r;
        r.field = reg_forward(*model, p.moving, p.fixed);
        r.trace.push_back(
            registration_loss(metric, p.moving, p.fixed, r.field, params.lambda, labels ? &*labels : nullptr).terms);
        results[i] = std::move(r);
      } else {
        results[i] = register_iterative(p.moving, p.fixed, cfg, labels);
      }
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.step(), label + " " + p.name + ": non-finite loss");
    }
    progress(label, " ", p.name, " loss ", results[i].trace.front().total, " -> ", results[i].trace.back().total);
  });
  return results;
}

void write_run(const fs::path& dir, const std::vector<PairData>& pairs, const std::vector<RegResult>& results,
               Json meta) {
  Json entries = Json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const fs::path pair_dir = dir / pairs[i].name;
    fs::create_directories(pair_dir);
    save_field(pair_dir / "field.semt", results[i].field);
    write_text(pair_dir / "trace.csv", trace_csv(results[i].trace));
    entries.push_back({{"name", pairs[i].name},
                       {"initial_loss", results[i].trace.front().total},
                       {"final_loss", results[i].trace.back().total},
                       {"wall_time", results[i].wall_time}});
  }
  meta["format"] = kRunFormat;
  meta["pairs"] = entries;
  write_json(dir / "manifest.json", meta);
}

std::vector<DisplacementField> read_run(const fs::path& dir, const std::vector<std::string>& names) {
  const Json manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", "") != kRunFormat) throw FormatError(dir.string() + ": not a registration run");
  std::vector<DisplacementField> out;
  for (const auto& name : names) out.push_back(load_field(dir / name / "field.semt"));
  return out;
}

std::vector<EvalPair> eval_pairs(const std::vector<PairData>& pairs) {
  std::vector<EvalPair> out;
  for (const auto& p : pairs) out.push_back({p.moving_labels, p.fixed_labels});
  return out;
}

double mean_warped_dice(const std::vector<PairData>& pairs, const std::vector<RegResult>& results) {
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto classes = present_foreground(pairs[i].moving_labels, pairs[i].fixed_labels);
    sum += classes.empty() ? 1.0
                           : mean_dice(warp_labels(pairs[i].moving_labels, results[i].field),
                                       pairs[i].fixed_labels, classes);
  }
  return pairs.empty() ? 0.0 : sum / static_cast<double>(pairs.size());
}

}  // namespace deepsim::cli
