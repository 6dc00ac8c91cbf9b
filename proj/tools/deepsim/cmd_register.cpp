#include "common.hpp"
#include "dataset.hpp"
#include "deepsim/tensor_io.hpp"
#include "runs.hpp"

namespace deepsim::cli {

namespace {

struct RegisterOptions {
  std::string data;
  std::string split = "test";
  std::string moving;
  std::string fixed;
  std::string moving_labels;
  std::string fixed_labels;
  int num_classes = 0;
  std::string out;
  std::string metric = "mse";
  std::string model;
  RegParams params;
  int jobs = 1;
};

std::vector<PairData> single_pair(const RegisterOptions& o) {
  PairData p;
  p.name = "pair";
  p.moving = load_image(o.moving);
  p.fixed = load_image(o.fixed);
  if (!o.moving_labels.empty() || !o.fixed_labels.empty()) {
    if (o.moving_labels.empty() || o.fixed_labels.empty() || o.num_classes < 2) {
      throw UsageError("label files need both --moving-labels and --fixed-labels plus --num-classes >= 2");
    }
    p.moving_labels = load_labels(o.moving_labels, o.num_classes);
    p.fixed_labels = load_labels(o.fixed_labels, o.num_classes);
  }
  return {std::move(p)};
}

int run_register(const RegisterOptions& o, const Command& cmd) {
  const bool from_data = !o.data.empty();
  const bool from_files = !o.moving.empty() || !o.fixed.empty();
  if (from_data == from_files || (from_files && (o.moving.empty() || o.fixed.empty()))) {
    throw UsageError("give either --data or both --moving and --fixed");
  }
  const MetricKind metric = load_metric(o.metric);
  const auto pairs = from_data ? Dataset(o.data).load_split(o.split) : single_pair(o);
  if (needs_labels(metric) && from_files && pairs.front().moving_labels.grid().pixels() == 0) {
    throw UsageError("metric " + o.metric + " needs --moving-labels and --fixed-labels");
  }
  std::optional<RegUNet> model;
  if (!o.model.empty()) model = load_reg_checkpoint(o.model);

  const auto results = register_pairs(pairs, metric, o.params, model ? &*model : nullptr, o.jobs, "register");
  const fs::path out = o.out;
  fs::create_directories(out);
  write_run(out, pairs, results,
            {{"metric", absolute_metric_spec(o.metric)},
             {"mode", model ? "amortised" : "iterative"},
             {"split", from_data ? o.split : ""}});
  write_config(out / "config.json", cmd);
  return kOk;
}

struct CompareOptions {
  std::string data;
  std::string split = "test";
  std::string tune_split = "val";
  std::string metrics;
  std::string reference;
  std::string direction = "greater";
  std::string lambda_grid;
  std::string out;
  RegParams params;
  int jobs = 1;
};

int run_compare(const CompareOptions& o, const Command& cmd) {
  const TestDirection direction = parse_direction(o.direction);
  std::vector<std::pair<std::string, MetricKind>> metrics;
  for (const auto& spec : split_list(o.metrics)) {
    MetricKind m = load_metric(spec);
    const std::string name = metric_name(m);
    for (const auto& [other, _] : metrics) {
      if (other == name) throw UsageError("metric '" + name + "' listed twice");
    }
    metrics.emplace_back(name, std::move(m));
  }
  if (metrics.empty()) throw UsageError("--metrics is empty");
  std::string reference = o.reference;
  if (reference.empty()) {
    reference = metrics.front().first;
    for (const auto& [name, _] : metrics)
      if (name == "deepsim") reference = name;
  }

  std::vector<double> grid;
  for (const auto& v : split_list(o.lambda_grid)) {
    try {
      grid.push_back(std::stod(v));
    } catch (const std::exception&) {
      throw UsageError("bad --lambda-grid value '" + v + "'");
    }
    if (!(grid.back() >= 0.0)) throw UsageError("--lambda-grid values must be >= 0");
  }

  const Dataset data(o.data);
  const auto test = data.load_split(o.split);
  if (test.empty()) throw UsageError("split '" + o.split + "' of " + o.data + " is empty");
  const auto tune = grid.empty() ? std::vector<PairData>{} : data.load_split(o.tune_split);
  if (!grid.empty() && tune.empty()) throw UsageError("--lambda-grid needs a non-empty --tune-split");

  const fs::path out = o.out;
  std::map<std::string, std::vector<DisplacementField>> fields;
  std::map<std::string, std::vector<double>> traces;
  Json lambdas = Json::object();
  for (const auto& [name, metric] : metrics) {
    RegParams params = o.params;
    if (!grid.empty()) {
      Json scores = Json::array();
      double best = -1.0;
      for (double lambda : grid) {
        RegParams trial = o.params;
        trial.lambda = lambda;
        double score = -1.0;
        try {
          score = mean_warped_dice(tune, register_pairs(tune, metric, trial, nullptr, o.jobs, name + " tune"));
        } catch (const DivergenceError& e) {
          progress("compare-metrics: ", name, " lambda ", lambda, " skipped: ", e.what());
        }
        scores.push_back({{"lambda", lambda}, {"dice", score}});
        if (score > best) {
          best = score;
          params.lambda = lambda;
        }
      }
      if (best < 0.0) throw DivergenceError(0, name + ": every lambda in the grid diverged");
      lambdas[name] = {{"lambda", params.lambda}, {"grid", scores}};
    } else {
      lambdas[name] = {{"lambda", params.lambda}};
    }
    progress("compare-metrics: ", name, " lambda ", params.lambda);
    auto results = register_pairs(test, metric, params, nullptr, o.jobs, name);
    write_run(out / "runs" / name, test, results,
              {{"metric", absolute_metric_spec(metric_spec(metric))}, {"mode", "iterative"}, {"split", o.split},
               {"lambda", params.lambda}});
    std::vector<double> mean(static_cast<std::size_t>(params.steps) + 1, 0.0);
    for (auto& r : results) {
      const auto t = totals(r.trace);
      for (std::size_t s = 0; s < mean.size(); ++s) mean[s] += t[s] / static_cast<double>(results.size());
      fields[name].push_back(std::move(r.field));
    }
    traces[name] = std::move(mean);
  }

  const EvalReport report = evaluate_run(eval_pairs(test), fields, reference, direction);
  write_text(out / "report.csv", report_csv(report));
  write_text(out / "summary.csv", summary_csv(report));
  write_text(out / "convergence.csv", convergence_csv(convergence_report(traces)));
  write_json(out / "lambda.json", lambdas);
  write_config(out / "config.json", cmd);
  for (const auto& s : report.summaries) {
    progress("compare-metrics: ", s.metric, " dice ", s.mean_dice_pre, " -> ", s.mean_dice_post);
  }
  return kOk;
}

void add_reg_params(CLI::App* sub, RegParams& p) {
  sub->add_option("--steps", p.steps, "Optimiser steps per pair")->check(CLI::NonNegativeNumber);
  sub->add_option("--lr", p.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--lambda", p.lambda, "Regularisation weight")->check(CLI::NonNegativeNumber);
}

}  // namespace

void add_register(CLI::App& app, Command& cmd) {
  auto o = std::make_shared<RegisterOptions>();
  CLI::App* sub = app.add_subcommand("register", "Register image pairs with one similarity metric");
  sub->add_option("--data", o->data, "Dataset directory");
  sub->add_option("--split", o->split, "Dataset split to register");
  sub->add_option("--moving", o->moving, "Moving image (.semt)");
  sub->add_option("--fixed", o->fixed, "Fixed image (.semt)");
  sub->add_option("--moving-labels", o->moving_labels, "Moving labels (.semt), for nccsup");
  sub->add_option("--fixed-labels", o->fixed_labels, "Fixed labels (.semt), for nccsup");
  sub->add_option("--num-classes", o->num_classes, "Classes in the label files");
  sub->add_option("--out", o->out, "Output run directory")->required();
  sub->add_option("--metric", o->metric, kMetricHelp);
  sub->add_option("--model", o->model, "Registration network checkpoint; predicts fields instead of optimising");
  add_reg_params(sub, o->params);
  sub->add_option("--jobs", o->jobs, "Pairs registered in parallel")->check(CLI::PositiveNumber);
  cmd.app = sub;
  cmd.path_options = {"data", "moving", "fixed", "moving-labels", "fixed-labels", "out", "model"};
  cmd.run = [o, &cmd] { return run_register(*o, cmd); };
}

void add_compare_metrics(CLI::App& app, Command& cmd) {
  auto o = std::make_shared<CompareOptions>();
  CLI::App* sub = app.add_subcommand("compare-metrics", "Register a split with several metrics and compare them");
  sub->add_option("--data", o->data, "Dataset directory")->required();
  sub->add_option("--split", o->split, "Evaluation split");
  sub->add_option("--metrics", o->metrics, std::string("Comma-separated metrics: ") + kMetricHelp)->required();
  sub->add_option("--reference", o->reference, "Run every baseline is tested against (default deepsim)");
  sub->add_option("--direction", o->direction, "greater | less | two-sided");
  sub->add_option("--lambda-grid", o->lambda_grid, "Comma-separated lambdas tuned per metric on --tune-split");
  sub->add_option("--tune-split", o->tune_split, "Split used for lambda tuning");
  sub->add_option("--out", o->out, "Output directory")->required();
  add_reg_params(sub, o->params);
  sub->add_option("--jobs", o->jobs, "Pairs registered in parallel")->check(CLI::PositiveNumber);
  cmd.app = sub;
  cmd.path_options = {"data", "out"};
  cmd.run = [o, &cmd] { return run_compare(*o, cmd); };
}

}  // namespace deepsim::cli
