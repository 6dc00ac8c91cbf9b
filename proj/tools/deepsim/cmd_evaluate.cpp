#include "common.hpp"
#include "dataset.hpp"
#include "deepsim/eval.hpp"
#include "deepsim/tensor_io.hpp"
#include "runs.hpp"

namespace deepsim::cli {

namespace {

struct EvaluateOptions {
  std::string data;
  std::string split = "test";
  std::vector<std::string> runs;
  std::string reference = "deepsim";
  std::string direction = "greater";
  std::string out;
};

int run_evaluate(const EvaluateOptions& o, const Command& cmd) {
  const TestDirection direction = parse_direction(o.direction);
  const Dataset data(o.data);
  const auto pairs = data.load_split(o.split);
  std::vector<std::string> names;
  for (const auto& p : pairs) names.push_back(p.name);

  std::map<std::string, std::vector<DisplacementField>> fields;
  for (const auto& run : o.runs) {
    const auto eq = run.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == run.size()) {
      throw UsageError("--run expects NAME=DIR, got '" + run + "'");
    }
    const std::string name = run.substr(0, eq);
    if (fields.contains(name)) throw UsageError("run '" + name + "' given twice");
    fields[name] = read_run(run.substr(eq + 1), names);
  }

  const EvalReport report = evaluate_run(eval_pairs(pairs), fields, o.reference, direction);
  const fs::path out = o.out;
  write_text(out / "report.csv", report_csv(report));
  write_text(out / "summary.csv", summary_csv(report));
  write_config(out / "config.json", cmd);
  for (const auto& row : report.rows) {
    progress("evaluate: ", o.reference, " vs ", row.baseline.metric, " p=", row.p_value, " ", row.stars);
  }
  return kOk;
}

struct RenderOptions {
  std::string field;
  int spacing = 8;
  std::string out;
};

int run_render(const RenderOptions& o, const Command& cmd) {
  const DisplacementField field = load_field(o.field);
  const fs::path out = o.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_pgm(render_grid(field, o.spacing), out);
  fs::path config = out;
  config.replace_extension(".config.json");
  write_config(config, cmd);
  return kOk;
}

}  // namespace

void add_evaluate(CLI::App& app, Command& cmd) {
  auto o = std::make_shared<EvaluateOptions>();
  CLI::App* sub = app.add_subcommand("evaluate", "Compare registration runs with Dice, smoothness and Wilcoxon tests");
  sub->add_option("--data", o->data, "Dataset directory")->required();
  sub->add_option("--split", o->split, "Split the runs registered");
  sub->add_option("--run", o->runs, "NAME=DIR of a register output (repeatable)")->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  sub->add_option("--reference", o->reference, "Run every baseline is tested against");
  sub->add_option("--direction", o->direction, "greater | less | two-sided");
  sub->add_option("--out", o->out, "Output directory")->required();
  cmd.app = sub;
  cmd.path_options = {"data", "run", "out"};
  cmd.run = [o, &cmd] { return run_evaluate(*o, cmd); };
}

void add_render_grid(CLI::App& app, Command& cmd) {
  auto o = std::make_shared<RenderOptions>();
  CLI::App* sub = app.add_subcommand("render-grid", "Render a displacement field as a warped grid image (PGM)");
  sub->add_option("--field", o->field, "Displacement field (.semt)")->required();
  sub->add_option("--spacing", o->spacing, "Grid line spacing in pixels")->check(CLI::PositiveNumber);
  sub->add_option("--out", o->out, "Output PGM file")->required();
  cmd.app = sub;
  cmd.path_options = {"field", "out"};
  cmd.run = [o, &cmd] { return run_render(*o, cmd); };
}

}  // namespace deepsim::cli
