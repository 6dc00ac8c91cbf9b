#include "common.hpp"
#include "dataset.hpp"
#include "deepsim/models.hpp"
#include "deepsim/registration.hpp"

namespace deepsim::cli {

namespace {

struct TrainSegOptions {
  std::string data;
  std::string out;
  std::string split = "train";
  std::string eval_split;
  int epochs = 30;
  int batch_size = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

std::vector<SegSample> seg_samples(const std::vector<PairData>& pairs) {
  std::vector<SegSample> out;
  for (const auto& p : pairs) {
    out.push_back({p.moving, p.moving_labels});
    out.push_back({p.fixed, p.fixed_labels});
  }
  return out;
}

int run_train_seg(const TrainSegOptions& o, const Command& cmd) {
  const Dataset data(o.data);
  const auto train = seg_samples(data.load_split(o.split));
  if (train.empty()) throw UsageError("split '" + o.split + "' of " + o.data + " is empty");

  SegUNet net(data.num_classes(), Rng(o.seed));
  SegTrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.lr = o.lr;
  cfg.seed = o.seed;
  cfg.on_epoch = [&](int epoch, double loss) { progress("train-seg: epoch ", epoch, " loss ", loss); };
  const SegTrainResult result = train_segmentation(net, train, cfg);
  net.freeze();

  const fs::path out = o.out;
  save_seg_checkpoint(out / "checkpoint", net);
  std::string trace = "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    trace += std::to_string(e + 1) + ',' + format_double(result.epoch_loss[e]) + '\n';
  }
  write_text(out / "trace.csv", trace);

  Json metrics = {{"train_accuracy", seg_accuracy(net, train)}, {"train_images", train.size()}};
  if (!o.eval_split.empty()) {
    const auto held_out = seg_samples(data.load_split(o.eval_split));
    if (!held_out.empty()) {
      metrics["eval_accuracy"] = seg_accuracy(net, held_out);
      metrics["eval_images"] = held_out.size();
    }
  }
  write_json(out / "metrics.json", metrics);
  write_config(out / "config.json", cmd);
  progress("train-seg: checkpoint ", (out / "checkpoint").string(), " accuracy ",
           metrics["train_accuracy"].get<double>());
  return kOk;
}

struct TrainRegOptions {
  std::string data;
  std::string out;
  std::string split = "train";
  std::string metric;
  int epochs = 20;
  int batch_size = 4;
  double lr = 1e-3;
  double lambda = 0.1;
  std::uint64_t seed = 0;
};

int run_train_reg(const TrainRegOptions& o, const Command& cmd) {
  const MetricKind metric = load_metric(o.metric);
  const Dataset data(o.data);
  std::vector<RegSample> samples;
  for (auto& p : data.load_split(o.split)) {
    samples.push_back({std::move(p.moving), std::move(p.fixed), LabelPair{p.moving_labels, p.fixed_labels}});
  }
  if (samples.empty()) throw UsageError("split '" + o.split + "' of " + o.data + " is empty");

  const auto* feature = std::get_if<DeepSimMetric>(&metric);
  std::vector<std::uint8_t> before;
  if (feature) before = checkpoint_bytes(feature->checkpoint);

  RegUNet net{Rng(o.seed)};
  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.lr = o.lr;
  cfg.lambda = o.lambda;
  cfg.metric = metric;
  cfg.seed = o.seed;
  cfg.on_epoch = [&](int epoch, double loss) { progress("train-reg: epoch ", epoch, " loss ", loss); };
  const RegTrainResult result = train_registration(net, samples, cfg);

  if (feature && checkpoint_bytes(feature->checkpoint) != before) {
    throw std::logic_error("feature extractor checkpoint changed during training: " + feature->checkpoint);
  }

  const fs::path out = o.out;
  save_reg_checkpoint(out / "checkpoint", net);
  std::string trace = "epoch,loss,dice\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    trace += std::to_string(e) + ',' + format_double(result.epoch_loss[e]) + ',' +
             (e < result.epoch_dice.size() ? format_double(result.epoch_dice[e]) : "") + '\n';
  }
  write_text(out / "trace.csv", trace);
  write_config(out / "config.json", cmd);
  progress("train-reg: checkpoint ", (out / "checkpoint").string());
  return kOk;
}

}  // namespace

void add_train_seg(CLI::App& app, Command& cmd) {
  auto o = std::make_shared<TrainSegOptions>();
  CLI::App* sub = app.add_subcommand("train-seg", "Train the segmentation network used as feature extractor");
  sub->add_option("--data", o->data, "Dataset directory")->required();
  sub->add_option("--out", o->out, "Output run directory (checkpoint in <out>/checkpoint)")->required();
  sub->add_option("--split", o->split, "Training split");
  sub->add_option("--eval-split", o->eval_split, "Held-out split for accuracy");
  sub->add_option("--epochs", o->epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  sub->add_option("--batch-size", o->batch_size, "Images per batch")->check(CLI::PositiveNumber);
  sub->add_option("--lr", o->lr, "Adam learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--seed", o->seed, "Initialisation and shuffling seed");
  cmd.app = sub;
  cmd.path_options = {"data", "out"};
  cmd.run = [o, &cmd] { return run_train_seg(*o, cmd); };
}

void add_train_reg(CLI::App& app, Command& cmd) {
  auto o = std::make_shared<TrainRegOptions>();
  CLI::App* sub = app.add_subcommand("train-reg", "Train the amortised registration network");
  sub->add_option("--data", o->data, "Dataset directory")->required();
  sub->add_option("--out", o->out, "Output run directory (checkpoint in <out>/checkpoint)")->required();
  sub->add_option("--metric", o->metric, kMetricHelp)
      ->required();
  sub->add_option("--split", o->split, "Training split");
  sub->add_option("--epochs", o->epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  sub->add_option("--batch-size", o->batch_size, "Pairs per batch")->check(CLI::PositiveNumber);
  sub->add_option("--lr", o->lr, "Adam learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--lambda", o->lambda, "Regularisation weight")->check(CLI::NonNegativeNumber);
  sub->add_option("--seed", o->seed, "Initialisation and shuffling seed");
  cmd.app = sub;
  cmd.path_options = {"data", "out"};
  cmd.run = [o, &cmd] { return run_train_reg(*o, cmd); };
}

}  // namespace deepsim::cli
