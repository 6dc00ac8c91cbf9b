#include "deepsim/registration.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "deepsim/eval.hpp"
#include "deepsim/nn.hpp"
#include "deepsim/warp.hpp"

namespace deepsim {

namespace {

bool finite_terms(const LossTerms& t) {
  return std::isfinite(t.data) && std::isfinite(t.reg) && std::isfinite(t.total);
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

double mean_foreground_dice(const LabelMap& warped, const LabelMap& fixed) {
  std::vector<int> fg;
  for (int c = 1; c < fixed.num_classes(); ++c) fg.push_back(c);
  return fg.empty() ? 1.0 : mean_dice(warped, fixed, fg);
}

}  // namespace

RegResult register_iterative(const Image& moving, const Image& fixed, const IterConfig& cfg,
                             const std::optional<LabelPair>& labels, const DisplacementField* initial) {
  if (cfg.steps < 0) throw std::invalid_argument("register_iterative: steps must be >= 0");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("register_iterative: lr must be > 0");
  if (uses_extractor(cfg.metric)) require_unet_grid(moving.grid(), "register_iterative");
  const auto start = std::chrono::steady_clock::now();

  const RegistrationObjective objective(cfg.metric, moving, fixed, cfg.lambda, labels);
  std::vector<double> u = initial ? std::vector<double>(initial->data().begin(), initial->data().end())
                                  : std::vector<double>(2 * moving.grid().pixels(), 0.0);
  if (initial) require_same_grid(initial->grid(), moving.grid(), "register_iterative initial field");
  nn::AdamState state(u.size());
  nn::AdamConfig adam;
  adam.lr = cfg.lr;

  RegResult result;
  for (int step = 0; step <= cfg.steps; ++step) {
    const DisplacementField field(moving.height(), moving.width(), u);
    const bool update = step < cfg.steps;
    const LossResult r = objective.evaluate(field, update);
    if (!finite_terms(r.terms)) throw DivergenceError(step, "register_iterative: non-finite loss");
    if (cfg.record_trace || step == 0 || step == cfg.steps) result.trace.push_back(r.terms);
    if (!update) {
      result.field = field;
      break;
    }
    if (!all_finite(r.grad->data())) throw DivergenceError(step, "register_iterative: non-finite gradient");
    nn::adam_step(u, r.grad->data(), state, step + 1, adam);
    if (!all_finite(u)) throw DivergenceError(step + 1, "register_iterative: non-finite field");
  }
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

RegTrainResult train_registration(RegUNet& net, const std::vector<RegSample>& dataset,
                                  const TrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train_registration: empty dataset");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) {
    throw std::invalid_argument("train_registration: bad configuration");
  }
  validate_metric(cfg.metric);

  std::vector<RegistrationObjective> objectives;
  std::vector<nn::Tensor> inputs;
  bool have_labels = true;
  for (const auto& s : dataset) {
    require_unet_grid(s.moving.grid(), "train_registration");
    if (needs_labels(cfg.metric) && !s.labels) {
      throw std::invalid_argument("train_registration: nccsup requires labels for every pair");
    }
    have_labels = have_labels && s.labels.has_value();
    objectives.emplace_back(cfg.metric, s.moving, s.fixed, cfg.lambda, s.labels);
    inputs.push_back(reg_input(s.moving, s.fixed));
  }

  UNet& unet = net.net();
  auto evaluate_all = [&](std::vector<double>* dice) {
    double loss = 0.0, dsum = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const DisplacementField field = tensor_to_field(unet.forward(inputs[i]));
      loss += objectives[i].evaluate(field, false).terms.total;
      if (dice) dsum += mean_foreground_dice(warp_labels(dataset[i].labels->moving, field),
                                             dataset[i].labels->fixed);
    }
    if (dice) dice->push_back(dsum / static_cast<double>(dataset.size()));
    return loss / static_cast<double>(dataset.size());
  };

  RegTrainResult result;
  result.epoch_loss.push_back(evaluate_all(have_labels ? &result.epoch_dice : nullptr));

  nn::AdamConfig adam;
  adam.lr = cfg.lr;
  UNetOptimizer opt(unet, adam);
  const Rng rng = Rng(cfg.seed).split(0x4e6);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(dataset.size(), rng, static_cast<std::uint64_t>(epoch));
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      auto grads = zero_param_grads(unet);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        UNet::Cache cache;
        const nn::Tensor out = unet.forward(inputs[i], &cache);
        if (!all_finite(out.data)) throw DivergenceError(epoch, "train_registration: non-finite field");
        const LossResult r = objectives[i].evaluate(tensor_to_field(out), true);
        if (!finite_terms(r.terms)) throw DivergenceError(epoch, "train_registration: non-finite loss");
        batch_loss += r.terms.total;
        accumulate(grads, unet.backward(cache, field_to_tensor(*r.grad), false).params, scale);
      }
      opt.step(unet, grads);
      epoch_loss += batch_loss * scale;
      ++batches;
    }
    result.epoch_loss.push_back(epoch_loss / batches);
    if (have_labels) evaluate_all(&result.epoch_dice);
    if (cfg.on_epoch) cfg.on_epoch(epoch + 1, result.epoch_loss.back());
  }
  return result;
}

int steps_to_fraction(const std::vector<double>& trace, double fraction) {
  if (trace.empty()) throw std::invalid_argument("steps_to_fraction: empty trace");
  const double target = trace.front() - fraction * (trace.front() - trace.back());
  for (std::size_t t = 0; t < trace.size(); ++t) {
    if (trace[t] <= target) return static_cast<int>(t);
  }
  return static_cast<int>(trace.size()) - 1;
}

std::vector<ConvergenceRow> convergence_report(const std::map<std::string, std::vector<double>>& traces,
                                               double fraction) {
  if (traces.empty()) throw std::invalid_argument("convergence_report: no traces");
  std::vector<ConvergenceRow> rows;
  for (const auto& [name, trace] : traces) {
    if (trace.empty()) throw std::invalid_argument("convergence_report: empty trace for " + name);
    rows.push_back({name, steps_to_fraction(trace, fraction), trace.front(), trace.back()});
  }
  return rows;
}

std::string convergence_csv(const std::vector<ConvergenceRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "metric,steps_to_fraction,initial_loss,final_loss\n";
  for (const auto& r : rows) out << r.name << ',' << r.steps_to_fraction << ',' << r.initial << ',' << r.final << '\n';
  return out.str();
}

std::vector<double> totals(const std::vector<LossTerms>& trace) {
  std::vector<double> t;
  t.reserve(trace.size());
  for (const auto& x : trace) t.push_back(x.total);
  return t;
}

}  // namespace deepsim
