#pragma once

// Drivers that minimize the registration loss: per-pair iterative
// optimization of a dense field, and amortized training of RegUNet.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepsim/models.hpp"
#include "deepsim/similarity.hpp"

namespace deepsim {

/// Non-finite loss during optimization; `step` is where it appeared.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int step, const std::string& what)
      : std::runtime_error(what + " (diverged at step " + std::to_string(step) + ")"), step_(step) {}
  [[nodiscard]] int step() const { return step_; }

 private:
  int step_;
};

struct IterConfig {
  int steps = 300;
  double lr = 0.5;
  double lambda = 0.1;
  MetricKind metric = MseMetric{};
  bool record_trace = true;
};

struct RegResult {
  DisplacementField field;
  /// Loss before each update and after the last: steps + 1 entries (only the
  /// first and last when record_trace is off).
  std::vector<LossTerms> trace;
  double wall_time = 0.0;
};

/// Adam on the per-pixel displacement, starting from `initial` (zero when
/// absent). Throws DivergenceError on a non-finite loss.
RegResult register_iterative(const Image& moving, const Image& fixed, const IterConfig& cfg,
                             const std::optional<LabelPair>& labels = std::nullopt,
                             const DisplacementField* initial = nullptr);

struct RegSample {
  Image moving;
  Image fixed;
  std::optional<LabelPair> labels;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 4;
  double lr = 1e-3;
  double lambda = 0.1;
  MetricKind metric = MseMetric{};
  std::uint64_t seed = 0;
  std::function<void(int epoch, double loss)> on_epoch;  // optional progress hook
};

struct RegTrainResult {
  /// Entry 0 is the mean loss before training; entry e is the mean batch
  /// loss seen during epoch e.
  std::vector<double> epoch_loss;
  /// Mean foreground Dice after each epoch (entry 0: before training).
  /// Empty when the dataset carries no labels.
  std::vector<double> epoch_dice;
};

/// Trains `net` on the mean registration loss over `dataset`. Feature
/// metrics use the frozen extractor held by the metric; its parameters are
/// never touched.
RegTrainResult train_registration(RegUNet& net, const std::vector<RegSample>& dataset,
                                  const TrainConfig& cfg);

struct ConvergenceRow {
  std::string name;
  int steps_to_fraction = 0;  // first index reaching the fraction of final reduction
  double initial = 0.0;
  double final = 0.0;
};

/// First index t with trace[t] <= L0 - fraction * (L0 - L_final).
int steps_to_fraction(const std::vector<double>& trace, double fraction);

std::vector<ConvergenceRow> convergence_report(const std::map<std::string, std::vector<double>>& traces,
                                               double fraction = 0.9);
std::string convergence_csv(const std::vector<ConvergenceRow>& rows);

/// Totals of a loss trace.
std::vector<double> totals(const std::vector<LossTerms>& trace);

}  // namespace deepsim
