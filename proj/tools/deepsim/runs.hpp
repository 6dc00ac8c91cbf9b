#pragma once

#include <map>
#include <string>
#include <vector>

#include "common.hpp"
#include "dataset.hpp"
#include "deepsim/eval.hpp"
#include "deepsim/models.hpp"
#include "deepsim/registration.hpp"

namespace deepsim::cli {

inline constexpr const char* kRunFormat = "deepsim-run";

struct RegParams {
  int steps = 300;
  double lr = 0.5;
  double lambda = 0.1;
};

// Registers every pair, iteratively or with `model` when given. Parallel over
// pairs only, so results do not depend on `jobs`.
std::vector<RegResult> register_pairs(const std::vector<PairData>& pairs, const MetricKind& metric,
                                      const RegParams& params, const RegUNet* model, int jobs,
                                      const std::string& label);

// <dir>/<pair>/{field.semt,trace.csv} plus <dir>/manifest.json.
void write_run(const fs::path& dir, const std::vector<PairData>& pairs, const std::vector<RegResult>& results,
               Json meta);

// Fields of a run directory in the order of `names`.
std::vector<DisplacementField> read_run(const fs::path& dir, const std::vector<std::string>& names);

std::vector<EvalPair> eval_pairs(const std::vector<PairData>& pairs);

// Mean foreground Dice after warping the moving labels.
double mean_warped_dice(const std::vector<PairData>& pairs, const std::vector<RegResult>& results);

}  // namespace deepsim::cli
