#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"
#include "deepsim/image.hpp"
#include "deepsim/synth.hpp"

namespace deepsim::cli {

inline constexpr const char* kDatasetFormat = "deepsim-dataset";
inline const char* const kSplits[] = {"train", "val", "test"};

struct PairData {
  std::string name;
  Image moving;
  Image fixed;
  LabelMap moving_labels;
  LabelMap fixed_labels;
  std::optional<DisplacementField> truth;
};

class Dataset {
 public:
  // Reads <root>/manifest.json; throws IoError/FormatError.
  explicit Dataset(fs::path root);

  [[nodiscard]] const fs::path& root() const { return root_; }
  [[nodiscard]] int num_classes() const { return num_classes_; }
  [[nodiscard]] Grid grid() const { return grid_; }
  // Pair names of a split; UsageError for an unknown split.
  [[nodiscard]] std::vector<std::string> pairs(const std::string& split) const;
  [[nodiscard]] PairData load(const std::string& split, const std::string& name) const;
  [[nodiscard]] std::vector<PairData> load_split(const std::string& split) const;

 private:
  fs::path root_;
  Json manifest_;
  int num_classes_ = 0;
  Grid grid_;
};

std::string pair_name(std::size_t index);

void write_pair(const fs::path& dir, const SynthPair& pair);

}  // namespace deepsim::cli
