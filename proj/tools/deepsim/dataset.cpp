#include "dataset.hpp"

#include <cstdio>

#include "deepsim/tensor_io.hpp"

namespace deepsim::cli {

Dataset::Dataset(fs::path root) : root_(std::move(root)) {
  const fs::path file = root_ / "manifest.json";
  if (!fs::exists(file)) throw IoError("no dataset manifest at " + file.string());
  manifest_ = read_json(file);
  try {
    if (manifest_.at("format").get<std::string>() != kDatasetFormat) {
      throw FormatError(file.string() + ": not a deepsim dataset");
    }
    num_classes_ = manifest_.at("num_classes").get<int>();
    grid_ = {manifest_.at("grid").at(0).get<int>(), manifest_.at("grid").at(1).get<int>()};
  } catch (const Json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

std::vector<std::string> Dataset::pairs(const std::string& split) const {
  const auto& splits = manifest_.at("splits");
  if (!splits.contains(split)) throw UsageError("dataset " + root_.string() + " has no split '" + split + "'");
  return splits.at(split).get<std::vector<std::string>>();
}

PairData Dataset::load(const std::string& split, const std::string& name) const {
  const fs::path dir = root_ / split / name;
  PairData p;
  p.name = name;
  p.moving = load_image(dir / "moving.semt");
  p.fixed = load_image(dir / "fixed.semt");
  p.moving_labels = load_labels(dir / "moving_labels.semt", num_classes_);
  p.fixed_labels = load_labels(dir / "fixed_labels.semt", num_classes_);
  if (fs::exists(dir / "truth.semt")) p.truth = load_field(dir / "truth.semt");
  return p;
}

std::vector<PairData> Dataset::load_split(const std::string& split) const {
  std::vector<PairData> out;
  for (const auto& name : pairs(split)) out.push_back(load(split, name));
  return out;
}

std::string pair_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pair_%04zu", index);
  return buf;
}

void write_pair(const fs::path& dir, const SynthPair& pair) {
  fs::create_directories(dir);
  save_image(dir / "moving.semt", pair.moving.image);
  save_image(dir / "fixed.semt", pair.fixed.image);
  save_labels(dir / "moving_labels.semt", pair.moving.labels);
  save_labels(dir / "fixed_labels.semt", pair.fixed.labels);
  save_field(dir / "truth.semt", pair.truth);
}

}  // namespace deepsim::cli
