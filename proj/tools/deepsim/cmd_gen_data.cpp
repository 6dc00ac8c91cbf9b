#include "common.hpp"
#include "dataset.hpp"
#include "deepsim/rng.hpp"

namespace deepsim::cli {

namespace {

struct GenDataOptions {
  std::string out;
  int n_train = 8;
  int n_val = 0;
  int n_test = 4;
  std::uint64_t seed = 0;
  int size = 64;
  SceneSpec scene;
  WarpSpec warp;
  double noise_sigma = 0.0;
  double noise_contrast = -1.0;
};

Json scene_json(const SceneSpec& s) {
  return {{"height", s.height},         {"width", s.width},
          {"num_blobs", s.num_blobs},   {"min_radius", s.min_radius},
          {"max_radius", s.max_radius}, {"num_classes", s.num_classes},
          {"background", s.background}, {"min_intensity", s.min_intensity},
          {"max_intensity", s.max_intensity}, {"noise_sigma", s.noise_sigma},
          {"seed", s.seed}};
}

Json warp_json(const WarpSpec& w) {
  return {{"amplitude", w.amplitude}, {"smoothness_sigma", w.smoothness_sigma}, {"seed", w.seed}};
}

int run(const GenDataOptions& o, const Command& cmd) {
  SceneSpec scene = o.scene;
  scene.height = scene.width = o.size;
  scene.noise_sigma = o.noise_contrast >= 0.0 ? o.noise_contrast * scene.foreground_contrast() : o.noise_sigma;
  validate(scene);
  validate(o.warp);

  const fs::path root = o.out;
  const int counts[] = {o.n_train, o.n_val, o.n_test};
  Json splits = Json::object();
  Json specs = Json::object();
  const Rng master(o.seed);
  for (int s = 0; s < 3; ++s) {
    const Rng split_rng = master.split(static_cast<std::uint64_t>(s));
    SceneSpec ss = scene;
    ss.seed = split_rng.split(0).seed();
    WarpSpec ws = o.warp;
    ws.seed = split_rng.split(1).seed();
    std::vector<std::string> names;
    for (int i = 0; i < counts[s]; ++i) {
      const std::string name = pair_name(static_cast<std::size_t>(i));
      write_pair(root / kSplits[s] / name, make_pair(ss, ws, static_cast<std::uint64_t>(i)));
      names.push_back(name);
    }
    progress("gen-data: ", kSplits[s], " ", counts[s], " pairs");
    splits[kSplits[s]] = names;
    specs[kSplits[s]] = {{"scene", scene_json(ss)}, {"warp", warp_json(ws)}};
  }
  write_json(root / "manifest.json", Json{{"format", kDatasetFormat},
                                          {"version", 1},
                                          {"grid", {o.size, o.size}},
                                          {"num_classes", scene.num_classes},
                                          {"seed", o.seed},
                                          {"splits", splits},
                                          {"specs", specs}});
  write_config(root / "config.json", cmd);
  return kOk;
}

}  // namespace

void add_gen_data(CLI::App& app, Command& cmd) {
  auto o = std::make_shared<GenDataOptions>();
  CLI::App* sub = app.add_subcommand("gen-data", "Generate a synthetic blob dataset of image pairs");
  sub->add_option("--out", o->out, "Output dataset directory")->required();
  sub->add_option("--n-train", o->n_train, "Training pairs")->check(CLI::NonNegativeNumber);
  sub->add_option("--n-val", o->n_val, "Validation pairs")->check(CLI::NonNegativeNumber);
  sub->add_option("--n-test", o->n_test, "Test pairs")->check(CLI::NonNegativeNumber);
  sub->add_option("--seed", o->seed, "Master seed");
  sub->add_option("--size", o->size, "Image height and width");
  sub->add_option("--num-blobs", o->scene.num_blobs, "Blobs per scene");
  sub->add_option("--min-radius", o->scene.min_radius, "Smallest blob radius");
  sub->add_option("--max-radius", o->scene.max_radius, "Largest blob radius");
  sub->add_option("--num-classes", o->scene.num_classes, "Classes including background");
  sub->add_option("--noise-sigma", o->noise_sigma, "Gaussian noise standard deviation");
  sub->add_option("--noise-contrast", o->noise_contrast,
                  "Noise as a multiple of foreground contrast (overrides --noise-sigma when >= 0)");
  sub->add_option("--amplitude", o->warp.amplitude, "Maximum displacement in pixels");
  sub->add_option("--smoothness", o->warp.smoothness_sigma, "Warp smoothing sigma in pixels");
  cmd.app = sub;
  cmd.path_options = {"out"};
  cmd.run = [o, &cmd] { return run(*o, cmd); };
}

}  // namespace deepsim::cli
