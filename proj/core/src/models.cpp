#include "deepsim/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "deepsim/tensor_io.hpp"
#include "json.hpp"

namespace deepsim {

namespace {

struct LayerSpec {
  const char* name;
  int in;   // -1: network input channels
  int out;  // -1: network output channels
  int k;
};

constexpr std::array<LayerSpec, UNet::kNumLayers> kLayout = {{
    {"enc1a", -1, 16, 3},
    {"enc1b", 16, 16, 3},
    {"enc2a", 16, 32, 3},
    {"enc2b", 32, 32, 3},
    {"enc3a", 32, 64, 3},
    {"enc3b", 64, 64, 3},
    {"dec2a", 64 + 32, 32, 3},
    {"dec2b", 32, 32, 3},
    {"dec1a", 32 + 16, 16, 3},
    {"dec1b", 16, 16, 3},
    {"head", 16, -1, 1},
}};

void check_pyramid_shape(const FeaturePyramid& p, int h, int w) {
  for (int l = 0; l < 3; ++l) {
    const auto& t = p.levels[l];
    if (t.channels != UNet::kWidths[l] || t.height != (h >> l) || t.width != (w >> l)) {
      throw std::logic_error("feature pyramid level " + std::to_string(l) +
                             " has unexpected shape");
    }
  }
}

}  // namespace

void require_unet_grid(const Grid& g, const char* what) {
  if (g.height % 4 != 0 || g.width % 4 != 0) {
    throw ShapeError(std::string(what) + ": grid " + to_string(g) + " is not divisible by 4");
  }
}

UNet::UNet(int in_channels, int out_channels) : in_channels_(in_channels), out_channels_(out_channels) {
  if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("UNet: bad channel counts");
  layers_.reserve(kNumLayers);
  for (const auto& spec : kLayout) {
    layers_.emplace_back(spec.in < 0 ? in_channels : spec.in, spec.out < 0 ? out_channels : spec.out,
                         spec.k);
  }
}

UNet UNet::zeros(int in_channels, int out_channels) { return UNet(in_channels, out_channels); }

UNet::UNet(int in_channels, int out_channels, Rng init) : UNet(in_channels, out_channels) {
  for (int i = 0; i < kNumLayers; ++i) {
    auto& layer = layers_[i];
    const Rng stream = init.split(static_cast<std::uint64_t>(i));
    const double fan_in = static_cast<double>(layer.in_channels) * layer.kernel_size * layer.kernel_size;
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (std::size_t j = 0; j < layer.kernel.size(); ++j) layer.kernel[j] = std_dev * stream.normal(j);
    std::fill(layer.bias.begin(), layer.bias.end(), kInitBias);
  }
}

std::size_t UNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.kernel.size() + l.bias.size();
  return n;
}

FeaturePyramid UNet::encode(const nn::Tensor& input, Cache* cache) const {
  require_unet_grid({input.height, input.width}, "UNet");
  if (input.channels != in_channels_) throw ShapeError("UNet: input channel count mismatch");
  Cache local;
  Cache& c = cache ? *cache : local;
  auto run = [&](int i, const nn::Tensor& x) {
    c.conv_in[i] = x;
    c.conv_out[i] = nn::conv2d(x, layers_[i]);
    return nn::relu(c.conv_out[i]);
  };
  c.features[0] = run(1, run(0, input));
  c.features[1] = run(3, run(2, nn::avgpool2(c.features[0])));
  c.features[2] = run(5, run(4, nn::avgpool2(c.features[1])));
  c.full = false;
  FeaturePyramid p{{c.features[0], c.features[1], c.features[2]}};
  check_pyramid_shape(p, input.height, input.width);
  return p;
}

nn::Tensor UNet::forward(const nn::Tensor& input, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  encode(input, &c);
  auto run = [&](int i, const nn::Tensor& x) {
    c.conv_in[i] = x;
    c.conv_out[i] = nn::conv2d(x, layers_[i]);
    return nn::relu(c.conv_out[i]);
  };
  const nn::Tensor d2 = run(7, run(6, nn::concat(nn::upsample2(c.features[2]), c.features[1])));
  const nn::Tensor d1 = run(9, run(8, nn::concat(nn::upsample2(d2), c.features[0])));
  c.conv_in[kHead] = d1;
  c.conv_out[kHead] = nn::conv2d(d1, layers_[kHead]);
  c.full = true;
  return c.conv_out[kHead];
}

namespace {

// Backward through the encoder; `g` holds dLoss/dFeatures on entry. When
// `params` is null only input gradients are formed.
nn::Tensor encoder_backward(const UNet& net, const UNet::Cache& c, std::array<nn::Tensor, 3> g,
                            UNet::ParamGrads* params, bool want_input_grad) {
  const auto& layers = net.layers();
  auto back = [&](int i, const nn::Tensor& d_act, bool need_input) {
    const nn::Tensor d_pre = nn::relu_grad(c.conv_out[i], d_act);
    if (params) {
      auto cg = nn::conv2d_grad(c.conv_in[i], layers[i], d_pre);
      params->kernel[i] = std::move(cg.kernel);
      params->bias[i] = std::move(cg.bias);
      return std::move(cg.input);
    }
    return need_input ? nn::conv2d_input_grad(layers[i], d_pre) : nn::Tensor{};
  };
  nn::Tensor d = back(4, back(5, g[2], true), true);
  d = nn::avgpool2_grad(d);
  for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g[1].data[i];
  d = back(2, back(3, d, true), true);
  d = nn::avgpool2_grad(d);
  for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g[0].data[i];
  return back(0, back(1, d, true), want_input_grad);
}

}  // namespace

UNet::Grads UNet::backward(const Cache& c, const nn::Tensor& d_output, bool want_input_grad) const {
  if (!c.full) throw std::logic_error("UNet::backward: cache holds an encoder-only pass");
  Grads out;
  out.params = zero_param_grads(*this);
  auto back = [&](int i, const nn::Tensor& d_act) {
    const nn::Tensor d_pre = nn::relu_grad(c.conv_out[i], d_act);
    auto cg = nn::conv2d_grad(c.conv_in[i], layers_[i], d_pre);
    out.params.kernel[i] = std::move(cg.kernel);
    out.params.bias[i] = std::move(cg.bias);
    return std::move(cg.input);
  };
  auto head = nn::conv2d_grad(c.conv_in[kHead], layers_[kHead], d_output);
  out.params.kernel[kHead] = std::move(head.kernel);
  out.params.bias[kHead] = std::move(head.bias);

  auto [d_up1, d_f0] = nn::split_channels(back(8, back(9, head.input)), kWidths[1]);
  auto [d_up2, d_f1] = nn::split_channels(back(6, back(7, nn::upsample2_grad(d_up1))), kWidths[2]);
  nn::Tensor d_f2 = nn::upsample2_grad(d_up2);

  out.input = encoder_backward(*this, c, {std::move(d_f0), std::move(d_f1), std::move(d_f2)},
                               &out.params, want_input_grad);
  return out;
}

nn::Tensor UNet::encoder_input_grad(const Cache& c, const FeaturePyramid& d_features) const {
  if (d_features.levels.size() != 3) throw ShapeError("encoder_input_grad: need 3 levels");
  for (int l = 0; l < 3; ++l) {
    if (!d_features.levels[l].same_shape(c.features[l])) {
      throw ShapeError("encoder_input_grad: feature gradient shape mismatch");
    }
  }
  return encoder_backward(*this, c, {d_features.levels[0], d_features.levels[1], d_features.levels[2]},
                          nullptr, true);
}

UNet::ParamGrads zero_param_grads(const UNet& net) {
  UNet::ParamGrads g;
  for (const auto& l : net.layers()) {
    g.kernel.emplace_back(l.kernel.size(), 0.0);
    g.bias.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

void accumulate(UNet::ParamGrads& into, const UNet::ParamGrads& g, double scale) {
  for (std::size_t i = 0; i < into.kernel.size(); ++i) {
    for (std::size_t j = 0; j < into.kernel[i].size(); ++j) into.kernel[i][j] += scale * g.kernel[i][j];
    for (std::size_t j = 0; j < into.bias[i].size(); ++j) into.bias[i][j] += scale * g.bias[i][j];
  }
}

UNetOptimizer::UNetOptimizer(const UNet& net, nn::AdamConfig cfg) : cfg_(cfg) {
  for (const auto& l : net.layers()) {
    kernel_state_.emplace_back(l.kernel.size());
    bias_state_.emplace_back(l.bias.size());
  }
}

void UNetOptimizer::step(UNet& net, const UNet::ParamGrads& grads) {
  ++t_;
  auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    nn::adam_step(layers[i].kernel, grads.kernel[i], kernel_state_[i], t_, cfg_);
    nn::adam_step(layers[i].bias, grads.bias[i], bias_state_[i], t_, cfg_);
  }
}

SegUNet::SegUNet(UNet net) : net_(std::move(net)) {
  if (net_.in_channels() != 1) throw std::invalid_argument("SegUNet: input must be single-channel");
}

SegUNet::SegUNet(int num_classes, Rng init) : net_(1, num_classes, init) {}

SegUNet SegUNet::zeros(int num_classes) { return SegUNet(UNet::zeros(1, num_classes)); }

SegUNet SegUNet::from_net(UNet net, bool frozen) {
  SegUNet s(std::move(net));
  s.frozen_ = frozen;
  return s;
}

UNet& SegUNet::mutable_net() {
  if (frozen_) throw std::logic_error("SegUNet: parameters are frozen");
  return net_;
}

RegUNet::RegUNet(Rng init) : net_(2, 2, init) {
  auto& head = net_.layers()[UNet::kHead];
  std::fill(head.kernel.begin(), head.kernel.end(), 0.0);
  std::fill(head.bias.begin(), head.bias.end(), 0.0);
}

RegUNet RegUNet::from_net(UNet net) {
  if (net.in_channels() != 2 || net.out_channels() != 2) {
    throw std::invalid_argument("RegUNet: expected 2 input and 2 output channels");
  }
  return RegUNet(std::move(net));
}

SegOutput seg_forward(const SegUNet& net, const Image& image) {
  require_unet_grid(image.grid(), "seg_forward");
  UNet::Cache cache;
  SegOutput out;
  out.logits = net.net().forward(nn::to_tensor(image), &cache);
  out.pyramid.levels.assign(cache.features.begin(), cache.features.end());
  return out;
}

FeaturePyramid extract_features(const SegUNet& frozen_net, const Image& image) {
  if (!frozen_net.frozen()) throw std::logic_error("extract_features: extractor is not frozen");
  require_unet_grid(image.grid(), "extract_features");
  return frozen_net.net().encode(nn::to_tensor(image));
}

nn::Tensor reg_input(const Image& moving, const Image& fixed) {
  require_same_grid(moving.grid(), fixed.grid(), "reg_forward");
  const Image* both[] = {&moving, &fixed};
  return nn::stack_images(both);
}

DisplacementField tensor_to_field(const nn::Tensor& t) {
  if (t.channels != 2) throw ShapeError("tensor_to_field: expected 2 channels");
  std::vector<double> d(2 * t.plane());
  for (std::size_t i = 0; i < t.plane(); ++i) {
    d[2 * i] = t.data[i];
    d[2 * i + 1] = t.data[t.plane() + i];
  }
  return DisplacementField(t.height, t.width, std::move(d));
}

nn::Tensor field_to_tensor(const DisplacementField& f) {
  nn::Tensor t(2, f.height(), f.width());
  const auto d = f.data();
  for (std::size_t i = 0; i < t.plane(); ++i) {
    t.data[i] = d[2 * i];
    t.data[t.plane() + i] = d[2 * i + 1];
  }
  return t;
}

DisplacementField reg_forward(const RegUNet& net, const Image& moving, const Image& fixed) {
  require_unet_grid(moving.grid(), "reg_forward");
  return tensor_to_field(net.net().forward(reg_input(moving, fixed)));
}

std::vector<std::size_t> shuffled_indices(std::size_t n, const Rng& rng, std::uint64_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Rng stream = rng.split(epoch);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(stream.below(i, i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

SegTrainResult train_segmentation(SegUNet& net, const std::vector<SegSample>& dataset,
                                  const SegTrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train_segmentation: empty dataset");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr > 0)) {
    throw std::invalid_argument("train_segmentation: bad configuration");
  }
  UNet& unet = net.mutable_net();
  std::vector<nn::Tensor> inputs;
  for (const auto& s : dataset) {
    require_same_grid(s.image.grid(), s.labels.grid(), "train_segmentation");
    require_unet_grid(s.image.grid(), "train_segmentation");
    if (s.labels.num_classes() > net.num_classes()) {
      throw std::invalid_argument("train_segmentation: label classes exceed network outputs");
    }
    inputs.push_back(nn::to_tensor(s.image));
  }
  nn::AdamConfig adam;
  adam.lr = cfg.lr;
  UNetOptimizer opt(unet, adam);
  const Rng rng = Rng(cfg.seed).split(0x5e9);

  SegTrainResult result;
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
        const nn::Tensor logits = unet.forward(inputs[i], &cache);
        const auto ce = nn::softmax_ce(logits, dataset[i].labels.data());
        batch_loss += ce.loss;
        accumulate(grads, unet.backward(cache, ce.grad, false).params, scale);
      }
      opt.step(unet, grads);
      epoch_loss += batch_loss * scale;
      ++batches;
    }
    result.epoch_loss.push_back(epoch_loss / batches);
    if (cfg.on_epoch) cfg.on_epoch(epoch + 1, result.epoch_loss.back());
  }
  return result;
}

double seg_accuracy(const SegUNet& net, const std::vector<SegSample>& dataset) {
  std::size_t correct = 0, total = 0;
  for (const auto& s : dataset) {
    const nn::Tensor logits = net.net().forward(nn::to_tensor(s.image));
    const std::size_t hw = logits.plane();
    for (std::size_t i = 0; i < hw; ++i) {
      int best = 0;
      for (int c = 1; c < logits.channels; ++c) {
        if (logits.data[c * hw + i] > logits.data[best * hw + i]) best = c;
      }
      correct += best == s.labels.data()[i] ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

namespace {

std::string param_file(int layer, const char* what) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "layer%02d_%s.semt", layer, what);
  return buf;
}

void save_unet(const std::filesystem::path& dir, const UNet& net, nlohmann::json topo) {
  std::filesystem::create_directories(dir);
  topo["format"] = "deepsim-unet";
  topo["in_channels"] = net.in_channels();
  topo["out_channels"] = net.out_channels();
  topo["widths"] = UNet::kWidths;
  auto& layers = topo["layers"] = nlohmann::json::array();
  for (int i = 0; i < UNet::kNumLayers; ++i) {
    const auto& l = net.layers()[i];
    layers.push_back({{"name", kLayout[i].name},
                      {"kind", "conv2d"},
                      {"in", l.in_channels},
                      {"out", l.out_channels},
                      {"kernel", l.kernel_size},
                      {"relu", i != UNet::kHead}});
    const std::int64_t kshape[] = {l.out_channels, l.in_channels, l.kernel_size, l.kernel_size};
    const std::int64_t bshape[] = {l.out_channels};
    save_tensor(dir / param_file(i, "kernel"), kshape, l.kernel);
    save_tensor(dir / param_file(i, "bias"), bshape, l.bias);
  }
  std::ofstream out(dir / "topology.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "topology.json").string());
  out << topo.dump(2) << '\n';
}

std::pair<UNet, nlohmann::json> load_unet(const std::filesystem::path& dir) {
  std::ifstream in(dir / "topology.json");
  if (!in) throw IoError("checkpoint " + dir.string() + " has no topology.json");
  nlohmann::json topo;
  try {
    topo = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint topology: " + std::string(e.what()));
  }
  if (topo.value("format", "") != "deepsim-unet") throw FormatError("checkpoint: unknown format");
  UNet net = UNet::zeros(topo.at("in_channels").get<int>(), topo.at("out_channels").get<int>());
  for (int i = 0; i < UNet::kNumLayers; ++i) {
    auto& l = net.layers()[i];
    auto k = load_tensor(dir / param_file(i, "kernel"));
    auto b = load_tensor(dir / param_file(i, "bias"));
    if (k.data.size() != l.kernel.size() || b.data.size() != l.bias.size()) {
      throw FormatError("checkpoint: layer " + std::to_string(i) + " has wrong parameter count");
    }
    require_finite(k.data, "checkpoint kernel");
    require_finite(b.data, "checkpoint bias");
    l.kernel = std::move(k.data);
    l.bias = std::move(b.data);
  }
  return {std::move(net), std::move(topo)};
}

}  // namespace

void save_seg_checkpoint(const std::filesystem::path& dir, const SegUNet& net) {
  save_unet(dir, net.net(), {{"kind", "seg"}, {"num_classes", net.num_classes()}, {"frozen", net.frozen()}});
}

SegUNet load_seg_checkpoint(const std::filesystem::path& dir) {
  auto [net, topo] = load_unet(dir);
  if (topo.value("kind", "") != "seg") throw FormatError(dir.string() + " is not a segmentation checkpoint");
  return SegUNet::from_net(std::move(net), topo.value("frozen", false));
}

void save_reg_checkpoint(const std::filesystem::path& dir, const RegUNet& net) {
  save_unet(dir, net.net(), {{"kind", "reg"}});
}

RegUNet load_reg_checkpoint(const std::filesystem::path& dir) {
  auto [net, topo] = load_unet(dir);
  if (topo.value("kind", "") != "reg") throw FormatError(dir.string() + " is not a registration checkpoint");
  return RegUNet::from_net(std::move(net));
}

std::vector<std::uint8_t> checkpoint_bytes(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::uint8_t> all;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    all.insert(all.end(), name.begin(), name.end());
    const auto bytes = read_file_bytes(f);
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  return all;
}

}  // namespace deepsim
