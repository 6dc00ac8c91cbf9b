#pragma once

// The two fixed network topologies and the segmentation training loop.
//
// Both networks share one three-level U-net layout:
//
//   enc1: conv3(in->16) relu conv3(16->16) relu            -> level 0 features
//   avgpool2
//   enc2: conv3(16->32) relu conv3(32->32) relu            -> level 1 features
//   avgpool2
//   enc3: conv3(32->64) relu conv3(64->64) relu            -> level 2 features
//   dec2: upsample2, concat(., enc2), conv3(96->32) relu conv3(32->32) relu
//   dec1: upsample2, concat(., enc1), conv3(48->16) relu conv3(16->16) relu
//   head: conv1(16->out)
//
// The segmentation net doubles as the feature extractor: its three encoder
// activations form the FeaturePyramid.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "deepsim/image.hpp"
#include "deepsim/nn.hpp"
#include "deepsim/rng.hpp"

namespace deepsim {

/// Encoder activations F^l, finest first: (16, H, W), (32, H/2, W/2), (64, H/4, W/4).
struct FeaturePyramid {
  std::vector<nn::Tensor> levels;

  friend bool operator==(const FeaturePyramid&, const FeaturePyramid&) = default;
};

/// Throws ShapeError unless the grid is divisible by 4.
void require_unet_grid(const Grid& g, const char* what);

class UNet {
 public:
  static constexpr int kNumLayers = 11;
  static constexpr int kHead = 10;
  static constexpr std::array<int, 3> kWidths = {16, 32, 64};

  /// Parameters drawn He-normal from `init`; biases start at kInitBias.
  UNet(int in_channels, int out_channels, Rng init);
  /// All-zero parameters.
  static UNet zeros(int in_channels, int out_channels);

  static constexpr double kInitBias = 0.01;

  [[nodiscard]] int in_channels() const { return in_channels_; }
  [[nodiscard]] int out_channels() const { return out_channels_; }
  [[nodiscard]] const std::vector<nn::ConvLayer>& layers() const { return layers_; }
  std::vector<nn::ConvLayer>& layers() { return layers_; }
  [[nodiscard]] std::size_t parameter_count() const;

  /// Activations kept for the backward pass.
  struct Cache {
    std::array<nn::Tensor, kNumLayers> conv_in;
    std::array<nn::Tensor, kNumLayers> conv_out;  // pre-activation
    std::array<nn::Tensor, 3> features;           // post-relu encoder outputs
    bool full = false;                            // decoder populated
  };

  struct ParamGrads {
    std::vector<std::vector<double>> kernel;
    std::vector<std::vector<double>> bias;
  };

  struct Grads {
    ParamGrads params;
    nn::Tensor input;
  };

  /// Full forward pass; returns head output (logits or displacement).
  nn::Tensor forward(const nn::Tensor& input, Cache* cache = nullptr) const;
  /// Encoder only; fills cache->features.
  FeaturePyramid encode(const nn::Tensor& input, Cache* cache = nullptr) const;

  /// Backward through the full network from dLoss/dOutput.
  Grads backward(const Cache& cache, const nn::Tensor& d_output, bool want_input_grad) const;
  /// dLoss/dInput given dLoss/dFeatures of the encoder. Parameter gradients
  /// are never formed.
  nn::Tensor encoder_input_grad(const Cache& cache, const FeaturePyramid& d_features) const;

  friend bool operator==(const UNet&, const UNet&) = default;

 private:
  UNet(int in_channels, int out_channels);

  int in_channels_;
  int out_channels_;
  std::vector<nn::ConvLayer> layers_;
};

/// Accumulates and applies Adam updates to every parameter of a UNet.
class UNetOptimizer {
 public:
  UNetOptimizer(const UNet& net, nn::AdamConfig cfg);
  void step(UNet& net, const UNet::ParamGrads& grads);
  [[nodiscard]] long steps() const { return t_; }

 private:
  nn::AdamConfig cfg_;
  std::vector<nn::AdamState> kernel_state_;
  std::vector<nn::AdamState> bias_state_;
  long t_ = 0;
};

UNet::ParamGrads zero_param_grads(const UNet& net);
void accumulate(UNet::ParamGrads& into, const UNet::ParamGrads& g, double scale);

/// Segmentation U-net; once frozen its parameters can no longer be mutated
/// through this interface.
class SegUNet {
 public:
  SegUNet(int num_classes, Rng init);
  static SegUNet zeros(int num_classes);
  /// Wraps an existing network; `net.in_channels()` must be 1.
  static SegUNet from_net(UNet net, bool frozen);

  [[nodiscard]] int num_classes() const { return net_.out_channels(); }
  [[nodiscard]] bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  [[nodiscard]] const UNet& net() const { return net_; }
  /// Throws std::logic_error when frozen.
  UNet& mutable_net();

 private:
  explicit SegUNet(UNet net);
  UNet net_;
  bool frozen_ = false;
};

/// Registration U-net: (moving, fixed) in, (du_y, du_x) out. The head
/// starts at zero so a fresh net predicts the identity transform.
class RegUNet {
 public:
  explicit RegUNet(Rng init);
  /// Wraps an existing network; must have 2 input and 2 output channels.
  static RegUNet from_net(UNet net);

  [[nodiscard]] const UNet& net() const { return net_; }
  UNet& net() { return net_; }

 private:
  explicit RegUNet(UNet net) : net_(std::move(net)) {}
  UNet net_;
};

struct SegOutput {
  nn::Tensor logits;
  FeaturePyramid pyramid;
};

SegOutput seg_forward(const SegUNet& net, const Image& image);

/// Feature pyramid of a frozen extractor. Throws std::logic_error when
/// the net is not frozen.
FeaturePyramid extract_features(const SegUNet& frozen_net, const Image& image);

/// Displacement prediction for one pair.
DisplacementField reg_forward(const RegUNet& net, const Image& moving, const Image& fixed);

/// Stacks (moving, fixed) as the registration network's input tensor.
nn::Tensor reg_input(const Image& moving, const Image& fixed);
DisplacementField tensor_to_field(const nn::Tensor& t);
nn::Tensor field_to_tensor(const DisplacementField& f);

struct SegSample {
  Image image;
  LabelMap labels;
};

struct SegTrainConfig {
  int epochs = 30;
  int batch_size = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::function<void(int epoch, double loss)> on_epoch;  // optional progress hook
};

struct SegTrainResult {
  std::vector<double> epoch_loss;  // mean loss over each epoch's batches
};

/// Adam on mean softmax cross-entropy with per-epoch shuffling drawn from
/// the seed. Throws on an empty dataset or a frozen net.
SegTrainResult train_segmentation(SegUNet& net, const std::vector<SegSample>& dataset,
                                  const SegTrainConfig& cfg);

/// Fraction of pixels whose argmax class equals the label.
double seg_accuracy(const SegUNet& net, const std::vector<SegSample>& dataset);

/// Deterministic permutation of [0, n) for epoch `epoch`.
std::vector<std::size_t> shuffled_indices(std::size_t n, const Rng& rng, std::uint64_t epoch);

// Checkpoints: a directory with topology.json and one SEMT file per
// parameter tensor.
void save_seg_checkpoint(const std::filesystem::path& dir, const SegUNet& net);
SegUNet load_seg_checkpoint(const std::filesystem::path& dir);
void save_reg_checkpoint(const std::filesystem::path& dir, const RegUNet& net);
RegUNet load_reg_checkpoint(const std::filesystem::path& dir);

/// Concatenated bytes of every file in a checkpoint directory, in name order.
std::vector<std::uint8_t> checkpoint_bytes(const std::filesystem::path& dir);

}  // namespace deepsim
