#pragma once

// Similarity metrics, the diffusion regularizer, and the registration loss
//
//   loss(I, J, u) = D(I o Phi, J) + lambda * R(Phi)
//
// Every similarity s in [0, 1] enters the loss as the dissimilarity 1 - s;
// MSE enters as-is. Gradients are with respect to the displacement field
// and flow through the spatial transformer and, for the feature metrics,
// through the frozen extractor's input (never its parameters).

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>

#include "deepsim/image.hpp"
#include "deepsim/models.hpp"

namespace deepsim {

inline constexpr double kNccEps = 1e-8;
inline constexpr double kCosineEps = 1e-8;
inline constexpr double kDiceEps = 1e-6;

// --- metric kinds ---------------------------------------------------------

struct MseMetric {};

struct NccMetric {
  int window = 9;
};

/// NCC plus a soft-Dice term on bilinearly transported one-hot labels.
struct NccSupMetric {
  int window = 9;
  double dice_weight = 1.0;
};

/// Multi-level cosine agreement of a segmentation-trained, frozen extractor.
struct DeepSimMetric {
  std::shared_ptr<const SegUNet> extractor;
  std::string checkpoint;
};

/// Same as DeepSim but with a randomly initialized (untrained) extractor.
struct RandSimMetric {
  std::uint64_t seed = 0;
  std::shared_ptr<const SegUNet> extractor;
};

using MetricKind = std::variant<MseMetric, NccMetric, NccSupMetric, DeepSimMetric, RandSimMetric>;

/// Parses `mse | ncc:<win> | nccsup:<win>:<w> | deepsim:<ckpt> | randsim:<seed>`.
/// Loads the deepsim checkpoint; throws std::invalid_argument on grammar
/// errors and IoError when the checkpoint cannot be read.
MetricKind parse_metric(std::string_view text);
/// Canonical string form, inverse of parse_metric.
std::string metric_spec(const MetricKind& m);
/// Short name used in reports: mse, ncc, nccsup, deepsim, randsim.
std::string metric_name(const MetricKind& m);
/// Throws std::invalid_argument when window or weight constraints fail.
void validate_metric(const MetricKind& m);
bool needs_labels(const MetricKind& m);
bool uses_extractor(const MetricKind& m);

/// Frozen randomly initialized extractor for RANDSIM.
std::shared_ptr<const SegUNet> random_extractor(std::uint64_t seed);

// --- metrics --------------------------------------------------------------

/// Mean over pixels and channels of (a - b)^2.
double mse(const Image& a, const Image& b);
/// d mse / d a.
Image mse_grad(const Image& a, const Image& b);

/// Squared correlation of one window: (sum da*db)^2 / (sum da^2 * sum db^2 + eps)
/// with da, db the zero-meaned vectors.
double window_ncc(std::span<const double> a, std::span<const double> b);

/// Mean over pixels of the squared local correlation in an edge-clamped
/// window x window neighbourhood. Single-channel images.
double patch_ncc(const Image& a, const Image& b, int window);
/// d patch_ncc / d a.
Image patch_ncc_grad(const Image& a, const Image& b, int window);

/// Cosine with norms floored at kCosineEps, so zero vectors score 0.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Per-location cosine of feature vectors, averaged over locations and then
/// over levels.
double deepsim(const FeaturePyramid& a, const FeaturePyramid& b);
/// d deepsim / d a, level by level.
FeaturePyramid deepsim_grad(const FeaturePyramid& a, const FeaturePyramid& b);

/// Mean over pixels of |grad u|^2 by forward differences; the difference
/// past the last row or column is zero.
double diffusion_regularizer(const DisplacementField& field);
DisplacementField diffusion_regularizer_grad(const DisplacementField& field);

/// Mean over channels of (2 sum pq + eps) / (sum p + sum q + eps).
double dice_soft(const Image& p, const Image& q);
/// d dice_soft / d p.
Image dice_soft_grad(const Image& p, const Image& q);

// --- registration loss ----------------------------------------------------

struct LossTerms {
  double data = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

struct LabelPair {
  LabelMap moving;
  LabelMap fixed;
};

struct LossResult {
  LossTerms terms;
  std::optional<DisplacementField> grad;  // d total / d u, when requested
};

/// The loss for one (moving, fixed) pair with everything that does not depend
/// on the field precomputed (fixed-image features, one-hot targets).
class RegistrationObjective {
 public:
  RegistrationObjective(MetricKind metric, Image moving, Image fixed, double lambda,
                        std::optional<LabelPair> labels = std::nullopt);

  [[nodiscard]] LossResult evaluate(const DisplacementField& field, bool want_grad) const;

  [[nodiscard]] const Image& moving() const { return moving_; }
  [[nodiscard]] const Image& fixed() const { return fixed_; }
  [[nodiscard]] const MetricKind& metric() const { return metric_; }
  [[nodiscard]] double lambda() const { return lambda_; }

 private:
  struct DataTerm {
    double value = 0.0;
    std::optional<DisplacementField> grad;
  };
  DataTerm data_term(const DisplacementField& field, bool want_grad) const;

  MetricKind metric_;
  Image moving_;
  Image fixed_;
  double lambda_;
  std::optional<LabelPair> labels_;
  std::optional<FeaturePyramid> fixed_features_;
  std::optional<Image> fixed_onehot_;
};

/// One-shot form of RegistrationObjective::evaluate. `labels` is required
/// exactly when the metric is NCC_SUP.
LossResult registration_loss(const MetricKind& metric, const Image& moving, const Image& fixed,
                             const DisplacementField& field, double lambda,
                             const LabelPair* labels = nullptr, bool want_grad = false);

}  // namespace deepsim
