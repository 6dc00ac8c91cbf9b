#include "deepsim/similarity.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include "deepsim/warp.hpp"

namespace deepsim {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

template <typename T>
T parse_number(std::string_view s, std::string_view what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::invalid_argument("metric: bad " + std::string(what) + " '" + std::string(s) + "'");
  }
  return value;
}

void require_single_channel(const Image& a, const char* what) {
  if (a.channels() != 1) throw ShapeError(std::string(what) + ": single-channel images required");
}

// Sum of f over the edge-clamped window around every pixel. Separable:
// horizontal pass then vertical pass, each with clamped indices.
std::vector<double> box_sum(std::span<const double> f, int h, int w, int radius) {
  std::vector<double> tmp(f.size(), 0.0), out(f.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    const double* row = f.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) s += row[std::clamp(x + d, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        s += tmp[static_cast<std::size_t>(std::clamp(y + d, 0, h - 1)) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  return out;
}

// Transpose of box_sum: scatters each value onto every pixel whose window
// contains it (with multiplicity from clamping).
std::vector<double> box_sum_transpose(std::span<const double> g, int h, int w, int radius) {
  std::vector<double> tmp(g.size(), 0.0), out(g.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = g[static_cast<std::size_t>(y) * w + x];
      for (int d = -radius; d <= radius; ++d) {
        tmp[static_cast<std::size_t>(std::clamp(y + d, 0, h - 1)) * w + x] += v;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    double* row = out.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      const double v = tmp[static_cast<std::size_t>(y) * w + x];
      for (int d = -radius; d <= radius; ++d) row[std::clamp(x + d, 0, w - 1)] += v;
    }
  }
  return out;
}

struct LocalStats {
  std::vector<double> mean_a, mean_b, cross, var_a, var_b;
};

LocalStats local_stats(const Image& a, const Image& b, int window) {
  const int h = a.height(), w = a.width(), r = window / 2;
  const double n = static_cast<double>(window) * window;
  const std::size_t np = a.grid().pixels();
  std::vector<double> aa(np), bb(np), ab(np);
  for (std::size_t i = 0; i < np; ++i) {
    aa[i] = a.data()[i] * a.data()[i];
    bb[i] = b.data()[i] * b.data()[i];
    ab[i] = a.data()[i] * b.data()[i];
  }
  const auto sa = box_sum(a.data(), h, w, r);
  const auto sb = box_sum(b.data(), h, w, r);
  const auto saa = box_sum(aa, h, w, r);
  const auto sbb = box_sum(bb, h, w, r);
  const auto sab = box_sum(ab, h, w, r);
  LocalStats s;
  s.mean_a.resize(np);
  s.mean_b.resize(np);
  s.cross.resize(np);
  s.var_a.resize(np);
  s.var_b.resize(np);
  for (std::size_t i = 0; i < np; ++i) {
    s.mean_a[i] = sa[i] / n;
    s.mean_b[i] = sb[i] / n;
    s.cross[i] = sab[i] - sa[i] * sb[i] / n;
    // Clamp the rounding residue of constant windows to zero.
    s.var_a[i] = std::max(0.0, saa[i] - sa[i] * sa[i] / n);
    s.var_b[i] = std::max(0.0, sbb[i] - sb[i] * sb[i] / n);
  }
  return s;
}

void check_window(int window) {
  if (window < 3 || window % 2 == 0) {
    throw std::invalid_argument("NCC window must be odd and >= 3, got " + std::to_string(window));
  }
}

double level_norm(const nn::Tensor& t, std::size_t p) {
  const std::size_t plane = t.plane();
  double s = 0.0;
  for (int c = 0; c < t.channels; ++c) s += t.data[c * plane + p] * t.data[c * plane + p];
  return std::sqrt(s);
}

void check_pyramids(const FeaturePyramid& a, const FeaturePyramid& b) {
  if (a.levels.size() != b.levels.size() || a.levels.empty()) {
    throw ShapeError("deepsim: pyramids have different level counts");
  }
  for (std::size_t l = 0; l < a.levels.size(); ++l) {
    if (!a.levels[l].same_shape(b.levels[l])) {
      throw ShapeError("deepsim: level " + std::to_string(l) + " shapes differ");
    }
  }
}

}  // namespace

// --- metric kinds ---------------------------------------------------------

std::shared_ptr<const SegUNet> random_extractor(std::uint64_t seed) {
  SegUNet net(2, Rng(seed));
  net.freeze();
  return std::make_shared<const SegUNet>(std::move(net));
}

MetricKind parse_metric(std::string_view text) {
  const auto parts = split(text, ':');
  const auto& kind = parts[0];
  MetricKind m;
  if (kind == "mse" && parts.size() == 1) {
    m = MseMetric{};
  } else if (kind == "ncc" && parts.size() <= 2) {
    NccMetric n;
    if (parts.size() == 2) n.window = parse_number<int>(parts[1], "window");
    m = n;
  } else if (kind == "nccsup" && parts.size() <= 3) {
    NccSupMetric n;
    if (parts.size() >= 2) n.window = parse_number<int>(parts[1], "window");
    if (parts.size() == 3) n.dice_weight = parse_number<double>(parts[2], "dice weight");
    m = n;
  } else if (kind == "deepsim" && parts.size() >= 2) {
    // Checkpoint paths may themselves contain ':'.
    const std::string path(text.substr(kind.size() + 1));
    if (path.empty()) throw std::invalid_argument("metric: deepsim needs a checkpoint path");
    auto net = load_seg_checkpoint(path);
    net.freeze();
    m = DeepSimMetric{std::make_shared<const SegUNet>(std::move(net)), path};
  } else if (kind == "randsim" && parts.size() == 2) {
    const auto seed = parse_number<std::uint64_t>(parts[1], "seed");
    m = RandSimMetric{seed, random_extractor(seed)};
  } else {
    throw std::invalid_argument("unknown metric '" + std::string(text) +
                                "' (expected mse | ncc:<win> | nccsup:<win>:<w> | "
                                "deepsim:<ckpt> | randsim:<seed>)");
  }
  validate_metric(m);
  return m;
}

void validate_metric(const MetricKind& m) {
  std::visit(Overloaded{
                 [](const MseMetric&) {},
                 [](const NccMetric& n) { check_window(n.window); },
                 [](const NccSupMetric& n) {
                   check_window(n.window);
                   if (!(n.dice_weight >= 0.0)) throw std::invalid_argument("nccsup: dice weight must be >= 0");
                 },
                 [](const DeepSimMetric& d) {
                   if (!d.extractor) throw std::invalid_argument("deepsim: no extractor");
                   if (!d.extractor->frozen()) throw std::invalid_argument("deepsim: extractor must be frozen");
                 },
                 [](const RandSimMetric& r) {
                   if (!r.extractor) throw std::invalid_argument("randsim: no extractor");
                 },
             },
             m);
}

std::string metric_spec(const MetricKind& m) {
  return std::visit(Overloaded{
                        [](const MseMetric&) { return std::string("mse"); },
                        [](const NccMetric& n) { return "ncc:" + std::to_string(n.window); },
                        [](const NccSupMetric& n) {
                          char buf[64];
                          std::snprintf(buf, sizeof(buf), "nccsup:%d:%g", n.window, n.dice_weight);
                          return std::string(buf);
                        },
                        [](const DeepSimMetric& d) { return "deepsim:" + d.checkpoint; },
                        [](const RandSimMetric& r) { return "randsim:" + std::to_string(r.seed); },
                    },
                    m);
}

std::string metric_name(const MetricKind& m) {
  static constexpr const char* kNames[] = {"mse", "ncc", "nccsup", "deepsim", "randsim"};
  return kNames[m.index()];
}

bool needs_labels(const MetricKind& m) { return std::holds_alternative<NccSupMetric>(m); }

bool uses_extractor(const MetricKind& m) {
  return std::holds_alternative<DeepSimMetric>(m) || std::holds_alternative<RandSimMetric>(m);
}

// --- metrics --------------------------------------------------------------

double mse(const Image& a, const Image& b) {
  require_same_grid(a.grid(), b.grid(), "mse");
  if (a.channels() != b.channels()) throw ShapeError("mse: channel mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

Image mse_grad(const Image& a, const Image& b) {
  require_same_grid(a.grid(), b.grid(), "mse_grad");
  if (a.channels() != b.channels()) throw ShapeError("mse_grad: channel mismatch");
  std::vector<double> g(a.size());
  const double scale = 2.0 / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = scale * (a.data()[i] - b.data()[i]);
  return Image(a.height(), a.width(), a.channels(), std::move(g));
}

double window_ncc(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("window_ncc: window size mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cross = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cross += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cross * cross / (va * vb + kNccEps);
}

double patch_ncc(const Image& a, const Image& b, int window) {
  require_same_grid(a.grid(), b.grid(), "patch_ncc");
  require_single_channel(a, "patch_ncc");
  require_single_channel(b, "patch_ncc");
  check_window(window);
  const LocalStats s = local_stats(a, b, window);
  double total = 0.0;
  for (std::size_t i = 0; i < s.cross.size(); ++i) {
    total += s.cross[i] * s.cross[i] / (s.var_a[i] * s.var_b[i] + kNccEps);
  }
  return total / static_cast<double>(s.cross.size());
}

Image patch_ncc_grad(const Image& a, const Image& b, int window) {
  require_same_grid(a.grid(), b.grid(), "patch_ncc_grad");
  require_single_channel(a, "patch_ncc_grad");
  require_single_channel(b, "patch_ncc_grad");
  check_window(window);
  const int h = a.height(), w = a.width(), r = window / 2;
  const LocalStats s = local_stats(a, b, window);
  const std::size_t np = s.cross.size();
  // d ncc_p / d a_k = alpha_p (b_k - mean_b_p) + beta_p (a_k - mean_a_p)
  std::vector<double> alpha(np), beta(np), alpha_mb(np), beta_ma(np);
  for (std::size_t i = 0; i < np; ++i) {
    const double denom = s.var_a[i] * s.var_b[i] + kNccEps;
    alpha[i] = 2.0 * s.cross[i] / denom;
    beta[i] = -2.0 * s.cross[i] * s.cross[i] * s.var_b[i] / (denom * denom);
    alpha_mb[i] = alpha[i] * s.mean_b[i];
    beta_ma[i] = beta[i] * s.mean_a[i];
  }
  const auto ta = box_sum_transpose(alpha, h, w, r);
  const auto tb = box_sum_transpose(beta, h, w, r);
  const auto tamb = box_sum_transpose(alpha_mb, h, w, r);
  const auto tbma = box_sum_transpose(beta_ma, h, w, r);
  std::vector<double> g(np);
  const double inv_n = 1.0 / static_cast<double>(np);
  for (std::size_t q = 0; q < np; ++q) {
    g[q] = inv_n * (b.data()[q] * ta[q] - tamb[q] + a.data()[q] * tb[q] - tbma[q]);
  }
  return Image(h, w, 1, std::move(g));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::max(std::sqrt(na), kCosineEps) * std::max(std::sqrt(nb), kCosineEps));
}

double deepsim(const FeaturePyramid& a, const FeaturePyramid& b) {
  check_pyramids(a, b);
  double total = 0.0;
  for (std::size_t l = 0; l < a.levels.size(); ++l) {
    const nn::Tensor& ta = a.levels[l];
    const nn::Tensor& tb = b.levels[l];
    const std::size_t plane = ta.plane();
    double level = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      double dot = 0.0;
      for (int c = 0; c < ta.channels; ++c) dot += ta.data[c * plane + p] * tb.data[c * plane + p];
      level += dot / (std::max(level_norm(ta, p), kCosineEps) * std::max(level_norm(tb, p), kCosineEps));
    }
    total += level / static_cast<double>(plane);
  }
  return total / static_cast<double>(a.levels.size());
}

FeaturePyramid deepsim_grad(const FeaturePyramid& a, const FeaturePyramid& b) {
  check_pyramids(a, b);
  FeaturePyramid g;
  const double inv_levels = 1.0 / static_cast<double>(a.levels.size());
  for (std::size_t l = 0; l < a.levels.size(); ++l) {
    const nn::Tensor& ta = a.levels[l];
    const nn::Tensor& tb = b.levels[l];
    nn::Tensor gl(ta.channels, ta.height, ta.width);
    const std::size_t plane = ta.plane();
    const double scale = inv_levels / static_cast<double>(plane);
    for (std::size_t p = 0; p < plane; ++p) {
      const double norm_a = level_norm(ta, p);
      const double den_a = std::max(norm_a, kCosineEps);
      const double den_b = std::max(level_norm(tb, p), kCosineEps);
      double dot = 0.0;
      for (int c = 0; c < ta.channels; ++c) dot += ta.data[c * plane + p] * tb.data[c * plane + p];
      const double cos = dot / (den_a * den_b);
      // Below the floor the norm is a constant, so only the dot term varies.
      const double radial = norm_a > kCosineEps ? cos / (norm_a * norm_a) : 0.0;
      for (int c = 0; c < ta.channels; ++c) {
        const std::size_t i = c * plane + p;
        gl.data[i] = scale * (tb.data[i] / (den_a * den_b) - radial * ta.data[i]);
      }
    }
    g.levels.push_back(std::move(gl));
  }
  return g;
}

double diffusion_regularizer(const DisplacementField& field) {
  const int h = field.height(), w = field.width();
  double s = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (y + 1 < h) {
        const double a = field.dy(y + 1, x) - field.dy(y, x);
        const double b = field.dx(y + 1, x) - field.dx(y, x);
        s += a * a + b * b;
      }
      if (x + 1 < w) {
        const double a = field.dy(y, x + 1) - field.dy(y, x);
        const double b = field.dx(y, x + 1) - field.dx(y, x);
        s += a * a + b * b;
      }
    }
  }
  return s / static_cast<double>(field.grid().pixels());
}

DisplacementField diffusion_regularizer_grad(const DisplacementField& field) {
  const int h = field.height(), w = field.width();
  const auto u = field.data();
  std::vector<double> g(u.size(), 0.0);
  const double scale = 2.0 / static_cast<double>(field.grid().pixels());
  auto idx = [w](int y, int x) { return 2 * (static_cast<std::size_t>(y) * w + x); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = idx(y, x);
      for (int comp = 0; comp < 2; ++comp) {
        if (y + 1 < h) {
          const std::size_t q = idx(y + 1, x);
          const double d = scale * (u[q + comp] - u[p + comp]);
          g[q + comp] += d;
          g[p + comp] -= d;
        }
        if (x + 1 < w) {
          const std::size_t q = idx(y, x + 1);
          const double d = scale * (u[q + comp] - u[p + comp]);
          g[q + comp] += d;
          g[p + comp] -= d;
        }
      }
    }
  }
  return DisplacementField(h, w, std::move(g));
}

double dice_soft(const Image& p, const Image& q) {
  require_same_grid(p.grid(), q.grid(), "dice_soft");
  if (p.channels() != q.channels()) throw ShapeError("dice_soft: class count mismatch");
  const int c = p.channels();
  std::vector<double> inter(c, 0.0), sum(c, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int ch = static_cast<int>(i % c);
    inter[ch] += p.data()[i] * q.data()[i];
    sum[ch] += p.data()[i] + q.data()[i];
  }
  double total = 0.0;
  for (int ch = 0; ch < c; ++ch) total += (2.0 * inter[ch] + kDiceEps) / (sum[ch] + kDiceEps);
  return total / c;
}

Image dice_soft_grad(const Image& p, const Image& q) {
  require_same_grid(p.grid(), q.grid(), "dice_soft_grad");
  if (p.channels() != q.channels()) throw ShapeError("dice_soft_grad: class count mismatch");
  const int c = p.channels();
  std::vector<double> inter(c, 0.0), sum(c, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int ch = static_cast<int>(i % c);
    inter[ch] += p.data()[i] * q.data()[i];
    sum[ch] += p.data()[i] + q.data()[i];
  }
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int ch = static_cast<int>(i % c);
    const double num = 2.0 * inter[ch] + kDiceEps;
    const double den = sum[ch] + kDiceEps;
    g[i] = (2.0 * q.data()[i] * den - num) / (den * den) / c;
  }
  return Image(p.height(), p.width(), c, std::move(g));
}

// --- registration loss ----------------------------------------------------

RegistrationObjective::RegistrationObjective(MetricKind metric, Image moving, Image fixed,
                                             double lambda, std::optional<LabelPair> labels)
    : metric_(std::move(metric)),
      moving_(std::move(moving)),
      fixed_(std::move(fixed)),
      lambda_(lambda),
      labels_(std::move(labels)) {
  validate_metric(metric_);
  require_same_grid(moving_.grid(), fixed_.grid(), "registration_loss");
  if (moving_.channels() != fixed_.channels()) throw ShapeError("registration_loss: channel mismatch");
  if (!(lambda_ >= 0.0)) throw std::invalid_argument("registration_loss: lambda must be >= 0");
  if (needs_labels(metric_)) {
    if (!labels_) throw std::invalid_argument("registration_loss: nccsup requires label maps");
    require_same_grid(labels_->moving.grid(), moving_.grid(), "registration_loss moving labels");
    require_same_grid(labels_->fixed.grid(), fixed_.grid(), "registration_loss fixed labels");
    if (labels_->moving.num_classes() != labels_->fixed.num_classes()) {
      throw ShapeError("registration_loss: label class counts differ");
    }
    fixed_onehot_ = labels_->fixed.one_hot();
  }
  if (const auto* d = std::get_if<DeepSimMetric>(&metric_)) {
    fixed_features_ = extract_features(*d->extractor, fixed_);
  } else if (const auto* r = std::get_if<RandSimMetric>(&metric_)) {
    fixed_features_ = extract_features(*r->extractor, fixed_);
  }
}

RegistrationObjective::DataTerm RegistrationObjective::data_term(const DisplacementField& field,
                                                                 bool want_grad) const {
  require_same_grid(field.grid(), moving_.grid(), "registration_loss field");
  const Image warped = warp_image(moving_, field);
  DataTerm out;

  auto image_metric = [&](double value, auto&& grad_fn) {
    out.value = value;
    if (want_grad) out.grad = warp_image_grad(moving_, field, grad_fn());
  };

  auto feature_metric = [&](const SegUNet& extractor) {
    UNet::Cache cache;
    const FeaturePyramid pw = extractor.net().encode(nn::to_tensor(warped), &cache);
    out.value = 1.0 - deepsim(pw, *fixed_features_);
    if (want_grad) {
      FeaturePyramid g = deepsim_grad(pw, *fixed_features_);
      for (auto& level : g.levels)
        for (double& v : level.data) v = -v;
      const nn::Tensor d_img = extractor.net().encoder_input_grad(cache, g);
      out.grad = warp_image_grad(moving_, field, nn::to_image(d_img));
    }
  };

  auto negated = [](Image img) {
    std::vector<double> v = std::move(img).release();
    for (double& x : v) x = -x;
    return v;
  };

  std::visit(
      Overloaded{
          [&](const MseMetric&) {
            image_metric(mse(warped, fixed_), [&] { return mse_grad(warped, fixed_); });
          },
          [&](const NccMetric& n) {
            image_metric(1.0 - patch_ncc(warped, fixed_, n.window), [&] {
              return Image(warped.height(), warped.width(), 1,
                           negated(patch_ncc_grad(warped, fixed_, n.window)));
            });
          },
          [&](const NccSupMetric& n) {
            const Image warped_onehot = warp_onehot(labels_->moving, field);
            out.value = (1.0 - patch_ncc(warped, fixed_, n.window)) +
                        n.dice_weight * (1.0 - dice_soft(warped_onehot, *fixed_onehot_));
            if (want_grad) {
              const Image g_img(warped.height(), warped.width(), 1,
                                negated(patch_ncc_grad(warped, fixed_, n.window)));
              DisplacementField g_ncc = warp_image_grad(moving_, field, g_img);
              std::vector<double> g_dice = std::move(dice_soft_grad(warped_onehot, *fixed_onehot_)).release();
              for (double& v : g_dice) v *= -n.dice_weight;
              const Image onehot = labels_->moving.one_hot();
              const DisplacementField g_sup = warp_image_grad(
                  onehot, field, Image(onehot.height(), onehot.width(), onehot.channels(), std::move(g_dice)));
              std::vector<double> sum = std::move(g_ncc).release();
              for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g_sup.data()[i];
              out.grad = DisplacementField(field.height(), field.width(), std::move(sum));
            }
          },
          [&](const DeepSimMetric& d) { feature_metric(*d.extractor); },
          [&](const RandSimMetric& r) { feature_metric(*r.extractor); },
      },
      metric_);
  return out;
}

LossResult RegistrationObjective::evaluate(const DisplacementField& field, bool want_grad) const {
  LossResult r;
  r.terms.reg = diffusion_regularizer(field);
  // Data-term gradients are bounded by the image, but the regularizer's grows
  // with u; a runaway field yields a non-finite loss and no gradient, so the
  // caller can report divergence.
  if (!std::isfinite(lambda_ * r.terms.reg)) want_grad = false;
  DataTerm d = data_term(field, want_grad);
  r.terms.data = d.value;
  r.terms.lambda = lambda_;
  r.terms.total = r.terms.data + lambda_ * r.terms.reg;
  if (want_grad) {
    std::vector<double> g = std::move(*d.grad).release();
    if (lambda_ != 0.0) {
      const DisplacementField gr = diffusion_regularizer_grad(field);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += lambda_ * gr.data()[i];
    }
    r.grad = DisplacementField(field.height(), field.width(), std::move(g));
  }
  return r;
}

LossResult registration_loss(const MetricKind& metric, const Image& moving, const Image& fixed,
                             const DisplacementField& field, double lambda, const LabelPair* labels,
                             bool want_grad) {
  std::optional<LabelPair> l;
  if (labels) l = *labels;
  return RegistrationObjective(metric, moving, fixed, lambda, std::move(l)).evaluate(field, want_grad);
}

}  // namespace deepsim
