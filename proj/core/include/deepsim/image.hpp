#pragma once

// Dense 2D arrays shared by every module. All three types validate on
// construction and expose read-only access afterwards.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepsim {

/// Raised when two arrays that must share a pixel grid do not.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Height x width pixel grid.
struct Grid {
  int height = 0;
  int width = 0;

  [[nodiscard]] std::size_t pixels() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  friend bool operator==(const Grid&, const Grid&) = default;
};

std::string to_string(const Grid& g);

/// Throws ShapeError naming `what` when the grids differ.
void require_same_grid(const Grid& a, const Grid& b, const char* what);

/// Row-major scalar image with the channel index innermost.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, std::vector<double> data);
  /// Constant-valued image.
  static Image filled(int height, int width, int channels, double value);

  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int channels() const { return channels_; }
  [[nodiscard]] Grid grid() const { return {height_, width_}; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] double at(int y, int x, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  [[nodiscard]] std::span<const double> data() const { return data_; }
  /// Moves the buffer out, leaving the image empty.
  std::vector<double> release() && { return std::move(data_); }

  [[nodiscard]] double min_value() const;
  [[nodiscard]] double max_value() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Per-pixel integer class ids in [0, num_classes).
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int height, int width, int num_classes, std::vector<int> data);

  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int num_classes() const { return num_classes_; }
  [[nodiscard]] Grid grid() const { return {height_, width_}; }

  [[nodiscard]] int at(int y, int x) const {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  [[nodiscard]] std::span<const int> data() const { return data_; }

  /// One channel per class, 1.0 where the pixel has that class.
  [[nodiscard]] Image one_hot() const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int num_classes_ = 0;
  std::vector<int> data_;
};

/// Dense displacement u with Phi(p) = p + u(p). Stored row-major as
/// interleaved (du_y, du_x) pairs in pixel units.
class DisplacementField {
 public:
  DisplacementField() = default;
  DisplacementField(int height, int width, std::vector<double> data);
  static DisplacementField zeros(int height, int width);
  static DisplacementField zeros(const Grid& g) { return zeros(g.height, g.width); }
  /// The same displacement at every pixel.
  static DisplacementField constant(int height, int width, double dy, double dx);

  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] Grid grid() const { return {height_, width_}; }

  [[nodiscard]] double dy(int y, int x) const {
    return data_[2 * (static_cast<std::size_t>(y) * width_ + x)];
  }
  [[nodiscard]] double dx(int y, int x) const {
    return data_[2 * (static_cast<std::size_t>(y) * width_ + x) + 1];
  }
  [[nodiscard]] std::span<const double> data() const { return data_; }
  std::vector<double> release() && { return std::move(data_); }

  /// Mean Euclidean length of u over all pixels.
  [[nodiscard]] double mean_norm() const;
  /// Largest absolute component value.
  [[nodiscard]] double max_abs() const;

  friend bool operator==(const DisplacementField&, const DisplacementField&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Throws std::invalid_argument if any value is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);

}  // namespace deepsim
