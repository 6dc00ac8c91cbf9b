#include "deepsim/image.hpp"

#include <algorithm>
#include <cmath>

namespace deepsim {

std::string to_string(const Grid& g) {
  return std::to_string(g.height) + "x" + std::to_string(g.width);
}

void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": grid mismatch (" + to_string(a) + " vs " +
                     to_string(b) + ")");
  }
}

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite value");
  }
}

namespace {

void require_positive_dims(int h, int w, int c, const char* what) {
  if (h < 1 || w < 1 || c < 1) {
    throw std::invalid_argument(std::string(what) + ": dimensions must be positive");
  }
}

}  // namespace

Image::Image(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  require_positive_dims(height, width, channels, "Image");
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ShapeError("Image: data length does not match height*width*channels");
  }
  require_finite(data_, "Image");
}

Image Image::filled(int height, int width, int channels, double value) {
  require_positive_dims(height, width, channels, "Image");
  return Image(height, width, channels,
               std::vector<double>(static_cast<std::size_t>(height) * width * channels, value));
}

double Image::min_value() const { return *std::min_element(data_.begin(), data_.end()); }
double Image::max_value() const { return *std::max_element(data_.begin(), data_.end()); }

LabelMap::LabelMap(int height, int width, int num_classes, std::vector<int> data)
    : height_(height), width_(width), num_classes_(num_classes), data_(std::move(data)) {
  require_positive_dims(height, width, num_classes, "LabelMap");
  if (data_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("LabelMap: data length does not match height*width");
  }
  for (int id : data_) {
    if (id < 0 || id >= num_classes) {
      throw std::invalid_argument("LabelMap: class id " + std::to_string(id) +
                                  " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Image LabelMap::one_hot() const {
  std::vector<double> out(data_.size() * num_classes_, 0.0);
  for (std::size_t i = 0; i < data_.size(); ++i) out[i * num_classes_ + data_[i]] = 1.0;
  return Image(height_, width_, num_classes_, std::move(out));
}

DisplacementField::DisplacementField(int height, int width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
  require_positive_dims(height, width, 1, "DisplacementField");
  if (data_.size() != 2 * static_cast<std::size_t>(height) * width) {
    throw ShapeError("DisplacementField: data length does not match 2*height*width");
  }
  require_finite(data_, "DisplacementField");
}

DisplacementField DisplacementField::zeros(int height, int width) {
  return constant(height, width, 0.0, 0.0);
}

DisplacementField DisplacementField::constant(int height, int width, double dy, double dx) {
  require_positive_dims(height, width, 1, "DisplacementField");
  std::vector<double> d(2 * static_cast<std::size_t>(height) * width);
  for (std::size_t i = 0; i < d.size(); i += 2) {
    d[i] = dy;
    d[i + 1] = dx;
  }
  return DisplacementField(height, width, std::move(d));
}

double DisplacementField::mean_norm() const {
  double s = 0.0;
  for (std::size_t i = 0; i < data_.size(); i += 2) s += std::hypot(data_[i], data_[i + 1]);
  return s / static_cast<double>(data_.size() / 2);
}

double DisplacementField::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace deepsim
