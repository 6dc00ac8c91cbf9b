#pragma once

// SEMT tensor files and binary PGM images.
//
// SEMT layout: "SEMT" | u32 LE header length H | H bytes of JSON
// {"dtype":"f64","shape":[...]} | prod(shape) little-endian f64 values.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "deepsim/image.hpp"

namespace deepsim {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad magic, truncated payload, bad header).
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

struct TensorData {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

/// Encodes to an in-memory byte string; identical inputs give identical bytes.
std::vector<std::uint8_t> encode_tensor(std::span<const std::int64_t> shape,
                                        std::span<const double> data);
TensorData decode_tensor(std::span<const std::uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, std::span<const std::int64_t> shape,
                 std::span<const double> data);
TensorData load_tensor(const std::filesystem::path& path);

// Typed helpers. Images are stored as [H, W, C], fields as [H, W, 2],
// label maps as [H, W] with ids as exact doubles.
void save_image(const std::filesystem::path& path, const Image& image);
Image load_image(const std::filesystem::path& path);
void save_field(const std::filesystem::path& path, const DisplacementField& field);
DisplacementField load_field(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap load_labels(const std::filesystem::path& path, int num_classes);

/// Writes a P5 PGM, mapping [min, max] linearly onto [0, 255]. A constant
/// image maps to 128. Single-channel input only.
void save_pgm(const Image& image, const std::filesystem::path& path);
/// Reads a P5 PGM; pixel values are returned as byte / maxval in [0, 1].
Image load_pgm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace deepsim
