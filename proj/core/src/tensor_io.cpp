#include "deepsim/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace deepsim {

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'E', 'M', 'T'};

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  const std::size_t at = out.size();
  out.resize(at + sizeof(T));
  std::memcpy(out.data() + at, raw, sizeof(T));
}

template <typename T>
T read_le(const std::uint8_t* p) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

std::size_t shape_product(std::span<const std::int64_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw std::invalid_argument("tensor shape has a negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(std::span<const std::int64_t> shape,
                                        std::span<const double> data) {
  if (shape_product(shape) != data.size()) {
    throw ShapeError("save_tensor: shape product " + std::to_string(shape_product(shape)) +
                     " does not match data length " + std::to_string(data.size()));
  }
  nlohmann::json header;
  header["dtype"] = "f64";
  header["shape"] = std::vector<std::int64_t>(shape.begin(), shape.end());
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(8 + text.size() + 8 * data.size());
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.resize(8 + text.size());
  std::memcpy(out.data() + 8, text.data(), text.size());
  for (double v : data) append_le<double>(out, v);
  return out;
}

TensorData decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw FormatError("load_tensor: bad magic (expected SEMT)");
  }
  const auto header_len = read_le<std::uint32_t>(bytes.data() + 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(header_len)) {
    throw FormatError("load_tensor: truncated header");
  }
  TensorData out;
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    if (header.at("dtype").get<std::string>() != "f64") {
      throw FormatError("load_tensor: unsupported dtype " + header.at("dtype").dump());
    }
    out.shape = header.at("shape").get<std::vector<std::int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_tensor: header parse failure: ") + e.what());
  }
  std::size_t count = 0;
  try {
    count = shape_product(out.shape);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("load_tensor: ") + e.what());
  }
  const std::size_t offset = 8 + header_len;
  if (bytes.size() - offset != 8 * count) {
    throw FormatError("load_tensor: payload has " + std::to_string(bytes.size() - offset) +
                      " bytes, header requires " + std::to_string(8 * count));
  }
  out.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) out.data[i] = read_le<double>(bytes.data() + offset + 8 * i);
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void save_tensor(const std::filesystem::path& path, std::span<const std::int64_t> shape,
                 std::span<const double> data) {
  write_file_bytes(path, encode_tensor(shape, data));
}

TensorData load_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file_bytes(path));
}

void save_image(const std::filesystem::path& path, const Image& image) {
  const std::int64_t shape[] = {image.height(), image.width(), image.channels()};
  save_tensor(path, shape, image.data());
}

Image load_image(const std::filesystem::path& path) {
  auto t = load_tensor(path);
  if (t.shape.size() == 2) t.shape.push_back(1);
  if (t.shape.size() != 3) throw FormatError(path.string() + ": expected a [H, W, C] tensor");
  return Image(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]),
               static_cast<int>(t.shape[2]), std::move(t.data));
}

void save_field(const std::filesystem::path& path, const DisplacementField& field) {
  const std::int64_t shape[] = {field.height(), field.width(), 2};
  save_tensor(path, shape, field.data());
}

DisplacementField load_field(const std::filesystem::path& path) {
  auto t = load_tensor(path);
  if (t.shape.size() != 3 || t.shape[2] != 2) {
    throw FormatError(path.string() + ": expected a [H, W, 2] displacement tensor");
  }
  return DisplacementField(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]),
                           std::move(t.data));
}

void save_labels(const std::filesystem::path& path, const LabelMap& labels) {
  const std::int64_t shape[] = {labels.height(), labels.width()};
  std::vector<double> values(labels.data().begin(), labels.data().end());
  save_tensor(path, shape, values);
}

LabelMap load_labels(const std::filesystem::path& path, int num_classes) {
  auto t = load_tensor(path);
  if (t.shape.size() != 2) throw FormatError(path.string() + ": expected a [H, W] label tensor");
  std::vector<int> ids(t.data.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double v = t.data[i];
    if (v != std::floor(v)) throw FormatError(path.string() + ": non-integer label id");
    ids[i] = static_cast<int>(v);
  }
  return LabelMap(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), num_classes,
                  std::move(ids));
}

void save_pgm(const Image& image, const std::filesystem::path& path) {
  if (image.channels() != 1) throw ShapeError("save_pgm: single-channel image required");
  const double lo = image.min_value();
  const double hi = image.max_value();
  const std::string header =
      "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (double v : image.data()) {
    const double level = hi > lo ? std::round((v - lo) / (hi - lo) * 255.0) : 128.0;
    bytes.push_back(static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0)));
  }
  write_file_bytes(path, bytes);
}

Image load_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    if (tok.empty()) throw FormatError(path.string() + ": truncated PGM header");
    return tok;
  };
  auto next_int = [&]() {
    const std::string tok = next_token();
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw FormatError(path.string() + ": bad PGM header field " + tok);
      return v;
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": bad PGM header field " + tok);
    }
  };
  if (next_token() != "P5") throw FormatError(path.string() + ": not a binary (P5) PGM");
  const int width = next_int();
  const int height = next_int();
  const int maxval = next_int();
  if (width < 1 || height < 1 || maxval < 1 || maxval > 255) {
    throw FormatError(path.string() + ": unsupported PGM dimensions or maxval");
  }
  ++pos;  // single whitespace after maxval
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (bytes.size() < pos + n) throw FormatError(path.string() + ": truncated PGM payload");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = bytes[pos + i] / static_cast<double>(maxval);
  return Image(height, width, 1, std::move(values));
}

}  // namespace deepsim
