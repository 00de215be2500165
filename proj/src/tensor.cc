#include "arena/tensor.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace arena {
namespace {

constexpr std::string_view kMagic = "AVT1";
constexpr std::uint8_t kDtypeFloat32 = 0x01;
constexpr std::uint8_t kNdim = 0x03;
constexpr std::size_t kHeaderSize = 4 + 1 + 1 + 3 * 4;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(in[pos + i])) << (8 * i);
  }
  return v;
}

bool in_unit_range(float v) { return v >= 0.0f && v <= 1.0f; }

}  // namespace

const char* to_string(TensorErrorCode code) {
  switch (code) {
    case TensorErrorCode::truncated: return "truncated";
    case TensorErrorCode::bad_magic: return "bad_magic";
    case TensorErrorCode::bad_dtype: return "bad_dtype";
    case TensorErrorCode::bad_ndim: return "bad_ndim";
    case TensorErrorCode::bad_dimensions: return "bad_dimensions";
    case TensorErrorCode::payload_length: return "payload_length";
    case TensorErrorCode::pixel_range: return "pixel_range";
    case TensorErrorCode::shape_mismatch: return "shape_mismatch";
  }
  return "unknown";
}

Shape parse_shape(std::string_view text) {
  Shape s;
  std::uint32_t* dims[3] = {&s.height, &s.width, &s.channels};
  std::size_t start = 0;
  for (int i = 0; i < 3; ++i) {
    std::size_t end = i < 2 ? text.find('x', start) : text.size();
    if (end == std::string_view::npos) {
      throw std::invalid_argument("shape must look like HxWxC: " + std::string(text));
    }
    auto part = text.substr(start, end - start);
    if (part.empty() || part.size() > 9 ||
        !std::all_of(part.begin(), part.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw std::invalid_argument("shape must look like HxWxC: " + std::string(text));
    }
    *dims[i] = static_cast<std::uint32_t>(std::stoul(std::string(part)));
    start = end + 1;
  }
  return s;
}

std::string format_shape(const Shape& shape) {
  return std::to_string(shape.height) + "x" + std::to_string(shape.width) + "x" +
         std::to_string(shape.channels);
}

void validate_shape(const Shape& shape) {
  if (shape.height == 0 || shape.width == 0 || shape.channels == 0) {
    throw TensorError(TensorErrorCode::bad_dimensions,
                      "zero dimension in shape " + format_shape(shape));
  }
  // u32 * u32 * u32 fits in 96 bits; check stepwise against the cap.
  std::uint64_t hw = static_cast<std::uint64_t>(shape.height) * shape.width;
  if (hw > kMaxElements || hw * shape.channels > kMaxElements) {
    throw TensorError(TensorErrorCode::bad_dimensions,
                      "shape " + format_shape(shape) + " exceeds element limit");
  }
}

Image::Image(Shape shape, std::vector<float> pixels) : shape_(shape), pixels_(std::move(pixels)) {
  validate_shape(shape_);
  if (pixels_.size() != shape_.size()) {
    throw TensorError(TensorErrorCode::payload_length,
                      "pixel count " + std::to_string(pixels_.size()) + " does not match shape " +
                          format_shape(shape_));
  }
  for (std::size_t i = 0; i < pixels_.size(); ++i) {
    if (!in_unit_range(pixels_[i])) {
      throw TensorError(TensorErrorCode::pixel_range,
                        "pixel " + std::to_string(i) + " outside [0,1]");
    }
  }
}

Image Image::clipped(Shape shape, std::span<const double> values) {
  std::vector<float> px(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = values[i];
    if (!(v > 0.0)) v = 0.0;  // also maps NaN to 0
    if (v > 1.0) v = 1.0;
    px[i] = static_cast<float>(v);
  }
  return Image(shape, std::move(px));
}

Image Image::filled(Shape shape, float value) {
  validate_shape(shape);
  return Image(shape, std::vector<float>(shape.size(), value));
}

std::vector<double> Image::to_double() const {
  return std::vector<double>(pixels_.begin(), pixels_.end());
}

Image grey_image(const Shape& shape) { return Image::filled(shape, 0.5f); }

std::string write_raw_tensor(const Shape& shape, std::span<const float> values) {
  validate_shape(shape);
  if (values.size() != shape.size()) {
    throw TensorError(TensorErrorCode::payload_length, "value count does not match shape");
  }
  std::string out;
  out.reserve(kHeaderSize + 4 * values.size());
  out.append(kMagic);
  out.push_back(static_cast<char>(kDtypeFloat32));
  out.push_back(static_cast<char>(kNdim));
  put_u32(out, shape.height);
  put_u32(out, shape.width);
  put_u32(out, shape.channels);
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

RawTensor read_raw_tensor(std::string_view bytes, std::size_t* consumed) {
  if (bytes.size() < 4) throw TensorError(TensorErrorCode::truncated, "tensor header truncated");
  if (bytes.substr(0, 4) != kMagic) throw TensorError(TensorErrorCode::bad_magic, "bad magic");
  if (bytes.size() < 6) throw TensorError(TensorErrorCode::truncated, "tensor header truncated");
  if (static_cast<std::uint8_t>(bytes[4]) != kDtypeFloat32) {
    throw TensorError(TensorErrorCode::bad_dtype,
                      "unsupported dtype code " +
                          std::to_string(static_cast<std::uint8_t>(bytes[4])));
  }
  if (static_cast<std::uint8_t>(bytes[5]) != kNdim) {
    throw TensorError(TensorErrorCode::bad_ndim,
                      "unsupported ndim " + std::to_string(static_cast<std::uint8_t>(bytes[5])));
  }
  if (bytes.size() < kHeaderSize) {
    throw TensorError(TensorErrorCode::truncated, "tensor header truncated");
  }
  RawTensor t;
  t.shape = {get_u32(bytes, 6), get_u32(bytes, 10), get_u32(bytes, 14)};
  validate_shape(t.shape);
  const std::size_t n = t.shape.size();
  const std::size_t available = bytes.size() - kHeaderSize;
  // Standalone reads must match exactly; chained reads only need enough.
  if (available < 4 * n || (consumed == nullptr && available != 4 * n)) {
    throw TensorError(TensorErrorCode::payload_length,
                      "payload holds " + std::to_string(available) + " bytes, expected " +
                          std::to_string(4 * n));
  }
  t.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.values[i] = std::bit_cast<float>(get_u32(bytes, kHeaderSize + 4 * i));
  }
  if (consumed != nullptr) *consumed = kHeaderSize + 4 * n;
  return t;
}

std::string write_tensor(const Image& image) {
  return write_raw_tensor(image.shape(), image.pixels());
}

Image read_tensor(std::string_view bytes) {
  RawTensor raw = read_raw_tensor(bytes, nullptr);
  return Image(raw.shape, std::move(raw.values));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

Image load_image(const std::string& path) { return read_tensor(read_file(path)); }

void save_image(const std::string& path, const Image& image) {
  write_file(path, write_tensor(image));
}

}  // namespace arena
