#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace arena {

struct Shape {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  bool operator==(const Shape&) const = default;
};

// "8x8x1" <-> Shape. Throws std::invalid_argument on malformed text.
Shape parse_shape(std::string_view text);
std::string format_shape(const Shape& shape);

// Rejects zero dimensions and element counts that overflow or exceed
// kMaxElements.
void validate_shape(const Shape& shape);

inline constexpr std::size_t kMaxElements = std::size_t{1} << 28;

enum class TensorErrorCode {
  truncated,
  bad_magic,
  bad_dtype,
  bad_ndim,
  bad_dimensions,
  payload_length,
  pixel_range,
  shape_mismatch,
};

const char* to_string(TensorErrorCode code);

class TensorError : public std::runtime_error {
 public:
  TensorError(TensorErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  TensorErrorCode code() const { return code_; }

 private:
  TensorErrorCode code_;
};

// H x W x C unit-range image, row-major with channel fastest. Immutable
// once constructed; the constructor enforces the length and range
// invariants.
class Image {
 public:
  Image() = default;
  Image(Shape shape, std::vector<float> pixels);

  // Clips every value into [0, 1] (NaN becomes 0) before construction.
  static Image clipped(Shape shape, std::span<const double> values);
  static Image filled(Shape shape, float value);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return pixels_.size(); }
  std::span<const float> pixels() const { return pixels_; }
  float operator[](std::size_t i) const { return pixels_[i]; }

  std::vector<double> to_double() const;

  bool operator==(const Image&) const = default;

 private:
  Shape shape_;
  std::vector<float> pixels_;
};

// Every pixel exactly 0.5.
Image grey_image(const Shape& shape);

// AVT1 format: "AVT1", dtype 0x01 (float32 LE), ndim 0x03, u32 LE H W C,
// then H*W*C float32 LE pixels.
std::string write_tensor(const Image& image);
Image read_tensor(std::string_view bytes);

// Same framing without the unit-range requirement; used for model
// parameter blocks. `consumed` receives the number of bytes read so
// several blocks can be concatenated.
struct RawTensor {
  Shape shape;
  std::vector<float> values;
};
std::string write_raw_tensor(const Shape& shape, std::span<const float> values);
RawTensor read_raw_tensor(std::string_view bytes, std::size_t* consumed);

Image load_image(const std::string& path);
void save_image(const std::string& path, const Image& image);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace arena
