#include <doctest.h>

#include <cmath>
#include <limits>

#include "arena/rng.h"
#include "arena/scoring.h"
#include "arena/tensor.h"
#include "support.h"

using namespace arena;

namespace {

std::string bytes(std::initializer_list<int> values) {
  std::string out;
  for (int v : values) out.push_back(static_cast<char>(v));
  return out;
}

TensorErrorCode read_error(std::string_view data) {
  try {
    read_tensor(data);
  } catch (const TensorError& e) {
    return e.code();
  }
  FAIL("read_tensor accepted malformed input");
  return TensorErrorCode::truncated;
}

}  // namespace

TEST_CASE("AVT1 golden bytes for a single grey pixel") {
  const std::string expected = bytes({0x41, 0x56, 0x54, 0x31, 0x01, 0x03, 0x01, 0, 0, 0, 0x01, 0,
                                      0, 0, 0x01, 0, 0, 0, 0x00, 0x00, 0x00, 0x3f});
  const Image img(Shape{1, 1, 1}, {0.5f});
  CHECK(write_tensor(img) == expected);
  CHECK(read_tensor(expected) == img);
}

TEST_CASE("AVT1 round trip on random images") {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Shape s{1 + static_cast<std::uint32_t>(rng.uniform_int(9)),
            1 + static_cast<std::uint32_t>(rng.uniform_int(9)),
            1 + static_cast<std::uint32_t>(rng.uniform_int(3))};
    const Image x = testing::random_image(s, rng);
    CHECK(read_tensor(write_tensor(x)) == x);
  }
}

TEST_CASE("AVT1 malformed input error codes") {
  const std::string good = write_tensor(Image(Shape{1, 2, 1}, {0.25f, 0.75f}));
  CHECK(read_error(good.substr(0, good.size() - 4)) == TensorErrorCode::payload_length);
  CHECK(read_error(good + "xxxx") == TensorErrorCode::payload_length);
  CHECK(read_error(good.substr(0, 10)) == TensorErrorCode::truncated);
  std::string bad = good;
  bad[0] = 'B';
  CHECK(read_error(bad) == TensorErrorCode::bad_magic);
  bad = good;
  bad[4] = 0x02;
  CHECK(read_error(bad) == TensorErrorCode::bad_dtype);
  bad = good;
  bad[5] = 0x02;
  CHECK(read_error(bad) == TensorErrorCode::bad_ndim);
  bad = good;
  bad[6] = 0;  // height 0
  CHECK(read_error(bad) == TensorErrorCode::bad_dimensions);
  // 1.5f = 00 00 c0 3f
  const std::string out_of_range = bytes({0x41, 0x56, 0x54, 0x31, 0x01, 0x03, 1, 0, 0, 0, 1, 0, 0,
                                          0, 1, 0, 0, 0, 0x00, 0x00, 0xc0, 0x3f});
  CHECK(read_error(out_of_range) == TensorErrorCode::pixel_range);
}

TEST_CASE("Image invariants") {
  CHECK_THROWS_AS(Image(Shape{1, 1, 1}, {1.5f}), TensorError);
  CHECK_THROWS_AS(Image(Shape{1, 1, 1}, {std::numeric_limits<float>::quiet_NaN()}), TensorError);
  CHECK_THROWS_AS(Image(Shape{2, 1, 1}, {0.5f}), TensorError);
  const std::vector<double> raw{-1.0, 2.0, std::nan(""), 0.25};
  const Image c = Image::clipped(Shape{2, 2, 1}, raw);
  CHECK(c[0] == 0.0f);
  CHECK(c[1] == 1.0f);
  CHECK(c[2] == 0.0f);
  CHECK(c[3] == 0.25f);
}

TEST_CASE("shape text") {
  CHECK(parse_shape("8x8x1") == Shape{8, 8, 1});
  CHECK(format_shape(Shape{4, 3, 2}) == "4x3x2");
  CHECK_THROWS(parse_shape("8x8"));
  CHECK_THROWS(parse_shape("8xax1"));
  CHECK_THROWS(validate_shape(Shape{0, 8, 1}));
}

TEST_CASE("grey image") {
  const Image g = grey_image(Shape{2, 2, 1});
  CHECK(g.size() == 4);
  for (float p : g.pixels()) CHECK(p == 0.5f);
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    const Image x = testing::random_image(Shape{4, 4, 3}, rng);
    CHECK(l2_distance(grey_image(x.shape()), x) <= 0.5 * std::sqrt(48.0) + 1e-12);
  }
}

TEST_CASE("raw tensors concatenate") {
  const std::vector<float> a{-3.0f, 4.5f};
  const std::vector<float> b{7.0f};
  const std::string blob = write_raw_tensor(Shape{1, 2, 1}, a) + write_raw_tensor(Shape{1, 1, 1}, b);
  std::size_t used = 0;
  const RawTensor ra = read_raw_tensor(blob, &used);
  CHECK(ra.values == a);
  std::size_t used2 = 0;
  const RawTensor rb = read_raw_tensor(std::string_view(blob).substr(used), &used2);
  CHECK(rb.values == b);
  CHECK(used + used2 == blob.size());
}

TEST_CASE("image files") {
  testing::TempDir dir;
  const Image x(Shape{1, 3, 1}, {0.0f, 0.5f, 1.0f});
  save_image(dir / "x.avt1", x);
  CHECK(load_image(dir / "x.avt1") == x);
}
