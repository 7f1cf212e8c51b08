#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "assist/core/encoding.hpp"
#include "assist/core/error.hpp"
#include "assist/core/image.hpp"
#include "assist/core/rng.hpp"

using namespace assist;

TEST(CounterRng, SameKeySameSequence) {
  auto a = CounterRng::stream(42, "x", 3);
  auto b = CounterRng::stream(42, "x", 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(CounterRng, StreamsAreDistinct) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t s = 0; s < 50; ++s)
    for (std::uint64_t k = 0; k < 20; ++k) firsts.insert(CounterRng::stream(s, k).next_u64());
  EXPECT_EQ(firsts.size(), 1000u);
  EXPECT_NE(CounterRng::stream(1, "a").next_u64(), CounterRng::stream(1, "b").next_u64());
}

TEST(CounterRng, UniformMomentsProperty) {
  auto r = CounterRng::stream(9, "uniform");
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.002);
}

TEST(CounterRng, NormalMomentsProperty) {
  auto r = CounterRng::stream(9, "normal");
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(CounterRng, UniformIntCoversRangeUniformly) {
  auto r = CounterRng::stream(3, "int");
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto v = r.uniform_int(7);
    ASSERT_LT(v, 7u);
    ++counts[v];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
  EXPECT_EQ(r.uniform_int(1), 0u);
}

TEST(CounterRng, ShuffleIsPermutation) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<int> v(37);
    std::iota(v.begin(), v.end(), 0);
    auto r = CounterRng::stream(seed, "shuffle");
    r.shuffle(std::span<int>(v));
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 37; ++i) EXPECT_EQ(sorted[i], i);
  }
}

TEST(Encoding, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(std::string_view("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(std::string_view("")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Encoding, Base64Rfc4648Vectors) {
  const std::pair<std::string, std::string> cases[] = {{"", ""},         {"f", "Zg=="},
                                                       {"fo", "Zm8="},   {"foo", "Zm9v"},
                                                       {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
                                                       {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, enc] : cases) {
    const std::vector<std::uint8_t> bytes(plain.begin(), plain.end());
    EXPECT_EQ(base64_encode(bytes), enc);
    EXPECT_EQ(base64_decode(enc), bytes);
  }
}

TEST(Encoding, Base64RoundTripProperty) {
  auto r = CounterRng::stream(5, "b64");
  for (int len = 0; len < 200; ++len) {
    std::vector<std::uint8_t> bytes(len);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(r.uniform_int(256));
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  }
}

TEST(Encoding, Base64RejectsGarbage) { EXPECT_THROW(base64_decode("@@@"), FormatError); }

RgbImage random_image(int w, int h, std::uint64_t seed) {
  RgbImage img(w, h);
  auto r = CounterRng::stream(seed, "img");
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(r.uniform_int(256));
  return img;
}

TEST(Png, RoundTripIsLossless) {
  for (auto [w, h] : {std::pair{1, 1}, {7, 3}, {64, 64}, {33, 17}}) {
    const auto img = random_image(w, h, w * 100 + h);
    EXPECT_EQ(decode_png(encode_png(img)), img);
  }
}

TEST(Png, UndecodableBytesThrowFormatError) {
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  EXPECT_THROW(decode_png(junk), FormatError);
  auto png = encode_png(random_image(8, 8, 1));
  png.resize(png.size() / 2);
  EXPECT_THROW(decode_png(png), FormatError);
}

TEST(Png, PixelLimitThrowsImageTooLarge) {
  const auto png = encode_png(random_image(20, 20, 2));
  EXPECT_THROW(decode_png(png, 399), ImageTooLarge);
  EXPECT_NO_THROW(decode_png(png, 400));
}

TEST(Image, CropMatchesPixels) {
  const auto img = random_image(10, 8, 3);
  const auto c = img.crop(2, 3, 4, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 4; ++x)
      for (int k = 0; k < 3; ++k) EXPECT_EQ(c.at(x, y, k), img.at(x + 2, y + 3, k));
  EXPECT_THROW(img.crop(8, 0, 4, 4), PreconditionError);
}

TEST(Image, ResizeToSameSizeIsIdentity) {
  const auto img = random_image(12, 9, 4);
  EXPECT_EQ(resize_bilinear(img, 12, 9), img);
}

TEST(Image, ResizeOfConstantImageIsConstant) {
  RgbImage img(5, 5, 77);
  const auto out = resize_bilinear(img, 13, 7);
  for (auto p : out.pixels) EXPECT_EQ(p, 77);
}
