#include <doctest.h>

#include <bit>
#include <cstring>
#include <filesystem>

#include "panodepth/image_io.hpp"
#include "panodepth/rng.hpp"

using namespace panodepth;

namespace {

Image8 random_bytes(int w, int h, int c, std::uint64_t seed) {
  Rng rng(seed);
  Image8 img(w, h, c);
  for (auto& b : img.data()) b = static_cast<std::uint8_t>(rng.index(256));
  return img;
}

Image<float> random_floats(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image<float> img(w, h, 1);
  for (auto& f : img.data()) f = static_cast<float>(rng.uniform(-50.0, 50.0));
  return img;
}

}  // namespace

TEST_CASE("ppm and pgm round trip bit-exactly") {
  const auto color = random_bytes(7, 5, 3, 1);
  const auto gray = random_bytes(9, 4, 1, 2);
  CHECK(decode_ppm(encode_ppm(color)) == color);
  CHECK(decode_pgm(encode_pgm(gray)) == gray);
  CHECK(encode_ppm(decode_ppm(encode_ppm(color))) == encode_ppm(color));
}

TEST_CASE("ppm header layout") {
  Image8 img(2, 1, 3);
  img.at(0, 0, 0) = 10;
  img.at(1, 0, 2) = 200;
  const std::string bytes = encode_ppm(img);
  const std::string expected = std::string("P6\n2 1\n255\n") + std::string("\x0a\0\0\0\0\xc8", 6);
  CHECK(bytes == expected);
}

TEST_CASE("pfm header is exact and rows are stored bottom to top") {
  Image<float> img(2, 2, 1);
  img.at(0, 0) = 1.0f;
  img.at(1, 0) = 2.0f;
  img.at(0, 1) = 3.0f;
  img.at(1, 1) = -0.5f;
  const std::string bytes = encode_pfm(img);
  const std::string header = "Pf\n2 2\n-1.0\n";
  REQUIRE(bytes.size() == header.size() + 16);
  CHECK(bytes.substr(0, header.size()) == header);
  // Independent little-endian assembly of the expected payload.
  auto le = [](float f) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    std::string s(4, '\0');
    for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
    return s;
  };
  CHECK(bytes.substr(header.size()) == le(3.0f) + le(-0.5f) + le(1.0f) + le(2.0f));
}

TEST_CASE("pfm round trip preserves every bit, including special values") {
  auto img = random_floats(13, 6, 3);
  img.at(0, 0) = -0.0f;
  img.at(1, 0) = std::numeric_limits<float>::denorm_min();
  img.at(2, 0) = std::numeric_limits<float>::max();
  const auto back = decode_pfm(encode_pfm(img));
  REQUIRE(back.same_shape(img));
  CHECK(std::memcmp(back.data().data(), img.data().data(), img.size() * 4) == 0);
}

TEST_CASE("decoders report the failing offset") {
  const std::string good = encode_pfm(random_floats(4, 2, 4));
  SUBCASE("truncated pfm payload") {
    try {
      decode_pfm(good.substr(0, good.size() - 3));
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == good.size() - 3);
    }
  }
  SUBCASE("color pfm rejected") { CHECK_THROWS_AS(decode_pfm("PF\n1 1\n-1.0\n" + std::string(12, '\0')), ParseError); }
  SUBCASE("big-endian pfm rejected") { CHECK_THROWS_AS(decode_pfm("Pf\n1 1\n1.0\n" + std::string(4, '\0')), ParseError); }
  SUBCASE("bad magic") { CHECK_THROWS_AS(decode_ppm("P3\n1 1\n255\n"), ParseError); }
  SUBCASE("maxval other than 255") { CHECK_THROWS_AS(decode_pgm("P5\n1 1\n65535\n\0\0"), ParseError); }
  SUBCASE("header comments are skipped") {
    const auto img = decode_pgm(std::string("P5\n# note\n2 1\n255\n\x01\x02", 20));
    CHECK(img.at(0, 0) == 1);
    CHECK(img.at(1, 0) == 2);
  }
}

TEST_CASE("quantize maps [0,1] to 0..255 with rounding and clamping") {
  ColorImage c(3, 1, 3);
  c.at(0, 0, 0) = -1.0f;
  c.at(1, 0, 0) = 0.5f;
  c.at(2, 0, 0) = 2.0f;
  const auto q = quantize(c);
  CHECK(q.at(0, 0, 0) == 0);
  CHECK(q.at(1, 0, 0) == 128);
  CHECK(q.at(2, 0, 0) == 255);
  CHECK(quantize(dequantize(q)) == q);
}

TEST_CASE("file helpers round trip and fail with IoError") {
  const auto dir = std::filesystem::temp_directory_path() / "panodepth_io_test";
  std::filesystem::create_directories(dir);
  const auto depth = random_floats(8, 4, 5);
  save_depth((dir / "d.pfm").string(), depth);
  CHECK(load_depth((dir / "d.pfm").string()) == depth);

  ValidityMask mask(4, 2, 1);
  mask.at(1, 0) = 1;
  mask.at(3, 1) = 1;
  save_mask((dir / "m.pgm").string(), mask);
  CHECK(read_file((dir / "m.pgm").string()).back() == static_cast<char>(255));
  CHECK(load_mask((dir / "m.pgm").string()) == mask);

  Image8 bad(2, 1, 1);
  bad.at(0, 0) = 7;
  write_file((dir / "bad.pgm").string(), encode_pgm(bad));
  CHECK_THROWS_AS(load_mask((dir / "bad.pgm").string()), ParseError);
  CHECK_THROWS_AS(read_file((dir / "missing.pfm").string()), IoError);
  std::filesystem::remove_all(dir);
}
