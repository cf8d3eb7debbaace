#include <doctest.h>

#include <cmath>
#include <numbers>

#include "panodepth/geometry.hpp"

using namespace panodepth;

namespace {

constexpr double kPi = std::numbers::pi;

// Reference mapping written directly from the pixel-center convention.
Vec3 reference_direction(int u, int v, int w, int h) {
  const double lon = 2.0 * kPi * (u + 0.5) / w - kPi;
  const double lat = kPi / 2.0 - kPi * (v + 0.5) / h;
  return {std::cos(lat) * std::sin(lon), std::sin(lat), std::cos(lat) * std::cos(lon)};
}

}  // namespace

TEST_CASE("sphere dims enforce 2:1 and quarter-width divisibility") {
  CHECK_NOTHROW(SphereDims(8, 4));
  CHECK_THROWS_AS(SphereDims(8, 5), DomainError);
  CHECK_THROWS_AS(SphereDims(6, 3), DomainError);
  CHECK_THROWS_AS(SphereDims(0, 0), DomainError);
  CHECK(SphereDims::from_height(32).width() == 64);
}

TEST_CASE("pixel center convention on a 4x2 grid") {
  const SphereDims dims(4, 2);
  const auto s = pixel_to_spherical(2, 1, dims);
  CHECK(s.longitude == doctest::Approx(kPi / 4).epsilon(1e-15));
  CHECK(s.latitude == doctest::Approx(-kPi / 4).epsilon(1e-15));
  const auto d = pixel_to_direction(2, 1, dims);
  CHECK(d.x() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d.y() == doctest::Approx(-0.70710678).epsilon(1e-8));
  CHECK(d.z() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pixel_to_direction agrees with the trigonometric reference") {
  const SphereDims dims(64, 32);
  double worst = 0.0;
  for (int v = 0; v < 32; ++v) {
    for (int u = 0; u < 64; ++u) {
      const Vec3 ref = reference_direction(u, v, 64, 32);
      worst = std::max(worst, norm(pixel_to_direction(u, v, dims).vec() - ref));
    }
  }
  CHECK(worst < 1e-14);
}

TEST_CASE("direction_to_pixel inverts pixel_to_direction") {
  const SphereDims dims(256, 128);
  double worst = 0.0;
  for (int v = 0; v < 128; ++v) {
    for (int u = 0; u < 256; ++u) {
      const auto p = direction_to_pixel(pixel_to_direction(u, v, dims), dims);
      worst = std::max({worst, std::abs(p.u - u), std::abs(p.v - v)});
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("a yaw quarter turn of a pixel direction is the direction of the shifted pixel, exactly") {
  const SphereDims dims(32, 16);
  for (int k = 1; k < 4; ++k) {
    for (int v = 0; v < 16; ++v) {
      for (int u = 0; u < 32; ++u) {
        const Vec3 turned = yaw_quarter_turn(pixel_to_direction(u, v, dims).vec(), k);
        const Vec3 shifted = pixel_to_direction((u + k * 8) % 32, v, dims).vec();
        REQUIRE(turned.x == shifted.x);
        REQUIRE(turned.y == shifted.y);
        REQUIRE(turned.z == shifted.z);
      }
    }
  }
}

TEST_CASE("zero direction is a domain error") {
  CHECK_THROWS_AS(Direction::from({0, 0, 0}), DomainError);
  CHECK_THROWS_AS(direction_to_pixel(Vec3{0, 0, 0}, SphereDims(8, 4)), DomainError);
}

TEST_CASE("latitude weight is cos(latitude) at row centers and symmetric") {
  for (int v = 0; v < 8; ++v) {
    CHECK(latitude_weight(v, 8) == doctest::Approx(std::cos(kPi / 2 - kPi * (v + 0.5) / 8)));
    CHECK(latitude_weight(v, 8) == doctest::Approx(latitude_weight(7 - v, 8)));
  }
}

TEST_CASE("yaw_rotate shifts columns right by k * W / 4") {
  Image<int> img(8, 2, 1);
  for (int v = 0; v < 2; ++v)
    for (int u = 0; u < 8; ++u) img.at(u, v) = 10 * v + u;
  const auto r = yaw_rotate(img, 1);
  for (int u = 0; u < 8; ++u) CHECK(r.at((u + 2) % 8, 1) == 10 + u);
  CHECK(yaw_rotate(yaw_rotate(img, 3), 1) == img);
  CHECK_THROWS_AS(yaw_rotate(img, 4), DomainError);
}

TEST_CASE("cube face directions point along their axes at the face center") {
  const int n = 4;
  const Vec3 expected[6] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (int f = 0; f < 6; ++f) {
    const Vec3 d = cube_face_direction(static_cast<CubeFace>(f), (n - 1) / 2.0, (n - 1) / 2.0, n);
    CHECK(norm(d - expected[f]) < 1e-15);
  }
}

TEST_CASE("cubemap round trip keeps a constant image exactly") {
  Image<float> img(64, 32, 3, 0.375f);
  const auto faces = equirect_to_cubemap(img, 16);
  for (const auto& f : faces) {
    for (float x : f.data()) REQUIRE(x == 0.375f);
  }
  CHECK(cubemap_to_equirect(faces, SphereDims(64, 32)) == img);
}

TEST_CASE("cubemap round trip of a smooth field stays close") {
  const SphereDims dims(128, 64);
  Image<float> img(128, 64, 1);
  for (int v = 0; v < 64; ++v)
    for (int u = 0; u < 128; ++u) img.at(u, v) = static_cast<float>(pixel_to_direction(u, v, dims).y());
  const auto back = cubemap_to_equirect(equirect_to_cubemap(img, 48), dims);
  double worst = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) worst = std::max(worst, std::abs(double(back.data()[i]) - img.data()[i]));
  CHECK(worst < 0.02);
}
