#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "panodepth/error.hpp"
#include "panodepth/image.hpp"
#include "panodepth/vec3.hpp"

namespace panodepth {

// Equirectangular raster size. width == 2 * height and width % 4 == 0, so a
// quarter turn in yaw is an exact shift of width / 4 columns.
class SphereDims {
 public:
  SphereDims(int width, int height);
  static SphereDims from_height(int height) { return SphereDims(2 * height, height); }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool operator==(const SphereDims&) const = default;

 private:
  int width_;
  int height_;
};

// Unit vector. x points to longitude +90 degrees, y up, z to longitude 0.
class Direction {
 public:
  // Normalizes v; throws DomainError for the zero vector.
  static Direction from(const Vec3& v);
  // Caller guarantees |v| == 1 to within rounding.
  static constexpr Direction unit(const Vec3& v) { return Direction(v); }

  const Vec3& vec() const noexcept { return v_; }
  double x() const noexcept { return v_.x; }
  double y() const noexcept { return v_.y; }
  double z() const noexcept { return v_.z; }

 private:
  constexpr explicit Direction(const Vec3& v) : v_(v) {}
  Vec3 v_;
};

struct SphericalCoord {
  double longitude;  // [-pi, pi)
  double latitude;   // [-pi/2, pi/2]
};

// Continuous pixel position; integer values are pixel centers.
struct PixelCoord {
  double u;
  double v;
};

// Pixel centers: longitude = 2 pi (u + 0.5) / W - pi, latitude = pi/2 - pi (v + 0.5) / H.
SphericalCoord pixel_to_spherical(int u, int v, const SphereDims& dims);
Direction pixel_to_direction(int u, int v, const SphereDims& dims);
PixelCoord direction_to_pixel(const Direction& d, const SphereDims& dims);
PixelCoord direction_to_pixel(const Vec3& d, const SphereDims& dims);

// The quarter turn about +y that maps longitude phi to phi + pi/2: (x, y, z) -> (z, y, -x).
constexpr Vec3 yaw_quarter_turn(const Vec3& v, int quarter_turns) {
  Vec3 r = v;
  for (int i = 0; i < ((quarter_turns % 4) + 4) % 4; ++i) r = Vec3{r.z, r.y, -r.x};
  return r;
}

// cos(latitude) at the center of row v.
double latitude_weight(int v, int height);

// Circular shift right by k * W / 4 columns, bit-exact.
template <typename T>
Image<T> yaw_rotate(const Image<T>& img, int quarter_turns) {
  if (img.width() % 4 != 0) throw DomainError("yaw_rotate needs width divisible by 4");
  if (quarter_turns < 0 || quarter_turns > 3) throw DomainError("quarter turns must be in 0..3");
  Image<T> out(img.width(), img.height(), img.channels());
  const int shift = quarter_turns * img.width() / 4;
  for (int v = 0; v < img.height(); ++v) {
    for (int u = 0; u < img.width(); ++u) {
      const int dst = (u + shift) % img.width();
      for (int ch = 0; ch < img.channels(); ++ch) out.at(dst, v, ch) = img.at(u, v, ch);
    }
  }
  return out;
}

enum class CubeFace { pos_x = 0, neg_x, pos_y, neg_y, pos_z, neg_z };
using Cubemap = std::array<Image<float>, 6>;

// Direction through the center of face pixel (i, j); i is the column, j the row.
Vec3 cube_face_direction(CubeFace face, double i, double j, int face_size);

// Bilinear sample with circular wrap in longitude and clamp in latitude.
float sample_equirect(const Image<float>& img, const PixelCoord& p, int ch);

// Faces ordered +x, -x, +y, -y, +z, -z.
Cubemap equirect_to_cubemap(const Image<float>& img, int face_size);
Image<float> cubemap_to_equirect(const Cubemap& faces, const SphereDims& dims);

}  // namespace panodepth
