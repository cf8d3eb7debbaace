#include "panodepth/geometry.hpp"

#include <algorithm>
#include <string>

namespace panodepth {
namespace {

constexpr double kPi = std::numbers::pi;

double lerp(double a, double b, double t) { return a + t * (b - a); }

int wrap(int i, int n) { return ((i % n) + n) % n; }

}  // namespace

SphereDims::SphereDims(int width, int height) : width_(width), height_(height) {
  if (height < 1 || width != 2 * height) {
    throw DomainError("sphere dims " + std::to_string(width) + "x" + std::to_string(height) +
                      " violate width == 2 * height");
  }
  if (width % 4 != 0) {
    throw DomainError("sphere width " + std::to_string(width) + " is not divisible by 4");
  }
}

Direction Direction::from(const Vec3& v) {
  const double n = norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("direction from zero or non-finite vector");
  return Direction(v * (1.0 / n));
}

SphericalCoord pixel_to_spherical(int u, int v, const SphereDims& dims) {
  if (u < 0 || u >= dims.width() || v < 0 || v >= dims.height()) {
    throw DomainError("pixel (" + std::to_string(u) + ", " + std::to_string(v) + ") outside " +
                      std::to_string(dims.width()) + "x" + std::to_string(dims.height()));
  }
  return {2.0 * kPi * (u + 0.5) / dims.width() - kPi, kPi / 2.0 - kPi * (v + 0.5) / dims.height()};
}

Direction pixel_to_direction(int u, int v, const SphereDims& dims) {
  const SphericalCoord s = pixel_to_spherical(u, v, dims);
  // Evaluate the trig in the first quadrant only and reach the others by exact
  // component swaps, so a shift by W/4 columns is exactly a quarter turn.
  const int quarter = dims.width() / 4;
  const int turns = u / quarter;
  const double base_longitude = 2.0 * kPi * ((u % quarter) + 0.5) / dims.width() - kPi;
  const double c = std::cos(s.latitude);
  const Vec3 base{c * std::sin(base_longitude), std::sin(s.latitude), c * std::cos(base_longitude)};
  return Direction::unit(yaw_quarter_turn(base, turns));
}

PixelCoord direction_to_pixel(const Direction& d, const SphereDims& dims) {
  double longitude = std::atan2(d.x(), d.z());
  if (longitude >= kPi) longitude -= 2.0 * kPi;
  const double latitude = std::atan2(d.y(), std::hypot(d.x(), d.z()));
  return {(longitude + kPi) * dims.width() / (2.0 * kPi) - 0.5,
          (kPi / 2.0 - latitude) * dims.height() / kPi - 0.5};
}

PixelCoord direction_to_pixel(const Vec3& d, const SphereDims& dims) {
  return direction_to_pixel(Direction::from(d), dims);
}

double latitude_weight(int v, int height) {
  if (v < 0 || v >= height) throw DomainError("row " + std::to_string(v) + " outside image");
  return std::cos(kPi / 2.0 - kPi * (v + 0.5) / height);
}

Vec3 cube_face_direction(CubeFace face, double i, double j, int face_size) {
  const double a = 2.0 * (i + 0.5) / face_size - 1.0;
  const double b = 2.0 * (j + 0.5) / face_size - 1.0;
  switch (face) {
    case CubeFace::pos_x: return {1.0, -b, -a};
    case CubeFace::neg_x: return {-1.0, -b, a};
    case CubeFace::pos_y: return {a, 1.0, b};
    case CubeFace::neg_y: return {a, -1.0, -b};
    case CubeFace::pos_z: return {a, -b, 1.0};
    case CubeFace::neg_z: return {-a, -b, -1.0};
  }
  return {};
}

float sample_equirect(const Image<float>& img, const PixelCoord& p, int ch) {
  const double u0f = std::floor(p.u);
  const double fu = p.u - u0f;
  const int u0 = wrap(static_cast<int>(u0f), img.width());
  const int u1 = wrap(u0 + 1, img.width());
  const double v = std::clamp(p.v, 0.0, static_cast<double>(img.height() - 1));
  const int v0 = static_cast<int>(std::floor(v));
  const int v1 = std::min(v0 + 1, img.height() - 1);
  const double fv = v - v0;
  const double top = lerp(img.at(u0, v0, ch), img.at(u1, v0, ch), fu);
  const double bottom = lerp(img.at(u0, v1, ch), img.at(u1, v1, ch), fu);
  return static_cast<float>(lerp(top, bottom, fv));
}

namespace {

// Bilinear sample inside a face with edge clamping.
float sample_face(const Image<float>& face, double i, double j, int ch) {
  const double last = face.width() - 1;
  i = std::clamp(i, 0.0, last);
  j = std::clamp(j, 0.0, last);
  const int i0 = static_cast<int>(std::floor(i));
  const int j0 = static_cast<int>(std::floor(j));
  const int i1 = std::min(i0 + 1, face.width() - 1);
  const int j1 = std::min(j0 + 1, face.height() - 1);
  const double fi = i - i0;
  const double fj = j - j0;
  const double top = lerp(face.at(i0, j0, ch), face.at(i1, j0, ch), fi);
  const double bottom = lerp(face.at(i0, j1, ch), face.at(i1, j1, ch), fi);
  return static_cast<float>(lerp(top, bottom, fj));
}

struct FaceHit {
  CubeFace face;
  double a;
  double b;
};

FaceHit project_to_face(const Vec3& d) {
  const double ax = std::abs(d.x), ay = std::abs(d.y), az = std::abs(d.z);
  if (ax >= ay && ax >= az) {
    return d.x > 0 ? FaceHit{CubeFace::pos_x, -d.z / ax, -d.y / ax}
                   : FaceHit{CubeFace::neg_x, d.z / ax, -d.y / ax};
  }
  if (ay >= az) {
    return d.y > 0 ? FaceHit{CubeFace::pos_y, d.x / ay, d.z / ay}
                   : FaceHit{CubeFace::neg_y, d.x / ay, -d.z / ay};
  }
  return d.z > 0 ? FaceHit{CubeFace::pos_z, d.x / az, -d.y / az}
                 : FaceHit{CubeFace::neg_z, -d.x / az, -d.y / az};
}

}  // namespace

Cubemap equirect_to_cubemap(const Image<float>& img, int face_size) {
  if (face_size < 1) throw DomainError("face size must be >= 1");
  const SphereDims dims(img.width(), img.height());
  Cubemap faces;
  for (int f = 0; f < 6; ++f) {
    Image<float> face(face_size, face_size, img.channels());
    for (int j = 0; j < face_size; ++j) {
      for (int i = 0; i < face_size; ++i) {
        const PixelCoord p =
            direction_to_pixel(cube_face_direction(static_cast<CubeFace>(f), i, j, face_size), dims);
        for (int ch = 0; ch < img.channels(); ++ch) face.at(i, j, ch) = sample_equirect(img, p, ch);
      }
    }
    faces[f] = std::move(face);
  }
  return faces;
}

Image<float> cubemap_to_equirect(const Cubemap& faces, const SphereDims& dims) {
  const int size = faces[0].width();
  const int channels = faces[0].channels();
  for (const auto& face : faces) {
    if (face.width() != size || face.height() != size || face.channels() != channels) {
      throw ShapeError("cubemap faces must be square and share size and channel count");
    }
  }
  Image<float> out(dims.width(), dims.height(), channels);
  for (int v = 0; v < dims.height(); ++v) {
    for (int u = 0; u < dims.width(); ++u) {
      const FaceHit hit = project_to_face(pixel_to_direction(u, v, dims).vec());
      const double i = (hit.a + 1.0) * size / 2.0 - 0.5;
      const double j = (hit.b + 1.0) * size / 2.0 - 0.5;
      const auto& face = faces[static_cast<int>(hit.face)];
      for (int ch = 0; ch < channels; ++ch) out.at(u, v, ch) = sample_face(face, i, j, ch);
    }
  }
  return out;
}

}  // namespace panodepth
