#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "panodepth/geometry.hpp"
#include "panodepth/vec3.hpp"

namespace panodepth {

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  bool operator==(const Rgb&) const = default;
};

// Axis-aligned box seen from inside: the walls, floor and ceiling of a room.
struct RoomShell {
  Vec3 min;
  Vec3 max;
};

// Axis-aligned solid box seen from outside.
struct Box {
  Vec3 min;
  Vec3 max;
};

struct Sphere {
  Vec3 center;
  double radius = 0.0;
};

struct Triangle {
  Vec3 a;
  Vec3 b;
  Vec3 c;
};

using PrimitiveShape = std::variant<RoomShell, Box, Sphere, Triangle>;

struct Primitive {
  PrimitiveShape shape;
  Rgb albedo;
};

struct Scene {
  Vec3 camera;
  Rgb clear_color;
  double max_depth = 1000.0;
  std::vector<Primitive> primitives;

  // Throws ConfigError naming the violated invariant.
  void validate() const;
};

// Line format, '#' starts a comment:
//   camera x y z | clear r g b | maxdepth d
//   room|box xmin ymin zmin xmax ymax zmax albedo r g b
//   sphere cx cy cz radius albedo r g b
//   tri x1 y1 z1 x2 y2 z2 x3 y3 z3 albedo r g b
Scene parse_scene(std::string_view text);
// Canonical text with shortest round-trip number formatting.
std::string format_scene(const Scene& scene);

struct RoomParams {
  double half_width_min = 1.5, half_width_max = 3.5;    // x
  double half_height_min = 1.2, half_height_max = 1.6;  // y
  double half_depth_min = 1.5, half_depth_max = 3.5;    // z
  int objects_min = 1, objects_max = 5;
  double max_depth = 20.0;
  double camera_clearance = 0.4;  // minimum distance from camera to any object

  void validate() const;
};

// Deterministic in (seed, params). Camera at the room center, furniture keeps
// camera_clearance away from the camera.
Scene generate_room(std::uint64_t seed, const RoomParams& params = {});

struct Hit {
  double t = 0.0;
  Vec3 normal;
  Rgb albedo;
  int primitive = -1;
};

inline constexpr double kRayEpsilon = 1e-6;

// Nearest hit with t in (kRayEpsilon, scene.max_depth]; ties go to the lowest index.
std::optional<Hit> intersect(const Vec3& origin, const Direction& dir, const Scene& scene);
// Hit distance against one primitive, no max_depth limit.
std::optional<Hit> intersect_primitive(const Vec3& origin, const Direction& dir, const Primitive& prim);

// Rotates every primitive about the vertical axis through the camera by k
// quarter turns (longitude phi -> phi + k pi/2).
Scene rotate_scene_yaw(const Scene& scene, int quarter_turns);

}  // namespace panodepth
