#include "panodepth/scene.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "panodepth/rng.hpp"

namespace panodepth {
namespace {

std::vector<std::string_view> split_words(std::string_view line) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) words.push_back(line.substr(start, i - start));
  }
  return words;
}

class LineParser {
 public:
  LineParser(std::vector<std::string_view> words, int line) : words_(std::move(words)), line_(line) {}

  double number() {
    if (next_ >= words_.size()) fail("expected a number after '" + std::string(words_[next_ - 1]) + "'");
    const std::string_view w = words_[next_++];
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), value);
    if (ec != std::errc() || ptr != w.data() + w.size() || !std::isfinite(value)) {
      fail("invalid number '" + std::string(w) + "'");
    }
    return value;
  }

  Vec3 vec3() {
    const double x = number();
    const double y = number();
    const double z = number();
    return {x, y, z};
  }

  Rgb albedo() {
    if (next_ >= words_.size() || words_[next_] != "albedo") fail("expected 'albedo r g b'");
    ++next_;
    return rgb();
  }

  Rgb rgb() {
    const double r = number();
    const double g = number();
    const double b = number();
    return {r, g, b};
  }

  void finish() {
    if (next_ != words_.size()) fail("unexpected trailing token '" + std::string(words_[next_]) + "'");
  }

  [[noreturn]] void fail(const std::string& what) const { throw SceneParseError(what, line_); }

 private:
  std::vector<std::string_view> words_;
  std::size_t next_ = 1;
  int line_;
};

bool rgb_in_unit_range(const Rgb& c) {
  auto ok = [](double x) { return x >= 0.0 && x <= 1.0; };
  return ok(c.r) && ok(c.g) && ok(c.b);
}

bool strictly_ordered(const Vec3& lo, const Vec3& hi) {
  return lo.x < hi.x && lo.y < hi.y && lo.z < hi.z;
}

bool strictly_inside(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  return p.x > lo.x && p.x < hi.x && p.y > lo.y && p.y < hi.y && p.z > lo.z && p.z < hi.z;
}

std::string fmt(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

std::string fmt(const Vec3& v) { return fmt(v.x) + " " + fmt(v.y) + " " + fmt(v.z); }
std::string fmt(const Rgb& c) { return fmt(c.r) + " " + fmt(c.g) + " " + fmt(c.b); }

// Slab test against [lo, hi]; returns entry/exit distances and the axes that bound them.
struct SlabResult {
  double t_near;
  double t_far;
  int near_axis;
  int far_axis;
};

std::optional<SlabResult> slab(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int near_axis = -1, far_axis = -1;
  for (int axis = 0; axis < 3; ++axis) {
    const double oa = o[axis], da = d[axis];
    if (da == 0.0) {
      if (oa < lo[axis] || oa > hi[axis]) return std::nullopt;
      continue;
    }
    double t0 = (lo[axis] - oa) / da;
    double t1 = (hi[axis] - oa) / da;
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      near_axis = axis;
    }
    if (t1 < t_far) {
      t_far = t1;
      far_axis = axis;
    }
  }
  if (t_near > t_far) return std::nullopt;
  return SlabResult{t_near, t_far, near_axis, far_axis};
}

Vec3 axis_normal(int axis, double sign) {
  Vec3 n;
  if (axis == 0) n.x = sign;
  if (axis == 1) n.y = sign;
  if (axis == 2) n.z = sign;
  return n;
}

double sign_of(double x) { return x < 0.0 ? -1.0 : 1.0; }

}  // namespace

void Scene::validate() const {
  if (!(max_depth > 0.0)) throw ConfigError("maxdepth must be > 0");
  if (!rgb_in_unit_range(clear_color)) throw ConfigError("clear color must lie in [0, 1]");
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    const Primitive& p = primitives[i];
    const std::string where = "primitive " + std::to_string(i) + ": ";
    if (!rgb_in_unit_range(p.albedo)) throw ConfigError(where + "albedo must lie in [0, 1]");
    if (const auto* room = std::get_if<RoomShell>(&p.shape)) {
      if (!strictly_ordered(room->min, room->max)) throw ConfigError(where + "room needs min < max on every axis");
      if (!strictly_inside(camera, room->min, room->max)) {
        throw ConfigError(where + "camera must be strictly inside the room shell");
      }
    } else if (const auto* box = std::get_if<Box>(&p.shape)) {
      if (!strictly_ordered(box->min, box->max)) throw ConfigError(where + "box needs min < max on every axis");
    } else if (const auto* sphere = std::get_if<Sphere>(&p.shape)) {
      if (!(sphere->radius > 0.0)) throw ConfigError(where + "sphere radius must be > 0");
    } else if (const auto* tri = std::get_if<Triangle>(&p.shape)) {
      if (!(norm(cross(tri->b - tri->a, tri->c - tri->a)) > 1e-12)) {
        throw ConfigError(where + "triangle vertices are collinear");
      }
    }
  }
}

Scene parse_scene(std::string_view text) {
  Scene scene;
  bool have_camera = false;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto words = split_words(line);
    if (words.empty()) continue;
    const std::string keyword(words[0]);
    LineParser p(std::move(words), line_no);
    if (keyword == "camera") {
      scene.camera = p.vec3();
      have_camera = true;
    } else if (keyword == "clear") {
      scene.clear_color = p.rgb();
    } else if (keyword == "maxdepth") {
      scene.max_depth = p.number();
    } else if (keyword == "room" || keyword == "box") {
      const Vec3 lo = p.vec3();
      const Vec3 hi = p.vec3();
      const Rgb albedo = p.albedo();
      if (keyword == "room") {
        scene.primitives.push_back({RoomShell{lo, hi}, albedo});
      } else {
        scene.primitives.push_back({Box{lo, hi}, albedo});
      }
    } else if (keyword == "sphere") {
      const Vec3 c = p.vec3();
      const double r = p.number();
      scene.primitives.push_back({Sphere{c, r}, p.albedo()});
    } else if (keyword == "tri") {
      const Vec3 a = p.vec3();
      const Vec3 b = p.vec3();
      const Vec3 c = p.vec3();
      scene.primitives.push_back({Triangle{a, b, c}, p.albedo()});
    } else {
      p.fail("unknown keyword '" + keyword + "'");
    }
    p.finish();
  }
  if (!have_camera) throw ConfigError("scene is missing the required 'camera' line");
  scene.validate();
  return scene;
}

std::string format_scene(const Scene& scene) {
  std::ostringstream out;
  out << "camera " << fmt(scene.camera) << '\n';
  out << "clear " << fmt(scene.clear_color) << '\n';
  out << "maxdepth " << fmt(scene.max_depth) << '\n';
  for (const Primitive& p : scene.primitives) {
    std::visit(
        [&](const auto& s) {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, RoomShell>) {
            out << "room " << fmt(s.min) << ' ' << fmt(s.max);
          } else if constexpr (std::is_same_v<S, Box>) {
            out << "box " << fmt(s.min) << ' ' << fmt(s.max);
          } else if constexpr (std::is_same_v<S, Sphere>) {
            out << "sphere " << fmt(s.center) << ' ' << fmt(s.radius);
          } else {
            out << "tri " << fmt(s.a) << ' ' << fmt(s.b) << ' ' << fmt(s.c);
          }
        },
        p.shape);
    out << " albedo " << fmt(p.albedo) << '\n';
  }
  return out.str();
}

void RoomParams::validate() const {
  auto range_ok = [](double lo, double hi) { return lo > 0.0 && lo <= hi && std::isfinite(hi); };
  if (!range_ok(half_width_min, half_width_max) || !range_ok(half_height_min, half_height_max) ||
      !range_ok(half_depth_min, half_depth_max)) {
    throw ConfigError("room extent ranges need 0 < min <= max");
  }
  if (objects_min < 0 || objects_min > objects_max) throw ConfigError("object count range needs 0 <= min <= max");
  if (!(camera_clearance >= 0.0)) throw ConfigError("camera clearance must be >= 0");
  const double diagonal = std::sqrt(half_width_max * half_width_max + half_height_max * half_height_max +
                                    half_depth_max * half_depth_max);
  if (!(max_depth > 2.0 * diagonal)) throw ConfigError("max depth must exceed the largest room diagonal");
  // Furniture is placed along the walls; it needs room beyond the camera clearance.
  if (objects_max > 0 && std::min(half_width_min, half_depth_min) <= camera_clearance + 0.3) {
    throw ConfigError("room is too small to place furniture outside the camera clearance");
  }
}

namespace {

double quantize_mm(double x) { return std::round(x * 1000.0) / 1000.0; }

double distance_to_box(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  const double dx = std::max({lo.x - p.x, 0.0, p.x - hi.x});
  const double dy = std::max({lo.y - p.y, 0.0, p.y - hi.y});
  const double dz = std::max({lo.z - p.z, 0.0, p.z - hi.z});
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

Scene generate_room(std::uint64_t seed, const RoomParams& params) {
  params.validate();
  Rng rng(hash_counters(seed, 0x524F4F4Du));
  Scene scene;
  scene.camera = {0.0, 0.0, 0.0};
  scene.max_depth = params.max_depth;
  const double hx = quantize_mm(rng.uniform(params.half_width_min, params.half_width_max));
  const double hy = quantize_mm(rng.uniform(params.half_height_min, params.half_height_max));
  const double hz = quantize_mm(rng.uniform(params.half_depth_min, params.half_depth_max));
  auto random_albedo = [&] {
    return Rgb{quantize_mm(rng.uniform(0.2, 0.95)), quantize_mm(rng.uniform(0.2, 0.95)),
               quantize_mm(rng.uniform(0.2, 0.95))};
  };
  scene.primitives.push_back({RoomShell{{-hx, -hy, -hz}, {hx, hy, hz}}, random_albedo()});

  const int count = rng.range(params.objects_min, params.objects_max);
  constexpr int kMaxAttempts = 1000;
  for (int placed = 0; placed < count; ++placed) {
    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
      const bool sphere = rng.uniform() < 0.3;
      if (sphere) {
        const double r = quantize_mm(rng.uniform(0.15, 0.5));
        const Vec3 c{quantize_mm(rng.uniform(-hx + r, hx - r)), quantize_mm(-hy + r),
                     quantize_mm(rng.uniform(-hz + r, hz - r))};
        if (r < hx && r < hz && norm(c - scene.camera) - r >= params.camera_clearance) {
          scene.primitives.push_back({Sphere{c, r}, random_albedo()});
          ok = true;
        }
      } else {
        const double sx = quantize_mm(rng.uniform(0.3, std::min(1.5, hx)));
        const double sz = quantize_mm(rng.uniform(0.3, std::min(1.5, hz)));
        const double sy = quantize_mm(rng.uniform(0.3, 1.6 * hy));
        const double x0 = quantize_mm(rng.uniform(-hx, hx - sx));
        const double z0 = quantize_mm(rng.uniform(-hz, hz - sz));
        const Vec3 lo{x0, -hy, z0};
        const Vec3 hi{x0 + sx, std::min(-hy + sy, hy), z0 + sz};
        if (strictly_ordered(lo, hi) && distance_to_box(scene.camera, lo, hi) >= params.camera_clearance) {
          scene.primitives.push_back({Box{lo, hi}, random_albedo()});
          ok = true;
        }
      }
    }
    if (!ok) throw ConfigError("could not place furniture clear of the camera; relax the room parameters");
  }
  scene.validate();
  return scene;
}

std::optional<Hit> intersect_primitive(const Vec3& origin, const Direction& dir, const Primitive& prim) {
  const Vec3& d = dir.vec();
  return std::visit(
      [&](const auto& s) -> std::optional<Hit> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, RoomShell> || std::is_same_v<S, Box>) {
          const auto r = slab(origin, d, s.min, s.max);
          if (!r) return std::nullopt;
          constexpr bool inward = std::is_same_v<S, RoomShell>;
          if (r->t_near > kRayEpsilon && r->near_axis >= 0) {
            return Hit{r->t_near, axis_normal(r->near_axis, -sign_of(d[r->near_axis])), prim.albedo, -1};
          }
          if (r->t_far > kRayEpsilon && r->far_axis >= 0) {
            const double s_far = sign_of(d[r->far_axis]);
            return Hit{r->t_far, axis_normal(r->far_axis, inward ? -s_far : s_far), prim.albedo, -1};
          }
          return std::nullopt;
        } else if constexpr (std::is_same_v<S, Sphere>) {
          const Vec3 oc = origin - s.center;
          const double b = dot(oc, d);
          const double c = dot(oc, oc) - s.radius * s.radius;
          const double disc = b * b - c;
          if (disc < 0.0) return std::nullopt;
          const double root = std::sqrt(disc);
          double t = -b - root;
          if (!(t > kRayEpsilon)) t = -b + root;
          if (!(t > kRayEpsilon)) return std::nullopt;
          const Vec3 n = (origin + d * t - s.center) * (1.0 / s.radius);
          return Hit{t, n, prim.albedo, -1};
        } else {
          const Vec3 e1 = s.b - s.a;
          const Vec3 e2 = s.c - s.a;
          const Vec3 pv = cross(d, e2);
          const double det = dot(e1, pv);
          if (std::abs(det) < 1e-14) return std::nullopt;
          const double inv = 1.0 / det;
          const Vec3 tv = origin - s.a;
          const double u = dot(tv, pv) * inv;
          if (u < 0.0 || u > 1.0) return std::nullopt;
          const Vec3 qv = cross(tv, e1);
          const double v = dot(d, qv) * inv;
          if (v < 0.0 || u + v > 1.0) return std::nullopt;
          const double t = dot(e2, qv) * inv;
          if (!(t > kRayEpsilon)) return std::nullopt;
          const Vec3 n = cross(e1, e2);
          return Hit{t, n * (1.0 / norm(n)), prim.albedo, -1};
        }
      },
      prim.shape);
}

std::optional<Hit> intersect(const Vec3& origin, const Direction& dir, const Scene& scene) {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    auto hit = intersect_primitive(origin, dir, scene.primitives[i]);
    if (!hit || hit->t > scene.max_depth) continue;
    if (!best || hit->t < best->t) {
      hit->primitive = static_cast<int>(i);
      best = hit;
    }
  }
  return best;
}

Scene rotate_scene_yaw(const Scene& scene, int quarter_turns) {
  Scene out = scene;
  const Vec3 c = scene.camera;
  auto rot = [&](const Vec3& p) { return c + yaw_quarter_turn(p - c, quarter_turns); };
  auto rot_box = [&](const Vec3& lo, const Vec3& hi, Vec3& out_lo, Vec3& out_hi) {
    const Vec3 a = rot(lo), b = rot(hi);
    out_lo = {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
    out_hi = {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
  };
  for (Primitive& p : out.primitives) {
    std::visit(
        [&](auto& s) {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, RoomShell> || std::is_same_v<S, Box>) {
            rot_box(s.min, s.max, s.min, s.max);
          } else if constexpr (std::is_same_v<S, Sphere>) {
            s.center = rot(s.center);
          } else {
            s.a = rot(s.a);
            s.b = rot(s.b);
            s.c = rot(s.c);
          }
        },
        p.shape);
  }
  return out;
}

}  // namespace panodepth
