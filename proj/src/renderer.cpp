#include "panodepth/renderer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "panodepth/image_io.hpp"
#include "panodepth/parallel.hpp"
#include "panodepth/rng.hpp"

namespace panodepth {

RenderTriplet render_panorama(const Scene& scene, const SphereDims& dims, int jobs) {
  scene.validate();
  const int w = dims.width(), h = dims.height();
  RenderTriplet out{ColorImage(w, h, 3), DepthMap(w, h, 1), ValidityMask(w, h, 1)};
  parallel_for(static_cast<std::size_t>(h), jobs, [&](std::size_t row) {
    const int v = static_cast<int>(row);
    for (int u = 0; u < w; ++u) {
      const Direction d = pixel_to_direction(u, v, dims);
      const auto hit = intersect(scene.camera, d, scene);
      if (!hit) {
        out.color.at(u, v, 0) = static_cast<float>(scene.clear_color.r);
        out.color.at(u, v, 1) = static_cast<float>(scene.clear_color.g);
        out.color.at(u, v, 2) = static_cast<float>(scene.clear_color.b);
        out.depth.at(u, v) = static_cast<float>(scene.max_depth);
        out.mask.at(u, v) = 0;
        continue;
      }
      const double shade = std::abs(dot(hit->normal, d.vec())) / (1.0 + hit->t * hit->t);
      out.color.at(u, v, 0) = static_cast<float>(std::clamp(hit->albedo.r * shade, 0.0, 1.0));
      out.color.at(u, v, 1) = static_cast<float>(std::clamp(hit->albedo.g * shade, 0.0, 1.0));
      out.color.at(u, v, 2) = static_cast<float>(std::clamp(hit->albedo.b * shade, 0.0, 1.0));
      out.depth.at(u, v) = static_cast<float>(hit->t);
      out.mask.at(u, v) = 1;
    }
  });
  return out;
}

RenderTriplet yaw_rotate(const RenderTriplet& t, int quarter_turns) {
  return {yaw_rotate(t.color, quarter_turns), yaw_rotate(t.depth, quarter_turns),
          yaw_rotate(t.mask, quarter_turns)};
}

std::string encode_manifest(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& r : manifest.records) {
    out << r.color << ',' << r.depth << ',' << r.mask << ',' << r.scene_id << ',' << r.yaw_k << '\n';
  }
  return out.str();
}

DatasetManifest decode_manifest(std::string_view text) {
  DatasetManifest manifest;
  std::size_t pos = 0;
  int line_no = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kManifestHeader) {
        throw IoError("manifest header must be '" + std::string(kManifestHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.emplace_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 5) {
      throw IoError("manifest line " + std::to_string(line_no) + ": expected 5 fields");
    }
    ManifestRecord r{fields[0], fields[1], fields[2], fields[3], 0};
    auto [ptr, ec] = std::from_chars(fields[4].data(), fields[4].data() + fields[4].size(), r.yaw_k);
    if (ec != std::errc() || ptr != fields[4].data() + fields[4].size() || r.yaw_k < 0 || r.yaw_k > 3) {
      throw IoError("manifest line " + std::to_string(line_no) + ": invalid yaw_k '" + fields[4] + "'");
    }
    manifest.records.push_back(std::move(r));
  }
  if (!header_seen) throw IoError("manifest is empty");
  return manifest;
}

DatasetManifest read_manifest(const std::string& path) {
  try {
    return decode_manifest(read_file(path));
  } catch (const ParseError&) {
    throw;
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

DatasetManifest render_dataset(const std::vector<NamedScene>& scenes, const SphereDims& dims,
                               const std::string& out_dir, int jobs) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
  DatasetManifest manifest;
  for (const auto& named : scenes) {
    const RenderTriplet base = render_panorama(named.scene, dims, jobs);
    for (int k = 0; k < 4; ++k) {
      const RenderTriplet view = k == 0 ? base : yaw_rotate(base, k);
      const std::string stem = named.id + "_k" + std::to_string(k);
      ManifestRecord r{stem + "_color.ppm", stem + "_depth.pfm", stem + "_mask.pgm", named.id, k};
      save_color((fs::path(out_dir) / r.color).string(), view.color);
      save_depth((fs::path(out_dir) / r.depth).string(), view.depth);
      save_mask((fs::path(out_dir) / r.mask).string(), view.mask);
      manifest.records.push_back(std::move(r));
    }
  }
  write_file((fs::path(out_dir) / kManifestName).string(), encode_manifest(manifest));
  return manifest;
}

std::vector<NamedScene> generate_scenes(int count, std::uint64_t seed, const RoomParams& params) {
  std::vector<NamedScene> scenes;
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%04d", i);
    scenes.push_back({id, generate_room(hash_counters(seed, static_cast<std::uint64_t>(i)), params)});
  }
  return scenes;
}

}  // namespace panodepth
