#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "panodepth/geometry.hpp"
#include "panodepth/image.hpp"
#include "panodepth/scene.hpp"

namespace panodepth {

// color RGB in [0, 1]; depth is the hit radius in meters; mask is 1 on hits.
// Miss pixels carry the clear color, depth == max_depth and mask == 0.
struct RenderTriplet {
  ColorImage color;
  DepthMap depth;
  ValidityMask mask;
};

// One primary ray per pixel from the camera; shading albedo * |n.d| / (1 + t^2)
// for a point light at the camera. Row-parallel over `jobs` workers with
// worker-independent output.
RenderTriplet render_panorama(const Scene& scene, const SphereDims& dims, int jobs = 1);

RenderTriplet yaw_rotate(const RenderTriplet& triplet, int quarter_turns);

struct ManifestRecord {
  std::string color;  // paths relative to the manifest directory
  std::string depth;
  std::string mask;
  std::string scene_id;
  int yaw_k = 0;
  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
};

inline constexpr const char* kManifestHeader = "color,depth,mask,scene_id,yaw_k";
inline constexpr const char* kManifestName = "manifest.csv";

std::string encode_manifest(const DatasetManifest& manifest);
DatasetManifest decode_manifest(std::string_view text);
DatasetManifest read_manifest(const std::string& path);

struct NamedScene {
  std::string id;
  Scene scene;
};

// Renders every scene once, writes the four yaw rotations (exact column shifts)
// of color/depth/mask into out_dir and writes out_dir/manifest.csv.
DatasetManifest render_dataset(const std::vector<NamedScene>& scenes, const SphereDims& dims,
                               const std::string& out_dir, int jobs = 1);

// Scenes generated from per-scene seeds derived from `seed`.
std::vector<NamedScene> generate_scenes(int count, std::uint64_t seed, const RoomParams& params = {});

}  // namespace panodepth
