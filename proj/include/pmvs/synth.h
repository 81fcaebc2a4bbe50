#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pmvs/geometry.h"
#include "pmvs/grid.h"
#include "pmvs/image_io.h"
#include "pmvs/maps.h"

namespace pmvs {

enum class TextureKind { kChecker, kNoise, kFlat };

struct Texture {
  TextureKind kind = TextureKind::kNoise;
  double scale = 1.0;  // checker period or noise base frequency (world units)
  int octaves = 3;
  double value = 0.5;  // flat intensity
  std::uint64_t seed = 0;

  // Intensity in [0, 1] at texture coordinates (u, v).
  double sample(double u, double v) const;
};

// Rectangle in texture coordinates rendered with a constant intensity.
struct FlatRegion {
  double u0 = 0.0, v0 = 0.0, u1 = 0.0, v1 = 0.0;
  double value = 0.5;
};

// Infinite plane n . X = offset, textured in an in-plane (u, v) frame.
struct ScenePlane {
  Eigen::Vector3d point;
  Eigen::Vector3d normal;
  Texture texture;
  std::optional<FlatRegion> flat;
};

struct SceneBox {
  Eigen::Vector3d min;
  Eigen::Vector3d max;
  Texture texture;
};

struct CameraRing {
  int count = 3;
  double radius = 4.0;
  double arc_deg = 30.0;
  double elevation_deg = 0.0;
  double fov_deg = 60.0;
  Eigen::Vector3d look_at = Eigen::Vector3d::Zero();
};

struct SynthScene {
  std::vector<ScenePlane> planes;
  std::vector<SceneBox> boxes;
  CameraRing ring;
  int width = 192;
  int height = 144;
  double noise_sigma = 0.0;
  int supersample = 3;
  std::uint64_t seed = 0;
  // Extra `key = value` lines copied into the emitted reconstruction config.
  std::vector<std::pair<std::string, std::string>> pipeline;
};

// Parses the synthetic scene text format. Relative paths are not used.
SynthScene parse_synth_scene(const std::string& text);
SynthScene read_synth_scene(const std::string& path);

// First surface hit along a world ray.
struct RayHit {
  double t = 0.0;
  Eigen::Vector3d point;
  Eigen::Vector3d normal;  // world frame, facing the ray origin
  double intensity = 0.0;
};

std::optional<RayHit> cast_ray(const SynthScene& scene,
                               const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& direction);

// Cameras on the ring; world y points down. Throws SceneError when a camera
// centre lies inside a box or on a plane.
std::vector<CameraView> ring_cameras(const SynthScene& scene);

// Supersampled, noisy, 8-bit quantised grayscale render.
Image render_view(const SynthScene& scene, const CameraView& camera,
                  std::uint64_t noise_seed);

// Analytic depth and camera-frame normal of the first hit at every pixel
// centre; pixels that miss all geometry are invalid.
GeometryMap render_ground_truth(const SynthScene& scene,
                                const CameraView& camera);

// 1 where the ground-truth point of `ref` is the first surface hit seen from
// `src` and projects inside it.
Grid<std::uint8_t> visibility_mask(const SynthScene& scene,
                                   const CameraView& ref,
                                   const GeometryMap& ref_gt,
                                   const CameraView& src);

// Writes images/, cameras/, gt/ and scene.cfg under `out_dir`. Returns the
// generated cameras.
std::vector<CameraView> write_synth_dataset(const SynthScene& scene,
                                            const std::string& out_dir);

}  // namespace pmvs
