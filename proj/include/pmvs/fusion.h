#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pmvs/geometry.h"
#include "pmvs/maps.h"

namespace pmvs {

struct FusedPoint {
  Eigen::Vector3f position;
  Eigen::Vector3f normal;
  std::uint8_t support = 0;  // number of consistent source views
  int view = -1;             // reference view index
  int x = 0, y = 0;          // reference pixel
  std::uint64_t support_mask = 0;  // bit i = fusion view i agreed
};

struct FusedCloud {
  std::vector<FusedPoint> points;
  std::size_t size() const { return points.size(); }
};

struct FusionThresholds {
  double relative_depth = 0.01;
  double reprojection_px = 2.0;
  double normal_deg = 10.0;
  int min_consistent = 2;
};

// One view prepared for fusion: full-resolution camera and geometry, plus
// the indices of the views it is checked against.
struct FusionView {
  CameraView camera;
  GeometryMap geometry;
  std::vector<int> sources;
};

// Median-upsamples an engine map onto the full-resolution camera. Normals are
// copied from the nearest source pixel.
GeometryMap prepare_fusion_map(const GeometryMap& map,
                               const CameraView& full_camera);

struct ConsistencyCheck {
  double relative_depth = 0.0;
  double reprojection = 0.0;
  double normal_angle_deg = 0.0;
  bool depth_ok = false;
  bool reprojection_ok = false;
  bool normal_ok = false;
  bool consistent() const { return depth_ok && reprojection_ok && normal_ok; }
  int src_x = 0, src_y = 0;  // nearest source pixel
};

// The three strict tests for reference pixel (x, y) against one source view.
// nullopt when the point leaves the source view or hits an invalid pixel.
std::optional<ConsistencyCheck> check_consistency(const FusionView& ref,
                                                  int x, int y,
                                                  const FusionView& src,
                                                  const FusionThresholds& t);

// Throws FusionInputError when a geometry map does not match its camera or a
// source index is out of range.
FusedCloud fuse(std::span<const FusionView> views,
                const FusionThresholds& thresholds, int threads = 1);

// Binary little-endian PLY: x y z nx ny nz (float) and support (uchar).
void write_ply(const std::string& path, const FusedCloud& cloud);
std::vector<std::uint8_t> encode_ply(const FusedCloud& cloud);
// Reads binary little-endian or ASCII PLY vertices; normals and support are
// optional.
FusedCloud read_ply(const std::string& path);

std::vector<Eigen::Vector3d> positions(const FusedCloud& cloud);

}  // namespace pmvs
