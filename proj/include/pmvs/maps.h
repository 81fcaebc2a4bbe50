#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pmvs/geometry.h"
#include "pmvs/grid.h"

namespace pmvs {

// Per-pixel plane hypotheses plus a validity mask. Values are stored as
// floats; invalid pixels hold zeros and must be checked through valid().
class GeometryMap {
 public:
  GeometryMap() = default;
  GeometryMap(int width, int height);

  int width() const { return depth_.width(); }
  int height() const { return depth_.height(); }
  bool in_bounds(int x, int y) const { return depth_.in_bounds(x, y); }

  bool valid(int x, int y) const { return valid_(x, y) != 0; }
  PlaneHypothesis at(int x, int y) const;
  float depth(int x, int y) const { return depth_(x, y); }
  Eigen::Vector3f normal(int x, int y) const {
    return {normal_(x, y, 0), normal_(x, y, 1), normal_(x, y, 2)};
  }

  void set(int x, int y, const PlaneHypothesis& hyp);
  void invalidate(int x, int y);

  std::size_t valid_count() const;

  const Grid<float>& depth_grid() const { return depth_; }
  const Grid<float>& normal_grid() const { return normal_; }

  friend bool operator==(const GeometryMap&, const GeometryMap&) = default;

 private:
  Grid<float> depth_;
  Grid<float> normal_{0, 0, 3};
  Grid<std::uint8_t> valid_;
};

// Byte-level equality, distinguishes -0.0 from 0.0 and compares NaN payloads.
bool bitwise_equal(const GeometryMap& a, const GeometryMap& b);

// Offsets of the 3x3 supporting pixels dilated by 3, row-major; index 4 is
// the centre.
inline constexpr int kSupportCount = 9;
inline constexpr int kSupportCenter = 4;
inline constexpr int kSupportDilation = 3;
inline Eigen::Vector2i support_offset(int k) {
  return {(k % 3 - 1) * kSupportDilation, (k / 3 - 1) * kSupportDilation};
}

// H x W x 9 supporting-pixel weights in [0, 1], centre weight 1.
struct CoplanarityMap {
  Grid<float> weights{0, 0, kSupportCount};

  CoplanarityMap() = default;
  CoplanarityMap(int width, int height)
      : weights(width, height, kSupportCount, 1.0f) {}
  int width() const { return weights.width(); }
  int height() const { return weights.height(); }
};

// Per-pixel selected score plus per-source-view visibility weights.
struct ScoreField {
  Grid<float> score;
  Grid<float> visibility;

  ScoreField() = default;
  ScoreField(int width, int height, int views)
      : score(width, height, 1, 0.0f),
        visibility(width, height, views < 1 ? 1 : views, 0.0f) {}
  int views() const { return visibility.channels(); }
};

// PMVSMAP1 container: magic, u8 kind, u32 H, u32 W, u32 channels,
// little-endian f32 row-major payload, trailing CRC32 of all prior bytes.
enum class MapKind : std::uint8_t {
  kGeometry = 1,
  kCoplanarity = 2,
  kScore = 3,
  kVisibility = 4,
  kFeatures = 5,
  kDepth = 6,
};

const char* to_string(MapKind kind);

struct RawMap {
  MapKind kind = MapKind::kDepth;
  Grid<float> data;
};

inline constexpr char kMapMagic[8] = {'P', 'M', 'V', 'S', 'M', 'A', 'P', '1'};
inline constexpr std::size_t kMapHeaderSize = 8 + 1 + 4 + 4 + 4;

std::vector<std::uint8_t> encode_map(const RawMap& map);
// Throws FormatError with the offending byte offset.
RawMap decode_map(std::span<const std::uint8_t> bytes);

void save_raw_map(const std::string& path, const RawMap& map);
RawMap load_raw_map(const std::string& path);

RawMap to_raw(const GeometryMap& map);
RawMap to_raw(const CoplanarityMap& map);
RawMap to_raw(const ScoreField& field);
GeometryMap geometry_from_raw(const RawMap& raw);
CoplanarityMap coplanarity_from_raw(const RawMap& raw);
ScoreField score_from_raw(const RawMap& raw);

void save_map(const std::string& path, const GeometryMap& map);
void save_map(const std::string& path, const CoplanarityMap& map);
void save_map(const std::string& path, const ScoreField& field);
GeometryMap load_geometry_map(const std::string& path);
CoplanarityMap load_coplanarity_map(const std::string& path);
ScoreField load_score_field(const std::string& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);
std::uint32_t file_crc32(const std::string& path);

// Nearest-neighbour upsampling onto `target`'s pixel grid. Normals are copied
// from the floor-half source pixel; depth is re-intersected with the new
// pixel's ray so the plane is preserved.
GeometryMap upsample_nearest(const GeometryMap& map, const CameraView& source,
                             const CameraView& target);

// Nearest-neighbour upsampling of a depth grid (0 = invalid) followed by a
// 5x5 median over valid pixels. Invalid pixels stay invalid.
Grid<float> median_upsample(const Grid<float>& depth, int target_width,
                            int target_height);

}  // namespace pmvs
