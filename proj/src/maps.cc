#include "pmvs/maps.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "pmvs/error.h"

namespace pmvs {

GeometryMap::GeometryMap(int width, int height)
    : depth_(width, height, 1, 0.0f),
      normal_(width, height, 3, 0.0f),
      valid_(width, height, 1, 0) {}

PlaneHypothesis GeometryMap::at(int x, int y) const {
  return PlaneHypothesis{
      depth_(x, y),
      Eigen::Vector3d(normal_(x, y, 0), normal_(x, y, 1), normal_(x, y, 2))};
}

void GeometryMap::set(int x, int y, const PlaneHypothesis& hyp) {
  depth_(x, y) = static_cast<float>(hyp.depth);
  normal_(x, y, 0) = static_cast<float>(hyp.normal.x());
  normal_(x, y, 1) = static_cast<float>(hyp.normal.y());
  normal_(x, y, 2) = static_cast<float>(hyp.normal.z());
  valid_(x, y) = 1;
}

void GeometryMap::invalidate(int x, int y) {
  depth_(x, y) = 0.0f;
  normal_(x, y, 0) = normal_(x, y, 1) = normal_(x, y, 2) = 0.0f;
  valid_(x, y) = 0;
}

std::size_t GeometryMap::valid_count() const {
  const auto mask = valid_.data();
  return static_cast<std::size_t>(
      std::count_if(mask.begin(), mask.end(), [](auto v) { return v != 0; }));
}

bool bitwise_equal(const GeometryMap& a, const GeometryMap& b) {
  auto same = [](const auto& ga, const auto& gb) {
    return ga.same_shape(gb) &&
           std::memcmp(ga.data().data(), gb.data().data(),
                       ga.data().size_bytes()) == 0;
  };
  if (a.width() != b.width() || a.height() != b.height()) return false;
  if (!same(a.depth_grid(), b.depth_grid()) ||
      !same(a.normal_grid(), b.normal_grid())) {
    return false;
  }
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      if (a.valid(x, y) != b.valid(x, y)) return false;
  return true;
}

const char* to_string(MapKind kind) {
  switch (kind) {
    case MapKind::kGeometry: return "geometry";
    case MapKind::kCoplanarity: return "coplanarity";
    case MapKind::kScore: return "score";
    case MapKind::kVisibility: return "visibility";
    case MapKind::kFeatures: return "features";
    case MapKind::kDepth: return "depth";
  }
  return "unknown";
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

int expected_channels(MapKind kind) {
  switch (kind) {
    case MapKind::kGeometry: return 4;
    case MapKind::kCoplanarity: return kSupportCount;
    case MapKind::kDepth: return 1;
    default: return 0;  // variable
  }
}

void require_kind(const RawMap& raw, MapKind kind) {
  if (raw.kind != kind) {
    throw FormatError(std::string("expected a ") + to_string(kind) +
                          " map, found " + to_string(raw.kind),
                      8);
  }
  const int channels = expected_channels(kind);
  if (channels != 0 && raw.data.channels() != channels) {
    throw FormatError(std::string(to_string(kind)) + " map must have " +
                          std::to_string(channels) + " channels",
                      17);
  }
}

std::size_t payload_offset(std::size_t index) {
  return kMapHeaderSize + index * sizeof(float);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path, 0);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers.
  std::size_t done = 0;
  while (done < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - done, 1u << 30);
    crc = crc32(crc, bytes.data() + done, static_cast<uInt>(chunk));
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t file_crc32(const std::string& path) {
  const auto bytes = read_file(path);
  return crc32_of(bytes);
}

std::vector<std::uint8_t> encode_map(const RawMap& map) {
  const auto& g = map.data;
  std::vector<std::uint8_t> out;
  out.reserve(kMapHeaderSize + g.data().size() * 4 + 4);
  for (char c : kMapMagic) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(static_cast<std::uint8_t>(map.kind));
  put_u32(out, static_cast<std::uint32_t>(g.height()));
  put_u32(out, static_cast<std::uint32_t>(g.width()));
  put_u32(out, static_cast<std::uint32_t>(g.channels()));
  for (float v : g.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  put_u32(out, crc32_of(out));
  return out;
}

RawMap decode_map(std::span<const std::uint8_t> bytes) {
  for (std::size_t i = 0; i < sizeof(kMapMagic); ++i) {
    if (i >= bytes.size()) throw FormatError("truncated magic", bytes.size());
    if (bytes[i] != static_cast<std::uint8_t>(kMapMagic[i])) {
      throw FormatError("bad magic, not a PMVSMAP1 file", i);
    }
  }
  if (bytes.size() < kMapHeaderSize) {
    throw FormatError("truncated header", bytes.size());
  }
  const std::uint8_t kind = bytes[8];
  if (kind < 1 || kind > 6) throw FormatError("unknown map kind", 8);
  const std::uint32_t h = get_u32(bytes, 9);
  const std::uint32_t w = get_u32(bytes, 13);
  const std::uint32_t c = get_u32(bytes, 17);
  if (c == 0) throw FormatError("zero channel count", 17);
  if (h > (1u << 16) || w > (1u << 16) || c > 4096) {
    throw FormatError("implausible map dimensions", 9);
  }
  const std::uint64_t values = std::uint64_t{h} * w * c;
  const std::uint64_t expected = kMapHeaderSize + values * 4 + 4;
  if (bytes.size() < expected) throw FormatError("truncated payload", bytes.size());
  if (bytes.size() > expected) throw FormatError("trailing bytes", expected);
  const std::uint32_t stored_crc = get_u32(bytes, expected - 4);
  if (crc32_of(bytes.first(expected - 4)) != stored_crc) {
    throw FormatError("CRC32 mismatch", expected - 4);
  }

  RawMap raw;
  raw.kind = static_cast<MapKind>(kind);
  raw.data = Grid<float>(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
  auto out = raw.data.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::bit_cast<float>(get_u32(bytes, kMapHeaderSize + 4 * i));
  }
  return raw;
}

void save_raw_map(const std::string& path, const RawMap& map) {
  const auto bytes = encode_map(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path, 0);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path, 0);
}

RawMap load_raw_map(const std::string& path) {
  const auto bytes = read_file(path);
  return decode_map(bytes);
}

RawMap to_raw(const GeometryMap& map) {
  RawMap raw{MapKind::kGeometry, Grid<float>(map.width(), map.height(), 4)};
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      if (!map.valid(x, y)) continue;
      const auto n = map.normal(x, y);
      raw.data(x, y, 0) = map.depth(x, y);
      raw.data(x, y, 1) = n.x();
      raw.data(x, y, 2) = n.y();
      raw.data(x, y, 3) = n.z();
    }
  }
  return raw;
}

RawMap to_raw(const CoplanarityMap& map) {
  return RawMap{MapKind::kCoplanarity, map.weights};
}

RawMap to_raw(const ScoreField& field) {
  const int views = field.visibility.channels();
  RawMap raw{MapKind::kScore,
             Grid<float>(field.score.width(), field.score.height(), 1 + views)};
  for (int y = 0; y < field.score.height(); ++y) {
    for (int x = 0; x < field.score.width(); ++x) {
      raw.data(x, y, 0) = field.score(x, y);
      for (int v = 0; v < views; ++v) raw.data(x, y, 1 + v) = field.visibility(x, y, v);
    }
  }
  return raw;
}

GeometryMap geometry_from_raw(const RawMap& raw) {
  require_kind(raw, MapKind::kGeometry);
  const auto& g = raw.data;
  GeometryMap map(g.width(), g.height());
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      const float d = g(x, y, 0);
      for (int c = 0; c < 4; ++c) {
        if (!std::isfinite(g(x, y, c))) {
          throw FormatError("non-finite geometry value",
                            payload_offset(g.index(x, y, c)));
        }
      }
      if (d < 0.0f) {
        throw FormatError("negative depth", payload_offset(g.index(x, y)));
      }
      if (d > 0.0f) {
        map.set(x, y, PlaneHypothesis{d, Eigen::Vector3d(g(x, y, 1), g(x, y, 2), g(x, y, 3))});
      }
    }
  }
  return map;
}

CoplanarityMap coplanarity_from_raw(const RawMap& raw) {
  require_kind(raw, MapKind::kCoplanarity);
  const auto values = raw.data.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0.0f && values[i] <= 1.0f)) {
      throw FormatError("coplanarity weight outside [0, 1]",
                        payload_offset(i));
    }
  }
  CoplanarityMap map;
  map.weights = raw.data;
  return map;
}

ScoreField score_from_raw(const RawMap& raw) {
  require_kind(raw, MapKind::kScore);
  const auto& g = raw.data;
  if (g.channels() < 2) throw FormatError("score map needs >= 2 channels", 17);
  ScoreField field(g.width(), g.height(), g.channels() - 1);
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      field.score(x, y) = g(x, y, 0);
      for (int v = 0; v + 1 < g.channels(); ++v) field.visibility(x, y, v) = g(x, y, 1 + v);
    }
  }
  return field;
}

void save_map(const std::string& path, const GeometryMap& map) {
  save_raw_map(path, to_raw(map));
}
void save_map(const std::string& path, const CoplanarityMap& map) {
  save_raw_map(path, to_raw(map));
}
void save_map(const std::string& path, const ScoreField& field) {
  save_raw_map(path, to_raw(field));
}
GeometryMap load_geometry_map(const std::string& path) {
  return geometry_from_raw(load_raw_map(path));
}
CoplanarityMap load_coplanarity_map(const std::string& path) {
  return coplanarity_from_raw(load_raw_map(path));
}
ScoreField load_score_field(const std::string& path) {
  return score_from_raw(load_raw_map(path));
}

GeometryMap upsample_nearest(const GeometryMap& map, const CameraView& source,
                             const CameraView& target) {
  GeometryMap out(target.width(), target.height());
  if (map.width() == 0 || map.height() == 0) return out;
  for (int y = 0; y < target.height(); ++y) {
    const int sy = std::min(y / 2, map.height() - 1);
    for (int x = 0; x < target.width(); ++x) {
      const int sx = std::min(x / 2, map.width() - 1);
      if (!map.valid(sx, sy)) continue;
      // The source pixel centre seen through the target camera.
      const Eigen::Vector3d h = target.K() * source.ray(pixel_center(sx, sy));
      const Pixel anchor(h.x() / h.z(), h.y() / h.z());
      const Pixel center = pixel_center(x, y);
      const auto moved = propagate_hypothesis(anchor, center, map.at(sx, sy), target);
      if (moved.ok() && faces_camera(target, center, moved.value.normal)) {
        out.set(x, y, moved.value);
      }
    }
  }
  return out;
}

Grid<float> median_upsample(const Grid<float>& depth, int target_width,
                            int target_height) {
  Grid<float> nearest(target_width, target_height, 1, 0.0f);
  if (depth.empty()) return nearest;
  for (int y = 0; y < target_height; ++y) {
    const int sy = std::min(static_cast<int>(static_cast<long>(y) * depth.height() / target_height),
                            depth.height() - 1);
    for (int x = 0; x < target_width; ++x) {
      const int sx = std::min(static_cast<int>(static_cast<long>(x) * depth.width() / target_width),
                              depth.width() - 1);
      nearest(x, y) = depth(sx, sy);
    }
  }

  constexpr int kRadius = 2;
  Grid<float> out(target_width, target_height, 1, 0.0f);
  std::vector<float> window;
  window.reserve(25);
  for (int y = 0; y < target_height; ++y) {
    for (int x = 0; x < target_width; ++x) {
      if (!(nearest(x, y) > 0.0f)) continue;
      window.clear();
      for (int dy = -kRadius; dy <= kRadius; ++dy) {
        for (int dx = -kRadius; dx <= kRadius; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nearest.in_bounds(nx, ny) && nearest(nx, ny) > 0.0f) {
            window.push_back(nearest(nx, ny));
          }
        }
      }
      const auto mid = window.begin() + (window.size() - 1) / 2;
      std::nth_element(window.begin(), mid, window.end());
      out(x, y) = *mid;
    }
  }
  return out;
}

}  // namespace pmvs
