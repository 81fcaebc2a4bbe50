#include "pmvs/fusion.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "pmvs/error.h"

namespace pmvs {

GeometryMap prepare_fusion_map(const GeometryMap& map,
                               const CameraView& full_camera) {
  const int tw = full_camera.width(), th = full_camera.height();
  const Grid<float> depth = median_upsample(map.depth_grid(), tw, th);
  GeometryMap out(tw, th);
  for (int y = 0; y < th; ++y) {
    const int sy = static_cast<int>(static_cast<long>(y) * map.height() / th);
    for (int x = 0; x < tw; ++x) {
      const int sx = static_cast<int>(static_cast<long>(x) * map.width() / tw);
      if (!(depth(x, y) > 0.0f) || !map.valid(sx, sy)) continue;
      PlaneHypothesis hyp;
      hyp.depth = depth(x, y);
      hyp.normal = map.at(sx, sy).normal;
      out.set(x, y, hyp);
    }
  }
  return out;
}

std::optional<ConsistencyCheck> check_consistency(const FusionView& ref,
                                                  int x, int y,
                                                  const FusionView& src,
                                                  const FusionThresholds& t) {
  if (!ref.geometry.valid(x, y)) return std::nullopt;
  const Pixel p = pixel_center(x, y);
  const PlaneHypothesis hyp = ref.geometry.at(x, y);
  const Eigen::Vector3d world = unproject(ref.camera, p, hyp);
  const Eigen::Vector3d in_src = src.camera.to_camera(world);
  const auto projected = src.camera.project_camera(in_src);
  if (!projected || !src.camera.contains(*projected)) return std::nullopt;
  const int qx = static_cast<int>(std::floor(projected->x()));
  const int qy = static_cast<int>(std::floor(projected->y()));
  if (!src.geometry.in_bounds(qx, qy) || !src.geometry.valid(qx, qy)) return std::nullopt;

  const auto reproj = reprojection_error(ref.camera, src.camera, p, hyp, src.geometry);
  if (!reproj.ok()) return std::nullopt;

  ConsistencyCheck check;
  check.src_x = qx;
  check.src_y = qy;
  // Stored source plane evaluated at the projected position.
  const auto at_q = propagate_hypothesis(pixel_center(qx, qy), *projected, src.geometry.at(qx, qy),
                                         src.camera);
  if (!at_q.ok()) return std::nullopt;
  const double stored = at_q.value.depth;
  check.relative_depth = std::abs(in_src.z() - stored) / stored;
  check.reprojection = reproj.value;
  const Eigen::Vector3d n_ref = ref.camera.R().transpose() * hyp.normal;
  const Eigen::Vector3d n_src = src.camera.R().transpose() * src.geometry.at(qx, qy).normal;
  const double cosine = std::clamp(n_ref.dot(n_src) / (n_ref.norm() * n_src.norm()), -1.0, 1.0);
  check.normal_angle_deg = std::acos(cosine) * 180.0 / std::numbers::pi;
  check.depth_ok = check.relative_depth < t.relative_depth;
  check.reprojection_ok = check.reprojection < t.reprojection_px;
  check.normal_ok = check.normal_angle_deg < t.normal_deg;
  return check;
}

FusedCloud fuse(std::span<const FusionView> views,
                const FusionThresholds& thresholds, int threads) {
  const int n = static_cast<int>(views.size());
  if (n > 64) throw FusionInputError("at most 64 views can be fused");
  for (int i = 0; i < n; ++i) {
    const auto& v = views[i];
    if (v.geometry.width() != v.camera.width() || v.geometry.height() != v.camera.height()) {
      throw FusionInputError("view " + v.camera.id() + ": geometry is " +
                             std::to_string(v.geometry.width()) + "x" +
                             std::to_string(v.geometry.height()) + ", camera is " +
                             std::to_string(v.camera.width()) + "x" +
                             std::to_string(v.camera.height()));
    }
    for (int s : v.sources) {
      if (s < 0 || s >= n || s == i) {
        throw FusionInputError("view " + v.camera.id() + ": bad source index");
      }
    }
  }

  std::vector<Grid<std::uint8_t>> consumed;
  for (const auto& v : views) consumed.emplace_back(v.camera.width(), v.camera.height(), 1, 0);

  FusedCloud cloud;
  for (int r = 0; r < n; ++r) {
    const FusionView& ref = views[r];
    const int w = ref.camera.width(), h = ref.camera.height();
    Grid<std::uint64_t> agree(w, h, 1, 0);
#pragma omp parallel for schedule(static) num_threads(std::max(1, threads))
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (consumed[r](x, y) || !ref.geometry.valid(x, y)) continue;
        std::uint64_t mask = 0;
        for (int s : ref.sources) {
          const auto check = check_consistency(ref, x, y, views[s], thresholds);
          if (check && check->consistent()) mask |= std::uint64_t{1} << s;
        }
        agree(x, y) = mask;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::uint64_t mask = agree(x, y);
        const int support = std::popcount(mask);
        if (support < thresholds.min_consistent || support == 0) continue;
        const PlaneHypothesis hyp = ref.geometry.at(x, y);
        FusedPoint point;
        point.position = unproject(ref.camera, pixel_center(x, y), hyp).cast<float>();
        point.normal = (ref.camera.R().transpose() * hyp.normal).normalized().cast<float>();
        point.support = static_cast<std::uint8_t>(std::min(support, 255));
        point.view = r;
        point.x = x;
        point.y = y;
        point.support_mask = mask;
        cloud.points.push_back(point);
        consumed[r](x, y) = 1;
        for (int s : ref.sources) {
          if (!((mask >> s) & 1u)) continue;
          const auto check = check_consistency(ref, x, y, views[s], thresholds);
          consumed[s](check->src_x, check->src_y) = 1;
        }
      }
    }
  }
  return cloud;
}

namespace {

void put_f32(std::vector<std::uint8_t>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

enum class PlyType { kF32, kF64, kU8, kI8, kU16, kI16, kU32, kI32 };

PlyType ply_type(const std::string& name) {
  if (name == "float" || name == "float32") return PlyType::kF32;
  if (name == "double" || name == "float64") return PlyType::kF64;
  if (name == "uchar" || name == "uint8") return PlyType::kU8;
  if (name == "char" || name == "int8") return PlyType::kI8;
  if (name == "ushort" || name == "uint16") return PlyType::kU16;
  if (name == "short" || name == "int16") return PlyType::kI16;
  if (name == "uint" || name == "uint32") return PlyType::kU32;
  if (name == "int" || name == "int32") return PlyType::kI32;
  throw FormatError("unsupported PLY property type " + name, 0);
}

int ply_size(PlyType t) {
  switch (t) {
    case PlyType::kU8: case PlyType::kI8: return 1;
    case PlyType::kU16: case PlyType::kI16: return 2;
    case PlyType::kF64: return 8;
    default: return 4;
  }
}

double read_binary(const std::uint8_t* p, PlyType t) {
  std::uint64_t bits = 0;
  for (int i = 0; i < ply_size(t); ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  switch (t) {
    case PlyType::kF32: return std::bit_cast<float>(static_cast<std::uint32_t>(bits));
    case PlyType::kF64: return std::bit_cast<double>(bits);
    case PlyType::kU8: return static_cast<std::uint8_t>(bits);
    case PlyType::kI8: return static_cast<std::int8_t>(bits);
    case PlyType::kU16: return static_cast<std::uint16_t>(bits);
    case PlyType::kI16: return static_cast<std::int16_t>(bits);
    case PlyType::kU32: return static_cast<std::uint32_t>(bits);
    case PlyType::kI32: return static_cast<std::int32_t>(bits);
  }
  return 0.0;
}

}  // namespace

std::vector<std::uint8_t> encode_ply(const FusedCloud& cloud) {
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size()
         << "\nproperty float x\nproperty float y\nproperty float z\n"
            "property float nx\nproperty float ny\nproperty float nz\n"
            "property uchar support\nend_header\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.reserve(out.size() + cloud.size() * 25);
  for (const auto& p : cloud.points) {
    for (int i = 0; i < 3; ++i) put_f32(out, p.position[i]);
    for (int i = 0; i < 3; ++i) put_f32(out, p.normal[i]);
    out.push_back(p.support);
  }
  return out;
}

void write_ply(const std::string& path, const FusedCloud& cloud) {
  const auto bytes = encode_ply(cloud);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path, 0);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path, 0);
}

FusedCloud read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path, 0);
  const std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  const std::string marker = "end_header\n";
  const auto it = std::search(bytes.begin(), bytes.end(), marker.begin(), marker.end());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "ply\n", 4) != 0 || it == bytes.end()) {
    throw FormatError("not a PLY file: " + path, 0);
  }
  const std::size_t body = static_cast<std::size_t>(it - bytes.begin()) + marker.size();
  std::istringstream header(std::string(bytes.begin(), it));

  bool binary = false, in_vertex = false, seen_vertex = false;
  std::size_t count = 0;
  std::vector<std::pair<std::string, PlyType>> props;
  std::string line;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string kind;
      ls >> kind;
      if (kind == "binary_little_endian") binary = true;
      else if (kind != "ascii") throw FormatError("unsupported PLY format " + kind, 0);
    } else if (word == "element") {
      std::string name;
      ls >> name;
      if (seen_vertex) break;  // later elements are ignored
      if (name != "vertex") throw FormatError("PLY vertex element must come first", 0);
      ls >> count;
      in_vertex = seen_vertex = true;
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ls >> type;
      if (type == "list") throw FormatError("list properties on vertices are not supported", 0);
      ls >> name;
      props.emplace_back(name, ply_type(type));
    }
  }
  auto index_of = [&](const char* name) {
    for (std::size_t i = 0; i < props.size(); ++i) {
      if (props[i].first == name) return static_cast<int>(i);
    }
    return -1;
  };
  const int ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
  const int inx = index_of("nx"), iny = index_of("ny"), inz = index_of("nz");
  const int isup = index_of("support");
  if (ix < 0 || iy < 0 || iz < 0) throw FormatError("PLY vertices lack x/y/z", 0);

  FusedCloud cloud;
  cloud.points.resize(count);
  std::vector<double> values(props.size());
  std::size_t pos = body;
  std::istringstream ascii(binary ? std::string() : std::string(bytes.begin() + body, bytes.end()));
  for (std::size_t v = 0; v < count; ++v) {
    for (std::size_t k = 0; k < props.size(); ++k) {
      if (binary) {
        const int size = ply_size(props[k].second);
        if (pos + size > bytes.size()) throw FormatError("truncated PLY body", pos);
        values[k] = read_binary(bytes.data() + pos, props[k].second);
        pos += size;
      } else if (!(ascii >> values[k])) {
        throw FormatError("truncated ASCII PLY body", body);
      }
    }
    auto& p = cloud.points[v];
    p.position = Eigen::Vector3d(values[ix], values[iy], values[iz]).cast<float>();
    if (inx >= 0 && iny >= 0 && inz >= 0) {
      p.normal = Eigen::Vector3d(values[inx], values[iny], values[inz]).cast<float>();
    } else {
      p.normal.setZero();
    }
    p.support = isup >= 0 ? static_cast<std::uint8_t>(values[isup]) : 0;
  }
  return cloud;
}

std::vector<Eigen::Vector3d> positions(const FusedCloud& cloud) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points) out.push_back(p.position.cast<double>());
  return out;
}

}  // namespace pmvs
