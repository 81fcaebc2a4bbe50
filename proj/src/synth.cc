#include "pmvs/synth.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "pmvs/config_text.h"
#include "pmvs/error.h"
#include "pmvs/fusion.h"

namespace pmvs {

namespace {

constexpr double kHitEpsilon = 1e-9;

std::uint64_t hash64(std::uint64_t h, std::uint64_t v) {
  std::uint64_t z = h ^ (v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double lattice(std::int64_t ix, std::int64_t iy, int octave, std::uint64_t seed) {
  std::uint64_t h = hash64(seed, static_cast<std::uint64_t>(octave));
  h = hash64(h, static_cast<std::uint64_t>(ix));
  h = hash64(h, static_cast<std::uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(double u, double v, int octave, std::uint64_t seed) {
  const double fu = std::floor(u), fv = std::floor(v);
  const auto iu = static_cast<std::int64_t>(fu), iv = static_cast<std::int64_t>(fv);
  const double su = smooth(u - fu), sv = smooth(v - fv);
  const double a = lattice(iu, iv, octave, seed), b = lattice(iu + 1, iv, octave, seed);
  const double c = lattice(iu, iv + 1, octave, seed), d = lattice(iu + 1, iv + 1, octave, seed);
  const double top = a + su * (b - a);
  const double bottom = c + su * (d - c);
  return top + sv * (bottom - top);
}

// In-plane frame for texture coordinates.
void plane_axes(const Eigen::Vector3d& n, Eigen::Vector3d& u, Eigen::Vector3d& v) {
  const Eigen::Vector3d helper = std::abs(n.y()) < 0.9 ? Eigen::Vector3d::UnitY()
                                                       : Eigen::Vector3d::UnitX();
  u = n.cross(helper).normalized();
  v = n.cross(u);
}

Texture parse_texture(const std::vector<std::string>& words, std::size_t first,
                      const std::string& what) {
  Texture tex;
  if (words.size() <= first) throw ConfigError(what + ": missing texture");
  const std::string& kind = words[first];
  auto arg = [&](std::size_t i, double fallback) {
    return words.size() > first + i ? to_double(words[first + i], what) : fallback;
  };
  if (kind == "noise") {
    tex.kind = TextureKind::kNoise;
    tex.scale = arg(1, 4.0);
    tex.octaves = static_cast<int>(arg(2, 3.0));
  } else if (kind == "checker") {
    tex.kind = TextureKind::kChecker;
    tex.scale = arg(1, 0.25);
  } else if (kind == "flat") {
    tex.kind = TextureKind::kFlat;
    tex.value = arg(1, 0.5);
  } else {
    throw ConfigError(what + ": unknown texture '" + kind + "'");
  }
  if (!(tex.scale > 0.0) || tex.octaves < 1) throw ConfigError(what + ": bad texture parameters");
  return tex;
}

std::optional<double> intersect_plane(const ScenePlane& plane, const Eigen::Vector3d& o,
                                      const Eigen::Vector3d& d) {
  const double denom = plane.normal.dot(d);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const double t = plane.normal.dot(plane.point - o) / denom;
  if (!(t > kHitEpsilon)) return std::nullopt;
  return t;
}

std::optional<double> intersect_box(const SceneBox& box, const Eigen::Vector3d& o,
                                    const Eigen::Vector3d& d, int& axis) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int near_axis = 0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < box.min[a] || o[a] > box.max[a]) return std::nullopt;
      continue;
    }
    double t1 = (box.min[a] - o[a]) / d[a];
    double t2 = (box.max[a] - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > t_near) {
      t_near = t1;
      near_axis = a;
    }
    t_far = std::min(t_far, t2);
  }
  if (t_near > t_far || !(t_near > kHitEpsilon)) return std::nullopt;
  axis = near_axis;
  return t_near;
}

double box_intensity(const SceneBox& box, const Eigen::Vector3d& p, int axis) {
  const int a = (axis + 1) % 3, b = (axis + 2) % 3;
  // Offset each face so opposite faces do not share a pattern.
  return box.texture.sample(p[a] + 17.0 * axis, p[b]);
}

double plane_intensity(const ScenePlane& plane, const Eigen::Vector3d& p) {
  Eigen::Vector3d u, v;
  plane_axes(plane.normal, u, v);
  const double tu = (p - plane.point).dot(u);
  const double tv = (p - plane.point).dot(v);
  if (plane.flat && tu >= plane.flat->u0 && tu <= plane.flat->u1 &&
      tv >= plane.flat->v0 && tv <= plane.flat->v1) {
    return plane.flat->value;
  }
  return plane.texture.sample(tu, tv);
}

Eigen::Vector3d world_direction(const CameraView& camera, const Pixel& p) {
  return camera.R().transpose() * camera.ray(p);
}

}  // namespace

double Texture::sample(double u, double v) const {
  switch (kind) {
    case TextureKind::kFlat:
      return value;
    case TextureKind::kChecker: {
      const auto cu = static_cast<std::int64_t>(std::floor(u / scale));
      const auto cv = static_cast<std::int64_t>(std::floor(v / scale));
      return ((cu + cv) & 1) ? 0.75 : 0.25;
    }
    case TextureKind::kNoise: {
      double sum = 0.0, norm = 0.0, amp = 1.0, freq = scale;
      for (int o = 0; o < octaves; ++o) {
        sum += amp * value_noise(u * freq, v * freq, o, seed);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
      }
      return std::clamp(0.5 + 1.6 * (sum / norm - 0.5), 0.05, 0.95);
    }
  }
  return 0.0;
}

SynthScene parse_synth_scene(const std::string& text) {
  SynthScene scene;
  for (const auto& e : parse_key_values(text)) {
    const std::string what = "scene line " + std::to_string(e.line);
    const auto words = split_words(e.value);
    if (words.empty()) throw ConfigError(what + ": empty value");
    if (e.key == "width") scene.width = static_cast<int>(to_integer(words[0], what));
    else if (e.key == "height") scene.height = static_cast<int>(to_integer(words[0], what));
    else if (e.key == "noise") scene.noise_sigma = to_double(words[0], what);
    else if (e.key == "seed") scene.seed = static_cast<std::uint64_t>(to_integer(words[0], what));
    else if (e.key == "supersample") scene.supersample = static_cast<int>(to_integer(words[0], what));
    else if (e.key == "ring.count") scene.ring.count = static_cast<int>(to_integer(words[0], what));
    else if (e.key == "ring.radius") scene.ring.radius = to_double(words[0], what);
    else if (e.key == "ring.arc_deg") scene.ring.arc_deg = to_double(words[0], what);
    else if (e.key == "ring.elevation_deg") scene.ring.elevation_deg = to_double(words[0], what);
    else if (e.key == "ring.fov_deg") scene.ring.fov_deg = to_double(words[0], what);
    else if (e.key == "ring.look_at") scene.ring.look_at = to_vector3(words, 0, what);
    else if (e.key == "plane") {
      ScenePlane plane;
      plane.point = to_vector3(words, 0, what);
      plane.normal = to_vector3(words, 3, what);
      if (!(plane.normal.norm() > 0.0)) throw ConfigError(what + ": zero plane normal");
      plane.normal.normalize();
      plane.texture = parse_texture(words, 6, what);
      plane.texture.seed = hash64(scene.seed, 1000 + scene.planes.size());
      scene.planes.push_back(plane);
    } else if (e.key == "flat") {
      if (scene.planes.empty()) throw ConfigError(what + ": 'flat' needs a preceding plane");
      if (words.size() < 4) throw ConfigError(what + ": flat needs u0 v0 u1 v1 [value]");
      FlatRegion f;
      f.u0 = to_double(words[0], what);
      f.v0 = to_double(words[1], what);
      f.u1 = to_double(words[2], what);
      f.v1 = to_double(words[3], what);
      if (words.size() > 4) f.value = to_double(words[4], what);
      scene.planes.back().flat = f;
    } else if (e.key == "box") {
      SceneBox box;
      box.min = to_vector3(words, 0, what);
      box.max = to_vector3(words, 3, what);
      if (!(box.min.array() < box.max.array()).all()) throw ConfigError(what + ": empty box");
      box.texture = parse_texture(words, 6, what);
      box.texture.seed = hash64(scene.seed, 2000 + scene.boxes.size());
      scene.boxes.push_back(box);
    } else if (e.key.rfind("pipeline.", 0) == 0) {
      scene.pipeline.emplace_back(e.key.substr(9), e.value);
    } else {
      throw ConfigError(what + ": unknown key '" + e.key + "'");
    }
  }
  if (scene.width < 8 || scene.height < 8) throw ConfigError("scene image size too small");
  if (scene.ring.count < 1) throw ConfigError("scene needs at least one camera");
  if (scene.supersample < 1) throw ConfigError("supersample must be positive");
  if (!(scene.ring.fov_deg > 0.0 && scene.ring.fov_deg < 180.0)) throw ConfigError("bad field of view");
  if (scene.noise_sigma < 0.0) throw ConfigError("noise must be non-negative");
  return scene;
}

SynthScene read_synth_scene(const std::string& path) {
  return parse_synth_scene(read_text_file(path));
}

std::optional<RayHit> cast_ray(const SynthScene& scene, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& direction) {
  std::optional<RayHit> best;
  for (const auto& plane : scene.planes) {
    const auto t = intersect_plane(plane, origin, direction);
    if (!t || (best && *t >= best->t)) continue;
    RayHit hit;
    hit.t = *t;
    hit.point = origin + *t * direction;
    hit.normal = plane.normal.dot(direction) < 0.0 ? plane.normal : Eigen::Vector3d(-plane.normal);
    hit.intensity = plane_intensity(plane, hit.point);
    best = hit;
  }
  for (const auto& box : scene.boxes) {
    int axis = 0;
    const auto t = intersect_box(box, origin, direction, axis);
    if (!t || (best && *t >= best->t)) continue;
    RayHit hit;
    hit.t = *t;
    hit.point = origin + *t * direction;
    hit.normal = Eigen::Vector3d::Zero();
    hit.normal[axis] = direction[axis] > 0.0 ? -1.0 : 1.0;
    hit.intensity = box_intensity(box, hit.point, axis);
    best = hit;
  }
  return best;
}

std::vector<CameraView> ring_cameras(const SynthScene& scene) {
  const auto& ring = scene.ring;
  const double deg = std::numbers::pi / 180.0;
  const double f = 0.5 * scene.width / std::tan(0.5 * ring.fov_deg * deg);
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = f;
  K(1, 1) = f;
  K(0, 2) = 0.5 * scene.width;
  K(1, 2) = 0.5 * scene.height;
  const double elevation = ring.elevation_deg * deg;
  std::vector<CameraView> cameras;
  for (int i = 0; i < ring.count; ++i) {
    const double phi = ring.count == 1
                           ? 0.0
                           : (-0.5 * ring.arc_deg + ring.arc_deg * i / (ring.count - 1)) * deg;
    const Eigen::Vector3d forward(std::sin(phi) * std::cos(elevation), std::sin(elevation),
                                  std::cos(phi) * std::cos(elevation));
    const Eigen::Vector3d center = ring.look_at - ring.radius * forward;
    for (const auto& box : scene.boxes) {
      if ((center.array() >= box.min.array()).all() && (center.array() <= box.max.array()).all()) {
        throw SceneError("camera " + std::to_string(i) + " lies inside a box");
      }
    }
    for (const auto& plane : scene.planes) {
      if (std::abs(plane.normal.dot(center - plane.point)) < 1e-9) {
        throw SceneError("camera " + std::to_string(i) + " lies on a plane");
      }
    }
    const Eigen::Vector3d z = forward.normalized();
    const Eigen::Vector3d x = Eigen::Vector3d::UnitY().cross(z).normalized();
    const Eigen::Vector3d y = z.cross(x);
    Eigen::Matrix3d R;
    R.row(0) = x.transpose();
    R.row(1) = y.transpose();
    R.row(2) = z.transpose();
    const Eigen::Vector3d t = -R * center;
    cameras.emplace_back(K, R, t, scene.width, scene.height, "v" + std::to_string(i));
  }
  return cameras;
}

Image render_view(const SynthScene& scene, const CameraView& camera,
                  std::uint64_t noise_seed) {
  const int w = camera.width(), h = camera.height();
  const int ss = scene.supersample;
  const Eigen::Vector3d origin = camera.center();
  Image image(w, h, 1, 0.0f);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      for (int j = 0; j < ss; ++j) {
        for (int i = 0; i < ss; ++i) {
          const Pixel p(x + (i + 0.5) / ss, y + (j + 0.5) / ss);
          const auto hit = cast_ray(scene, origin, world_direction(camera, p));
          if (hit) sum += hit->intensity;
        }
      }
      image(x, y) = static_cast<float>(sum / (ss * ss));
    }
  }
  std::mt19937_64 rng(hash64(scene.seed, noise_seed));
  std::normal_distribution<double> noise(0.0, scene.noise_sigma);
  for (float& v : image.data()) {
    const double noisy = scene.noise_sigma > 0.0 ? v + noise(rng) : v;
    v = static_cast<float>(std::lround(std::clamp(noisy, 0.0, 1.0) * 255.0)) / 255.0f;
  }
  return image;
}

GeometryMap render_ground_truth(const SynthScene& scene, const CameraView& camera) {
  const int w = camera.width(), h = camera.height();
  const Eigen::Vector3d origin = camera.center();
  GeometryMap map(w, h);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Pixel p = pixel_center(x, y);
      // The camera-frame ray has z = 1, so the hit parameter is the depth.
      const auto hit = cast_ray(scene, origin, world_direction(camera, p));
      if (!hit) continue;
      PlaneHypothesis hyp;
      hyp.depth = hit->t;
      hyp.normal = camera.R() * hit->normal;
      map.set(x, y, hyp);
    }
  }
  return map;
}

Grid<std::uint8_t> visibility_mask(const SynthScene& scene, const CameraView& ref,
                                   const GeometryMap& ref_gt, const CameraView& src) {
  const int w = ref.width(), h = ref.height();
  Grid<std::uint8_t> mask(w, h, 1, 0);
  const Eigen::Vector3d src_center = src.center();
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!ref_gt.valid(x, y)) continue;
      const Pixel p = pixel_center(x, y);
      const auto ref_hit = cast_ray(scene, ref.center(), world_direction(ref, p));
      if (!ref_hit) continue;
      const Eigen::Vector3d X = ref_hit->point;
      const auto q = src.project(X);
      if (!q || !src.contains(*q)) continue;
      const Eigen::Vector3d d = X - src_center;
      const double dist = d.norm();
      const auto hit = cast_ray(scene, src_center, d / dist);
      if (hit && std::abs(hit->t - dist) <= 1e-6 * dist) mask(x, y) = 1;
    }
  }
  return mask;
}

std::vector<CameraView> write_synth_dataset(const SynthScene& scene,
                                            const std::string& out_dir) {
  namespace fs = std::filesystem;
  const auto cameras = ring_cameras(scene);
  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "cameras");
  fs::create_directories(root / "gt");

  double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
  FusedCloud gt_cloud;
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    const auto& cam = cameras[i];
    write_pgm((root / "images" / (cam.id() + ".pgm")).string(), render_view(scene, cam, i));
    write_camera_file((root / "cameras" / (cam.id() + ".txt")).string(), cam);
    const GeometryMap gt = render_ground_truth(scene, cam);
    save_map((root / "gt" / (cam.id() + ".geo")).string(), gt);
    for (int y = 0; y < gt.height(); ++y) {
      for (int x = 0; x < gt.width(); ++x) {
        if (!gt.valid(x, y)) continue;
        const PlaneHypothesis hyp = gt.at(x, y);
        dmin = std::min(dmin, hyp.depth);
        dmax = std::max(dmax, hyp.depth);
        FusedPoint pt;
        pt.position = unproject(cam, pixel_center(x, y), hyp).cast<float>();
        pt.normal = (cam.R().transpose() * hyp.normal).cast<float>();
        gt_cloud.points.push_back(pt);
      }
    }
  }
  write_ply((root / "gt" / "points.ply").string(), gt_cloud);
  if (!(dmax > 0.0)) throw SceneError("no camera sees any geometry");

  std::ofstream cfg(root / "scene.cfg", std::ios::trunc);
  if (!cfg) throw SceneError("cannot write " + (root / "scene.cfg").string());
  cfg << "# synthetic scene\n";
  for (const auto& cam : cameras) {
    cfg << "view = " << cam.id() << " images/" << cam.id() << ".pgm cameras/" << cam.id() << ".txt\n";
  }
  for (const auto& cam : cameras) {
    cfg << "sources = " << cam.id();
    for (const auto& other : cameras) {
      if (other.id() != cam.id()) cfg << ' ' << other.id();
    }
    cfg << "\n";
  }
  for (const auto& cam : cameras) {
    cfg << "gt = " << cam.id() << " gt/" << cam.id() << ".geo\n";
  }
  auto has = [&](const char* key) {
    return std::any_of(scene.pipeline.begin(), scene.pipeline.end(),
                       [&](const auto& kv) { return kv.first == key; });
  };
  if (!has("depth_min")) cfg << "depth_min = " << format_number(0.9 * dmin) << "\n";
  if (!has("depth_max")) cfg << "depth_max = " << format_number(1.1 * dmax) << "\n";
  if (!has("seed")) cfg << "seed = " << scene.seed << "\n";
  for (const auto& [key, value] : scene.pipeline) cfg << key << " = " << value << "\n";
  return cameras;
}

}  // namespace pmvs
