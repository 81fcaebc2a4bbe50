#pragma once

// Shared fixtures and brute-force oracles for the test binaries.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "pmvs/geometry.h"
#include "pmvs/maps.h"
#include "pmvs/synth.h"

namespace testing {

constexpr double kPi = 3.14159265358979323846;

inline Eigen::Matrix3d intrinsics(double f, double cx, double cy) {
  Eigen::Matrix3d K;
  K << f, 0, cx, 0, f, cy, 0, 0, 1;
  return K;
}

// Camera with rotation R (world -> camera) and centre c.
inline pmvs::CameraView camera_at(const Eigen::Matrix3d& K, const Eigen::Matrix3d& R,
                                  const Eigen::Vector3d& c, int w, int h,
                                  const std::string& id = {}) {
  return pmvs::CameraView(K, R, -R * c, w, h, id);
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(-max_angle, max_angle);
  const Eigen::Vector3d axis = Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized();
  return Eigen::AngleAxisd(u(rng), axis).toRotationMatrix();
}

// Reference at the origin looking down +z, source displaced and slightly
// rotated, both 160x120.
struct CameraPair {
  pmvs::CameraView ref, src;
};

inline CameraPair random_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Eigen::Matrix3d K = intrinsics(140.0 + 20.0 * u(rng), 80.0 + 5.0 * u(rng), 60.0 + 5.0 * u(rng));
  const Eigen::Matrix3d R0 = random_rotation(rng, 0.05);
  const Eigen::Vector3d c0(u(rng), u(rng), u(rng));
  const Eigen::Matrix3d R1 = random_rotation(rng, 0.12) * R0;
  const Eigen::Vector3d c1 = c0 + R0.transpose() * Eigen::Vector3d(0.5 * u(rng), 0.2 * u(rng), 0.1 * u(rng));
  return {camera_at(K, R0, c0, 160, 120, "r"), camera_at(K, R1, c1, 160, 120, "s")};
}

// Camera-facing normal within `max_tilt` of the optical axis.
inline Eigen::Vector3d random_normal(std::mt19937_64& rng, double max_tilt) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return Eigen::Vector3d(max_tilt * u(rng), max_tilt * u(rng), -1.0).normalized();
}

// World point where the ray of pixel p meets the plane through the point at
// camera depth `depth` with camera-frame normal n. Computed in the world frame.
inline Eigen::Vector3d oracle_unproject(const pmvs::CameraView& cam, const pmvs::Pixel& anchor,
                                        const pmvs::PlaneHypothesis& hyp, const pmvs::Pixel& p) {
  const Eigen::Vector3d centre = -cam.R().transpose() * cam.t();
  const Eigen::Matrix3d Kinv = cam.K().inverse();
  const Eigen::Vector3d anchor_cam = hyp.depth * (Kinv * Eigen::Vector3d(anchor.x(), anchor.y(), 1.0));
  const Eigen::Vector3d anchor_world = cam.R().transpose() * (anchor_cam - cam.t());
  const Eigen::Vector3d n_world = cam.R().transpose() * hyp.normal;
  const Eigen::Vector3d dir = cam.R().transpose() * (Kinv * Eigen::Vector3d(p.x(), p.y(), 1.0));
  const double lambda = n_world.dot(anchor_world - centre) / n_world.dot(dir);
  return centre + lambda * dir;
}

inline std::optional<pmvs::Pixel> oracle_project(const pmvs::CameraView& cam, const Eigen::Vector3d& X) {
  const Eigen::Vector3d q = cam.K() * (cam.R() * X + cam.t());
  if (q.z() <= 0.0) return std::nullopt;
  return pmvs::Pixel(q.x() / q.z(), q.y() / q.z());
}

// Pixel in `to` of the point where p's ray in `from` meets the plane.
inline std::optional<pmvs::Pixel> oracle_transfer(const pmvs::CameraView& from, const pmvs::Pixel& anchor,
                                                  const pmvs::PlaneHypothesis& hyp,
                                                  const pmvs::CameraView& to, const pmvs::Pixel& p) {
  return oracle_project(to, oracle_unproject(from, anchor, hyp, p));
}

// Forward through the ref plane, backward through the src plane stored at the
// nearest (floor) src pixel.
inline std::optional<double> oracle_reprojection(const pmvs::CameraView& ref,
                                                 const pmvs::CameraView& src, const pmvs::Pixel& p,
                                                 const pmvs::PlaneHypothesis& hyp,
                                                 const pmvs::GeometryMap& src_map) {
  const auto q = oracle_transfer(ref, p, hyp, src, p);
  if (!q || !src.contains(*q)) return std::nullopt;
  const int qx = static_cast<int>(std::floor(q->x()));
  const int qy = static_cast<int>(std::floor(q->y()));
  if (!src_map.valid(qx, qy)) return std::nullopt;
  const auto back = oracle_transfer(src, pmvs::pixel_center(qx, qy), src_map.at(qx, qy), ref, *q);
  if (!back) return std::nullopt;
  return (*back - p).norm();
}

inline double angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0)) * 180.0 / kPi;
}

// Single slanted noise-textured plane seen by a three-camera ring.
inline pmvs::SynthScene plane_scene(int width = 96, int height = 72, double noise = 0.0) {
  pmvs::SynthScene scene;
  pmvs::ScenePlane plane;
  plane.point = Eigen::Vector3d::Zero();
  plane.normal = Eigen::Vector3d(0.5, -0.1, -0.86).normalized();
  plane.texture.kind = pmvs::TextureKind::kNoise;
  plane.texture.scale = 8.0;
  plane.texture.octaves = 4;
  scene.planes.push_back(plane);
  scene.ring.count = 3;
  scene.ring.radius = 4.0;
  scene.ring.arc_deg = 40.0;
  scene.ring.elevation_deg = 5.0;
  scene.ring.fov_deg = 60.0;
  scene.width = width;
  scene.height = height;
  scene.noise_sigma = noise;
  scene.supersample = 2;
  scene.seed = 5;
  return scene;
}

// Fresh directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pmvs_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing

#include "pmvs/engine.h"
#include "pmvs/pipeline.h"
#include "pmvs/scoring.h"

namespace testing {

// Rendered views of a synthetic scene prepared at one pyramid level.
struct LevelScene {
  pmvs::SynthScene scene;
  int scale = 1;
  std::vector<pmvs::CameraView> full;      // full-resolution cameras
  std::vector<pmvs::CameraView> cameras;   // at `scale`
  std::vector<pmvs::ViewPyramid> pyramids;
  std::vector<pmvs::GeometryMap> gt;       // at `scale`
  pmvs::DepthRange range;

  const pmvs::Grid<float>& features(int v) const { return pyramids[v].features.level(scale); }
  const pmvs::Grid<float>& gray(int v) const { return pyramids[v].intensity.level(scale); }

  // Engine inputs for reference `ref` against all other views.
  pmvs::EngineInputs inputs(int ref, const pmvs::WeightProvider* weights,
                            bool with_geometry = false) const {
    pmvs::EngineInputs in;
    in.camera = cameras[ref];
    in.features = &features(ref);
    in.weights = weights;
    in.depth_range = range;
    for (int v = 0; v < static_cast<int>(cameras.size()); ++v) {
      if (v == ref) continue;
      in.sources.push_back({cameras[v], &features(v), with_geometry ? &gt[v] : nullptr});
    }
    return in;
  }
};

inline LevelScene make_level_scene(const pmvs::SynthScene& scene, int scale) {
  LevelScene ls;
  ls.scene = scene;
  ls.scale = scale;
  ls.full = pmvs::ring_cameras(scene);
  double lo = 1e300, hi = 0.0;
  for (std::size_t v = 0; v < ls.full.size(); ++v) {
    const auto image = pmvs::render_view(scene, ls.full[v], v);
    ls.pyramids.push_back(pmvs::make_view_pyramid(ls.full[v], image));
    ls.cameras.push_back(ls.full[v].scaled(scale));
    const auto gt_full = pmvs::render_ground_truth(scene, ls.full[v]);
    for (int y = 0; y < gt_full.height(); ++y) {
      for (int x = 0; x < gt_full.width(); ++x) {
        if (!gt_full.valid(x, y)) continue;
        lo = std::min(lo, static_cast<double>(gt_full.depth(x, y)));
        hi = std::max(hi, static_cast<double>(gt_full.depth(x, y)));
      }
    }
    ls.gt.push_back(pmvs::ground_truth_at_level(gt_full, ls.full[v], scale));
  }
  ls.range = {0.9 * lo, 1.1 * hi};
  return ls;
}

// Scalar reference implementations of the photometric cost.
using pmvs::Grid;
using pmvs::Pixel;
using pmvs::SupportSet;
using pmvs::SupportWeights;

inline std::vector<float> oracle_correlation(const std::vector<float>& a, const std::vector<float>& b, int groups) {
  const std::size_t per = a.size() / static_cast<std::size_t>(groups);
  std::vector<float> out;
  for (int g = 0; g < groups; ++g) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = g * per; i < (g + 1) * per; ++i) {
      dot += static_cast<double>(a[i]) * b[i];
      na += static_cast<double>(a[i]) * a[i];
      nb += static_cast<double>(b[i]) * b[i];
    }
    out.push_back(na > 0 && nb > 0 ? static_cast<float>(dot / std::sqrt(na * nb)) : 0.0f);
  }
  return out;
}

// Bilinear lookup with pixel centres at +0.5; nullopt unless all four
// neighbours exist.
inline std::optional<std::vector<float>> oracle_sample(const Grid<float>& g, const Pixel& p) {
  const double x = p.x() - 0.5, y = p.y() - 0.5;
  if (x < 0 || y < 0 || x > g.width() - 1 || y > g.height() - 1) return std::nullopt;
  const int x0 = std::min(static_cast<int>(std::floor(x)), g.width() - 2);
  const int y0 = std::min(static_cast<int>(std::floor(y)), g.height() - 2);
  const double fx = x - x0, fy = y - y0;
  std::vector<float> out(static_cast<std::size_t>(g.channels()));
  for (int c = 0; c < g.channels(); ++c) {
    out[c] = static_cast<float>((1 - fx) * (1 - fy) * g(x0, y0, c) + fx * (1 - fy) * g(x0 + 1, y0, c) +
                                (1 - fx) * fy * g(x0, y0 + 1, c) + fx * fy * g(x0 + 1, y0 + 1, c));
  }
  return out;
}

inline std::optional<std::vector<double>> oracle_aggregate(const Eigen::Vector2i& p, const Eigen::Matrix3d& H,
                                                    const Grid<float>& ref, const Grid<float>& src,
                                                    const SupportWeights& w, SupportSet set, int groups) {
  std::vector<double> acc(static_cast<std::size_t>(groups), 0.0);
  double total = 0;
  for (int k = 0; k < 9; ++k) {
    if (!((set >> k) & 1) || w[k] <= 0) continue;
    const int qx = p.x() + (k % 3 - 1) * 3, qy = p.y() + (k / 3 - 1) * 3;
    if (qx < 0 || qy < 0 || qx >= ref.width() || qy >= ref.height()) continue;
    const Eigen::Vector3d h = H * Eigen::Vector3d(qx + 0.5, qy + 0.5, 1);
    const auto s = oracle_sample(src, {h.x() / h.z(), h.y() / h.z()});
    if (!s) continue;
    std::vector<float> a(ref.pixel(qx, qy).begin(), ref.pixel(qx, qy).end());
    const auto c = oracle_correlation(a, *s, groups);
    for (int g = 0; g < groups; ++g) acc[g] += w[k] * c[g];
    total += w[k];
  }
  if (total <= 0) return std::nullopt;
  for (auto& v : acc) v /= total;
  return acc;
}

inline Grid<float> random_features(int w, int h, int c, std::mt19937_64& rng) {
  std::normal_distribution<float> g;
  Grid<float> grid(w, h, c);
  for (auto& v : grid.data()) v = g(rng);
  return grid;
}

}  // namespace testing
