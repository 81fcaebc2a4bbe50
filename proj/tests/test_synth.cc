#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "pmvs/error.h"
#include "pmvs/image_io.h"
#include "pmvs/maps.h"
#include "pmvs/synth.h"
#include "support.h"

using namespace pmvs;
namespace fs = std::filesystem;

namespace {

Eigen::Vector3d centre_of(const CameraView& cam) { return -cam.R().transpose() * cam.t(); }

// Camera-frame hypothesis of the first hit through pixel (x, y), in double.
std::optional<PlaneHypothesis> hit_hypothesis(const SynthScene& scene, const CameraView& cam, int x, int y) {
  const Pixel p = pixel_center(x, y);
  const Eigen::Vector3d dir = cam.R().transpose() * (cam.K().inverse() * Eigen::Vector3d(p.x(), p.y(), 1.0));
  const auto hit = cast_ray(scene, centre_of(cam), dir.normalized());
  if (!hit) return std::nullopt;
  PlaneHypothesis h;
  h.depth = (cam.R() * hit->point + cam.t()).z();
  h.normal = cam.R() * hit->normal;
  return h;
}

// Slab test: does the open segment a -> b pass through the box?
bool segment_hits_box(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const SceneBox& box) {
  double lo = 1e-9, hi = 1.0 - 1e-9;
  const Eigen::Vector3d d = b - a;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (a[i] < box.min[i] || a[i] > box.max[i]) return false;
      continue;
    }
    double t0 = (box.min[i] - a[i]) / d[i], t1 = (box.max[i] - a[i]) / d[i];
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  }
  return lo <= hi;
}

SynthScene occluder_scene() {
  auto scene = testing::plane_scene();
  SceneBox pole;
  pole.min = Eigen::Vector3d(0.35, -2.0, -1.6);
  pole.max = Eigen::Vector3d(0.6, 2.0, -1.3);
  pole.texture.kind = TextureKind::kChecker;
  pole.texture.scale = 0.2;
  scene.boxes.push_back(pole);
  return scene;
}

int run_cli(const std::string& args, const fs::path& output) {
  const std::string cmd = std::string(PMVS_CLI) + " " + args + " > " + output.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("synth: fronto-parallel plane has constant depth and ray-length distances") {
  auto scene = testing::plane_scene();
  const auto cams = ring_cameras(scene);
  const auto& cam = cams[1];
  const Eigen::Vector3d axis = cam.R().transpose() * Eigen::Vector3d::UnitZ();
  const double d = 3.7;
  scene.planes[0].point = centre_of(cam) + d * axis;
  scene.planes[0].normal = -axis;
  const auto gt = render_ground_truth(scene, cam);
  const Eigen::Matrix3d Kinv = cam.K().inverse();
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      REQUIRE(gt.valid(x, y));
      CHECK(gt.depth(x, y) == doctest::Approx(d).epsilon(1e-7));
      const Eigen::Vector3d ray = Kinv * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0);
      const Eigen::Vector3d X = unproject(cam, pixel_center(x, y), gt.at(x, y));
      CHECK((X - centre_of(cam)).norm() == doctest::Approx(d * ray.norm()).epsilon(1e-7));
      CHECK((gt.at(x, y).normal - Eigen::Vector3d(0, 0, -1)).norm() < 1e-6);
    }
  }
  const Pixel pp(cam.K()(0, 2), cam.K()(1, 2));
  const Eigen::Vector3d dir = cam.R().transpose() * (Kinv * Eigen::Vector3d(pp.x(), pp.y(), 1.0));
  const auto hit = cast_ray(scene, centre_of(cam), dir.normalized());
  REQUIRE(hit);
  CHECK(hit->t == doctest::Approx(d).epsilon(1e-12));
}

TEST_CASE("synth: ground truth is self-consistent across views") {
  for (const auto& scene : {testing::plane_scene(), occluder_scene()}) {
    const auto cams = ring_cameras(scene);
    for (std::size_t r = 0; r < cams.size(); ++r) {
      const auto ref_gt = render_ground_truth(scene, cams[r]);
      for (std::size_t s = 0; s < cams.size(); ++s) {
        if (s == r) continue;
        const auto src_gt = render_ground_truth(scene, cams[s]);
        const auto vis = visibility_mask(scene, cams[r], ref_gt, cams[s]);
        double worst = 0.0, worst_float = 0.0;
        int checked = 0;
        for (int y = 0; y < ref_gt.height(); ++y) {
          for (int x = 0; x < ref_gt.width(); ++x) {
            if (!vis(x, y)) continue;
            const auto hr = hit_hypothesis(scene, cams[r], x, y);
            REQUIRE(hr);
            const Pixel p = pixel_center(x, y);
            const Pixel q = plane_homography(cams[r], cams[s], p, *hr).apply(p);
            const int qx = static_cast<int>(std::floor(q.x()));
            const int qy = static_cast<int>(std::floor(q.y()));
            const auto hs = hit_hypothesis(scene, cams[s], qx, qy);
            if (!hs) continue;
            // Only where the source pixel sees the same surface.
            const Eigen::Vector3d n_r = cams[r].R().transpose() * hr->normal;
            const Eigen::Vector3d n_s = cams[s].R().transpose() * hs->normal;
            const Eigen::Vector3d X_r = unproject(cams[r], p, *hr);
            const Eigen::Vector3d X_s = unproject(cams[s], pixel_center(qx, qy), *hs);
            if ((n_r - n_s).norm() > 1e-9 || std::abs(n_r.dot(X_r - X_s)) > 1e-9) continue;
            const Pixel back = plane_homography(cams[s], cams[r], pixel_center(qx, qy), *hs).apply(q);
            worst = std::max(worst, (back - p).norm());
            const auto stored = reprojection_error(cams[r], cams[s], p, ref_gt.at(x, y), src_gt);
            if (stored.ok()) worst_float = std::max(worst_float, stored.value);
            ++checked;
          }
        }
        CHECK(checked > 500);
        CHECK(worst < 1e-6);
        // Through float maps the error is bounded by storage rounding.
        CHECK(worst_float < 5e-5);
      }
    }
  }
}

TEST_CASE("synth: visibility follows ray order") {
  const auto scene = occluder_scene();
  const auto cams = ring_cameras(scene);
  const auto ref_gt = render_ground_truth(scene, cams[1]);
  const auto& plane = scene.planes[0];
  for (int s : {0, 2}) {
    const auto vis = visibility_mask(scene, cams[1], ref_gt, cams[s]);
    int occluded = 0, visible = 0;
    for (int y = 0; y < ref_gt.height(); ++y) {
      for (int x = 0; x < ref_gt.width(); ++x) {
        if (!ref_gt.valid(x, y)) continue;
        const Eigen::Vector3d X = unproject(cams[1], pixel_center(x, y), ref_gt.at(x, y));
        if (std::abs(plane.normal.normalized().dot(X - plane.point)) > 1e-6) continue;  // on the box
        const auto q = testing::oracle_project(cams[s], X);
        const bool inside = q && cams[s].contains(*q);
        const bool blocked = segment_hits_box(centre_of(cams[s]), X, scene.boxes[0]);
        const bool expected = inside && !blocked;
        CHECK(static_cast<bool>(vis(x, y)) == expected);
        if (inside && blocked) ++occluded;
        if (expected) ++visible;
      }
    }
    MESSAGE("source " << s << ": " << occluded << " occluded, " << visible << " visible");
    CHECK(occluded > 50);
    CHECK(visible > 1000);
  }
}

TEST_CASE("synth: renders are deterministic in the seed") {
  const auto scene = testing::plane_scene(96, 72, 0.02);
  const auto cams = ring_cameras(scene);
  const auto a = render_view(scene, cams[0], 7);
  const auto b = render_view(scene, cams[0], 7);
  const auto c = render_view(scene, cams[0], 8);
  CHECK(std::ranges::equal(a.data(), b.data()));
  CHECK_FALSE(std::ranges::equal(a.data(), c.data()));
  auto other = scene;
  other.seed = 6;
  CHECK_FALSE(std::ranges::equal(render_view(other, cams[0], 7).data(), a.data()));
  for (float v : a.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
    CHECK(std::abs(v * 255.0f - std::round(v * 255.0f)) < 1e-4f);
  }
}

TEST_CASE("synth: scene parsing and errors") {
  for (const char* name : {"plane3", "steps5", "lowtex"}) {
    const auto scene = read_synth_scene(std::string(PMVS_SCENE_DIR) + "/" + name + ".cfg");
    CHECK(scene.width == 192);
    CHECK(scene.height == 144);
    CHECK_FALSE(scene.planes.empty());
    CHECK_NOTHROW(ring_cameras(scene));
  }
  const auto steps = read_synth_scene(std::string(PMVS_SCENE_DIR) + "/steps5.cfg");
  CHECK(steps.ring.count == 5);
  CHECK(steps.boxes.size() == 3);
  const auto low = read_synth_scene(std::string(PMVS_SCENE_DIR) + "/lowtex.cfg");
  CHECK(low.planes[0].flat.has_value());

  const auto s = parse_synth_scene("width = 64\nheight = 48\nplane = 0 0 0 0 0 -1 checker 0.5\n"
                                   "box = -1 -1 -1 1 1 1 flat 0.3\npipeline.seed = 4\n");
  CHECK(s.width == 64);
  CHECK(s.planes[0].texture.kind == TextureKind::kChecker);
  CHECK(s.boxes[0].texture.kind == TextureKind::kFlat);
  CHECK_THROWS_AS(parse_synth_scene("plane = 0 0 0 0 0 0 noise 1 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_synth_scene("box = 1 1 1 0 0 0 flat 0.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_synth_scene("plane = 0 0 0 0 0 1 marble\n"), ConfigError);
  CHECK_THROWS_AS(parse_synth_scene("colour = red\n"), ConfigError);

  auto inside = testing::plane_scene();
  SceneBox around;
  around.min = Eigen::Vector3d(-10, -10, -10);
  around.max = Eigen::Vector3d(10, 10, 10);
  inside.boxes.push_back(around);
  CHECK_THROWS_AS(ring_cameras(inside), SceneError);
}

TEST_CASE("cli: selftest passes and truncated maps are data errors") {
  const auto dir = testing::temp_dir("cli");
  CHECK(run_cli("selftest", dir / "selftest.txt") == 0);
  CHECK(slurp(dir / "selftest.txt").find("FAIL") == std::string::npos);

  GeometryMap map(8, 6);
  PlaneHypothesis h;
  h.depth = 2.0;
  h.normal = Eigen::Vector3d(0, 0, -1);
  map.set(1, 1, h);
  const auto path = dir / "m.geo";
  save_map(path.string(), map);
  CHECK(run_cli("inspect " + path.string(), dir / "ok.txt") == 0);
  CHECK(slurp(dir / "ok.txt").find("valid: 1 of 48") != std::string::npos);
  fs::resize_file(path, fs::file_size(path) - 9);
  CHECK(run_cli("inspect " + path.string(), dir / "bad.txt") == 2);
  const auto text = slurp(dir / "bad.txt");
  MESSAGE(text);
  CHECK(text.find("byte offset") != std::string::npos);
  CHECK(run_cli("inspect", dir / "usage.txt") == 1);
  CHECK(run_cli("frobnicate", dir / "usage2.txt") == 1);
}
