#include "selftest.h"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "pmvs/evaluation.h"
#include "pmvs/geometry.h"
#include "pmvs/maps.h"

namespace pmvs::tools {
namespace {

CameraView test_camera(double yaw, const Eigen::Vector3d& centre) {
  Eigen::Matrix3d K;
  K << 120, 0, 64, 0, 120, 48, 0, 0, 1;
  const Eigen::Matrix3d R = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()).toRotationMatrix();
  return CameraView(K, R, -R * centre, 128, 96);
}

// Plane homography against unproject + project.
bool check_homography() {
  const CameraView ref = test_camera(0.0, {0, 0, 0});
  const CameraView src = test_camera(-0.1, {0.4, 0.05, 0.0});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Pixel p(10 + 100 * u(rng), 10 + 70 * u(rng));
    PlaneHypothesis hyp;
    hyp.depth = 3.0 + 2.0 * u(rng);
    hyp.normal = Eigen::Vector3d(0.3 * (u(rng) - 0.5), 0.3 * (u(rng) - 0.5), -1.0).normalized();
    const Homography h = plane_homography(ref, src, p, hyp);
    const Pixel q(p.x() + 3.0 * (u(rng) - 0.5), p.y() + 3.0 * (u(rng) - 0.5));
    const Eigen::Vector3d ray = ref.ray(q);
    const double d = hyp.plane_distance(ref.ray(p));
    const double z = d / -hyp.normal.dot(ray);
    const auto expected = src.project_camera(relative_pose(ref, src).R * (z * ray) + relative_pose(ref, src).t);
    if (!expected || (h.apply(q) - *expected).norm() > 1e-6) return false;
  }
  return true;
}

bool check_map_round_trip() {
  GeometryMap map(5, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      if ((x + y) % 3 == 0) continue;
      PlaneHypothesis hyp;
      hyp.depth = 1.0 + 0.25 * x + 0.125 * y;
      hyp.normal = Eigen::Vector3d(0.1 * x, -0.05 * y, -1.0).normalized();
      map.set(x, y, hyp.quantized());
    }
  }
  const auto bytes = encode_map(to_raw(map));
  return bitwise_equal(geometry_from_raw(decode_map(bytes)), map);
}

bool check_evaluation() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Eigen::Vector3d> cloud(300), gt(400);
  for (auto& p : cloud) p = {u(rng), u(rng), u(rng)};
  for (auto& p : gt) p = {u(rng), u(rng), u(rng)};
  const std::vector<double> thresholds{0.05, 0.2};
  const EvalReport report = evaluate(cloud, gt, thresholds);
  auto matched = [](const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b,
                    double r) {
    std::size_t n = 0;
    for (const auto& p : a) {
      for (const auto& q : b) {
        if ((p - q).squaredNorm() <= r * r) {
          ++n;
          break;
        }
      }
    }
    return 100.0 * static_cast<double>(n) / static_cast<double>(a.size());
  };
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (std::abs(report.scores[i].accuracy - matched(cloud, gt, thresholds[i])) > 1e-9) return false;
    if (std::abs(report.scores[i].completeness - matched(gt, cloud, thresholds[i])) > 1e-9) return false;
  }
  return true;
}

}  // namespace

bool run_selftest(std::ostream& out) {
  const std::vector<std::pair<std::string, std::function<bool()>>> checks{
      {"homography matches projection chain", check_homography},
      {"geometry map round trip", check_map_round_trip},
      {"evaluation matches brute force", check_evaluation},
  };
  bool all = true;
  for (const auto& [name, fn] : checks) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      out << "  exception: " << e.what() << "\n";
    }
    out << (ok ? "PASS " : "FAIL ") << name << "\n";
    all = all && ok;
  }
  return all;
}

}  // namespace pmvs::tools
