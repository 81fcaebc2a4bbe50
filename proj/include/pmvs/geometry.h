#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include <Eigen/Core>

namespace pmvs {

// Continuous image coordinates. Integer pixel (x, y) covers the unit square
// [x, x+1) x [y, y+1); its centre is (x + 0.5, y + 0.5).
using Pixel = Eigen::Vector2d;

inline Pixel pixel_center(int x, int y) { return {x + 0.5, y + 0.5}; }

// Pinhole camera with world->camera extrinsics: x_cam = R * X + t.
class CameraView {
 public:
  CameraView() = default;
  CameraView(const Eigen::Matrix3d& K, const Eigen::Matrix3d& R,
             const Eigen::Vector3d& t, int width, int height,
             std::string id = {});

  const Eigen::Matrix3d& K() const { return K_; }
  const Eigen::Matrix3d& K_inv() const { return K_inv_; }
  const Eigen::Matrix3d& R() const { return R_; }
  const Eigen::Vector3d& t() const { return t_; }
  int width() const { return width_; }
  int height() const { return height_; }
  const std::string& id() const { return id_; }

  // Camera for pyramid level `level`: focal lengths and principal point
  // divided by 2^level, image size floor-divided.
  CameraView scaled(int level) const;

  Eigen::Vector3d center() const { return -R_.transpose() * t_; }

  // Viewing ray through `p` in camera coordinates, normalised to z = 1.
  Eigen::Vector3d ray(const Pixel& p) const {
    return K_inv_ * Eigen::Vector3d(p.x(), p.y(), 1.0);
  }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return R_ * world + t_;
  }
  Eigen::Vector3d to_world(const Eigen::Vector3d& cam) const {
    return R_.transpose() * (cam - t_);
  }

  // Projection of a camera-frame point; nullopt when z <= 0.
  std::optional<Pixel> project_camera(const Eigen::Vector3d& cam) const;
  std::optional<Pixel> project(const Eigen::Vector3d& world) const {
    return project_camera(to_camera(world));
  }

  bool contains(const Pixel& p) const {
    return p.x() >= 0.0 && p.y() >= 0.0 && p.x() < width_ && p.y() < height_;
  }

 private:
  Eigen::Matrix3d K_ = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d K_inv_ = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t_ = Eigen::Vector3d::Zero();
  int width_ = 0;
  int height_ = 0;
  std::string id_;
};

// Rigid transform from one camera frame to another: x_b = R * x_a + t.
struct RelativePose {
  Eigen::Matrix3d R;
  Eigen::Vector3d t;
};

RelativePose relative_pose(const CameraView& from, const CameraView& to);

// Local tangent plane at a pixel: depth along the camera z axis and a unit
// normal in camera coordinates that faces the camera.
struct PlaneHypothesis {
  double depth = 1.0;
  Eigen::Vector3d normal{0.0, 0.0, -1.0};

  // Distance from the camera centre to the plane through the point at
  // `depth` on `ray` (a z = 1 ray). Positive for camera-facing normals.
  double plane_distance(const Eigen::Vector3d& ray) const {
    return -depth * normal.dot(ray);
  }

  // Rounds depth and normal to float precision. Maps store floats; the engine
  // scores hypotheses exactly as they will be stored.
  PlaneHypothesis quantized() const;

  friend bool operator==(const PlaneHypothesis& a, const PlaneHypothesis& b) {
    return a.depth == b.depth && a.normal == b.normal;
  }
};

// Normal faces the camera at pixel `p` of `view`.
bool faces_camera(const CameraView& view, const Pixel& p,
                  const Eigen::Vector3d& normal);

enum class GeoStatus {
  kOk,
  kDegeneratePlane,
  kBehindCamera,
  kOutOfView,
  kInvalidNeighbor,
};

const char* to_string(GeoStatus status);

template <typename T>
struct GeoResult {
  T value{};
  GeoStatus status = GeoStatus::kOk;
  bool ok() const { return status == GeoStatus::kOk; }
};

// Rays within this angle of the plane count as parallel.
inline constexpr double kDegeneracyAngle = 1e-8;

struct Homography {
  Eigen::Matrix3d H;
  std::string source_id;
  std::string target_id;
  PlaneHypothesis plane;

  Pixel apply(const Pixel& p) const;
};

inline Pixel apply_homography(const Eigen::Matrix3d& H, const Pixel& p) {
  const Eigen::Vector3d q = H * Eigen::Vector3d(p.x(), p.y(), 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

// Homography induced by the plane `hyp` (defined at pixel `p` of `ref`)
// between `ref` and `src`: K_s (R - t n^T / d) K_r^{-1}.
GeoResult<Eigen::Matrix3d> try_plane_homography(const CameraView& ref,
                                                const CameraView& src,
                                                const RelativePose& pose,
                                                const Pixel& p,
                                                const PlaneHypothesis& hyp);

// Throws GeometryError on degenerate planes or points behind either camera.
Homography plane_homography(const CameraView& ref, const CameraView& src,
                            const Pixel& p, const PlaneHypothesis& hyp);

// World point where the ray of `p` meets the hypothesis plane.
Eigen::Vector3d unproject(const CameraView& view, const Pixel& p,
                          const PlaneHypothesis& hyp);

// Re-intersects the plane of `hyp` (anchored at `from`) with the ray of `to`.
GeoResult<PlaneHypothesis> propagate_hypothesis(const Pixel& from,
                                                const Pixel& to,
                                                const PlaneHypothesis& hyp,
                                                const CameraView& view);

class GeometryMap;

// Symmetric transfer error of `p` through src: forward with the reference
// hypothesis, backward with src's own stored hypothesis at the nearest pixel.
GeoResult<double> reprojection_error(const CameraView& ref,
                                     const CameraView& src,
                                     const RelativePose& ref_to_src,
                                     const RelativePose& src_to_ref,
                                     const Pixel& p,
                                     const PlaneHypothesis& hyp_ref,
                                     const GeometryMap& src_map);

GeoResult<double> reprojection_error(const CameraView& ref,
                                     const CameraView& src, const Pixel& p,
                                     const PlaneHypothesis& hyp_ref,
                                     const GeometryMap& src_map);

// Camera text format: "K" + 3 rows, "R" + 3 rows, "t" + 3 values, "wh" + 2
// integers, whitespace separated.
CameraView read_camera(std::istream& in, std::string id = {});
CameraView read_camera_file(const std::string& path, std::string id = {});
void write_camera(std::ostream& out, const CameraView& view);
void write_camera_file(const std::string& path, const CameraView& view);

}  // namespace pmvs
