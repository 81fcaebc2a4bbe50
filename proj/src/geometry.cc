#include "pmvs/geometry.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <Eigen/LU>

#include "pmvs/error.h"
#include "pmvs/maps.h"

namespace pmvs {

namespace {

void validate_camera(const Eigen::Matrix3d& K, const Eigen::Matrix3d& R,
                     int width, int height) {
  const double ortho =
      (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho < 1e-9) || !(std::abs(R.determinant() - 1.0) < 1e-9)) {
    throw ConfigError("camera rotation is not orthonormal");
  }
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0) || !(K(2, 2) > 0.0) ||
      K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) {
    throw ConfigError("camera intrinsics must be upper triangular with "
                      "positive focal entries");
  }
  if (width <= 0 || height <= 0) {
    throw ConfigError("camera image size must be positive");
  }
}

double parse_double(const std::string& token) {
  double value = 0.0;
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("camera file: bad number '" + token + "'");
  }
  return value;
}

int parse_int(const std::string& token) {
  int value = 0;
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("camera file: bad integer '" + token + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

CameraView::CameraView(const Eigen::Matrix3d& K, const Eigen::Matrix3d& R,
                       const Eigen::Vector3d& t, int width, int height,
                       std::string id)
    : K_(K), R_(R), t_(t), width_(width), height_(height), id_(std::move(id)) {
  validate_camera(K, R, width, height);
  K_inv_ = K_.inverse();
}

CameraView CameraView::scaled(int level) const {
  if (level == 0) return *this;
  const double factor = std::ldexp(1.0, -level);
  Eigen::Matrix3d K = K_;
  K.row(0) *= factor;
  K.row(1) *= factor;
  return CameraView(K, R_, t_, width_ >> level, height_ >> level, id_);
}

std::optional<Pixel> CameraView::project_camera(
    const Eigen::Vector3d& cam) const {
  if (!(cam.z() > 0.0)) return std::nullopt;
  const Eigen::Vector3d h = K_ * cam;
  return Pixel(h.x() / h.z(), h.y() / h.z());
}

RelativePose relative_pose(const CameraView& from, const CameraView& to) {
  RelativePose pose;
  pose.R = to.R() * from.R().transpose();
  pose.t = to.t() - pose.R * from.t();
  return pose;
}

PlaneHypothesis PlaneHypothesis::quantized() const {
  PlaneHypothesis q;
  q.depth = static_cast<float>(depth);
  q.normal = normal.cast<float>().cast<double>();
  return q;
}

bool faces_camera(const CameraView& view, const Pixel& p,
                  const Eigen::Vector3d& normal) {
  return normal.dot(view.ray(p)) < 0.0;
}

const char* to_string(GeoStatus status) {
  switch (status) {
    case GeoStatus::kOk: return "ok";
    case GeoStatus::kDegeneratePlane: return "DegeneratePlane";
    case GeoStatus::kBehindCamera: return "BehindCamera";
    case GeoStatus::kOutOfView: return "OutOfView";
    case GeoStatus::kInvalidNeighbor: return "InvalidNeighbor";
  }
  return "unknown";
}

Pixel Homography::apply(const Pixel& p) const {
  return apply_homography(H, p);
}

GeoResult<Eigen::Matrix3d> try_plane_homography(const CameraView& ref,
                                                const CameraView& src,
                                                const RelativePose& pose,
                                                const Pixel& p,
                                                const PlaneHypothesis& hyp) {
  static const double kMinCos = std::sin(kDegeneracyAngle);
  const Eigen::Vector3d ray = ref.ray(p);
  const double n_dot_ray = hyp.normal.dot(ray);
  if (std::abs(n_dot_ray) < kMinCos * ray.norm()) {
    return {{}, GeoStatus::kDegeneratePlane};
  }
  if (!(hyp.depth > 0.0)) return {{}, GeoStatus::kBehindCamera};
  const Eigen::Vector3d x_src = pose.R * (hyp.depth * ray) + pose.t;
  if (!(x_src.z() > 0.0)) return {{}, GeoStatus::kBehindCamera};

  const double d = -hyp.depth * n_dot_ray;
  const Eigen::Matrix3d H =
      src.K() * (pose.R - pose.t * hyp.normal.transpose() / d) * ref.K_inv();
  return {H, GeoStatus::kOk};
}

Homography plane_homography(const CameraView& ref, const CameraView& src,
                            const Pixel& p, const PlaneHypothesis& hyp) {
  const auto result =
      try_plane_homography(ref, src, relative_pose(ref, src), p, hyp);
  if (result.status == GeoStatus::kDegeneratePlane) {
    throw GeometryError(GeometryFailure::kDegeneratePlane,
                        "viewing ray is parallel to the hypothesis plane");
  }
  if (result.status == GeoStatus::kBehindCamera) {
    throw GeometryError(GeometryFailure::kBehindCamera,
                        "plane point lies behind a camera");
  }
  return Homography{result.value, ref.id(), src.id(), hyp};
}

Eigen::Vector3d unproject(const CameraView& view, const Pixel& p,
                          const PlaneHypothesis& hyp) {
  return view.to_world(hyp.depth * view.ray(p));
}

GeoResult<PlaneHypothesis> propagate_hypothesis(const Pixel& from,
                                                const Pixel& to,
                                                const PlaneHypothesis& hyp,
                                                const CameraView& view) {
  static const double kMinCos = std::sin(kDegeneracyAngle);
  if (from == to) return {hyp, GeoStatus::kOk};
  const Eigen::Vector3d ray_from = view.ray(from);
  const Eigen::Vector3d ray_to = view.ray(to);
  const double a = hyp.normal.dot(ray_from);
  const double b = hyp.normal.dot(ray_to);
  if (std::abs(b) < kMinCos * ray_to.norm()) {
    return {{}, GeoStatus::kDegeneratePlane};
  }
  const double depth = hyp.depth * (a / b);
  if (!(depth > 0.0)) return {{}, GeoStatus::kBehindCamera};
  return {PlaneHypothesis{depth, hyp.normal}, GeoStatus::kOk};
}

GeoResult<double> reprojection_error(const CameraView& ref,
                                     const CameraView& src,
                                     const RelativePose& ref_to_src,
                                     const RelativePose& src_to_ref,
                                     const Pixel& p,
                                     const PlaneHypothesis& hyp_ref,
                                     const GeometryMap& src_map) {
  const auto forward = try_plane_homography(ref, src, ref_to_src, p, hyp_ref);
  if (!forward.ok()) return {0.0, forward.status};
  const Pixel warped = apply_homography(forward.value, p);
  if (!src.contains(warped)) return {0.0, GeoStatus::kOutOfView};

  const int qx = static_cast<int>(std::floor(warped.x()));
  const int qy = static_cast<int>(std::floor(warped.y()));
  if (!src_map.in_bounds(qx, qy) || !src_map.valid(qx, qy)) {
    return {0.0, GeoStatus::kInvalidNeighbor};
  }
  const auto backward = try_plane_homography(
      src, ref, src_to_ref, pixel_center(qx, qy), src_map.at(qx, qy));
  if (!backward.ok()) return {0.0, GeoStatus::kInvalidNeighbor};
  const Pixel back = apply_homography(backward.value, warped);
  return {(back - p).norm(), GeoStatus::kOk};
}

GeoResult<double> reprojection_error(const CameraView& ref,
                                     const CameraView& src, const Pixel& p,
                                     const PlaneHypothesis& hyp_ref,
                                     const GeometryMap& src_map) {
  return reprojection_error(ref, src, relative_pose(ref, src),
                            relative_pose(src, ref), p, hyp_ref, src_map);
}

CameraView read_camera(std::istream& in, std::string id) {
  auto expect_tag = [&](const char* tag) {
    std::string token;
    if (!(in >> token) || token != tag) {
      throw ConfigError(std::string("camera file: expected '") + tag + "'");
    }
  };
  auto next = [&]() {
    std::string token;
    if (!(in >> token)) throw ConfigError("camera file: truncated");
    return token;
  };

  Eigen::Matrix3d K, R;
  Eigen::Vector3d t;
  expect_tag("K");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) K(r, c) = parse_double(next());
  expect_tag("R");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) R(r, c) = parse_double(next());
  expect_tag("t");
  for (int i = 0; i < 3; ++i) t(i) = parse_double(next());
  expect_tag("wh");
  const int w = parse_int(next());
  const int h = parse_int(next());
  return CameraView(K, R, t, w, h, std::move(id));
}

CameraView read_camera_file(const std::string& path, std::string id) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open camera file " + path);
  return read_camera(in, std::move(id));
}

void write_camera(std::ostream& out, const CameraView& view) {
  auto row = [&](const auto& m, int r) {
    out << format_double(m(r, 0)) << ' ' << format_double(m(r, 1)) << ' '
        << format_double(m(r, 2)) << '\n';
  };
  out << "K\n";
  for (int r = 0; r < 3; ++r) row(view.K(), r);
  out << "R\n";
  for (int r = 0; r < 3; ++r) row(view.R(), r);
  out << "t\n"
      << format_double(view.t()(0)) << ' ' << format_double(view.t()(1)) << ' '
      << format_double(view.t()(2)) << '\n';
  out << "wh\n" << view.width() << ' ' << view.height() << '\n';
}

void write_camera_file(const std::string& path, const CameraView& view) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write camera file " + path);
  write_camera(out, view);
}

}  // namespace pmvs
