#include "pmvs/scoring.h"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "pmvs/error.h"

namespace pmvs {

namespace {

constexpr int kMaxChannels = 256;

}  // namespace

void groupwise_correlation(std::span<const float> a, std::span<const float> b,
                           int groups, std::span<float> out) {
  assert(groups > 0 && a.size() == b.size() && a.size() % groups == 0);
  assert(out.size() >= static_cast<std::size_t>(groups));
  const std::size_t per_group = a.size() / groups;
  for (int g = 0; g < groups; ++g) {
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = g * per_group; i < (g + 1) * per_group; ++i) {
      dot += static_cast<double>(a[i]) * b[i];
      aa += static_cast<double>(a[i]) * a[i];
      bb += static_cast<double>(b[i]) * b[i];
    }
    const double denom = std::sqrt(aa * bb);
    out[g] = denom > 0.0 ? static_cast<float>(std::clamp(dot / denom, -1.0, 1.0)) : 0.0f;
  }
}

std::vector<float> groupwise_correlation(std::span<const float> a,
                                         std::span<const float> b, int groups) {
  if (groups <= 0 || a.size() != b.size() || a.size() % groups != 0) {
    throw ConfigError("feature size must be divisible by the group count");
  }
  std::vector<float> out(groups);
  groupwise_correlation(a, b, groups, out);
  return out;
}

bool sample_bilinear(const Grid<float>& grid, const Pixel& p,
                     std::span<float> out) {
  const double x = p.x() - 0.5;
  const double y = p.y() - 0.5;
  const int w = grid.width(), h = grid.height();
  if (!(x >= 0.0 && y >= 0.0 && x <= w - 1 && y <= h - 1) || w < 2 || h < 2) {
    return false;
  }
  const int x0 = std::min(static_cast<int>(x), w - 2);
  const int y0 = std::min(static_cast<int>(y), h - 2);
  const float fx = static_cast<float>(x - x0);
  const float fy = static_cast<float>(y - y0);
  const auto p00 = grid.pixel(x0, y0), p10 = grid.pixel(x0 + 1, y0);
  const auto p01 = grid.pixel(x0, y0 + 1), p11 = grid.pixel(x0 + 1, y0 + 1);
  for (int c = 0; c < grid.channels(); ++c) {
    const float top = p00[c] + fx * (p10[c] - p00[c]);
    const float bottom = p01[c] + fx * (p11[c] - p01[c]);
    out[c] = top + fy * (bottom - top);
  }
  return true;
}

bool aggregate_support(const Eigen::Vector2i& p, const Eigen::Matrix3d& H,
                       const Grid<float>& ref_features,
                       const Grid<float>& src_features,
                       const SupportWeights& weights, SupportSet support,
                       int groups, std::span<float> out) {
  const int channels = ref_features.channels();
  assert(channels == src_features.channels() && channels <= kMaxChannels);
  assert(groups <= kMaxChannels);
  float sample[kMaxChannels];
  float corr[kMaxChannels];
  double acc[kMaxChannels] = {};
  double weight_sum = 0.0;

  for (int k = 0; k < kSupportCount; ++k) {
    if (!in_support(support, k) || !(weights[k] > 0.0f)) continue;
    const Eigen::Vector2i q = p + support_offset(k);
    if (!ref_features.in_bounds(q.x(), q.y())) continue;
    const Pixel warped = apply_homography(H, pixel_center(q.x(), q.y()));
    if (!sample_bilinear(src_features, warped, {sample, static_cast<std::size_t>(channels)})) {
      continue;
    }
    groupwise_correlation(ref_features.pixel(q.x(), q.y()),
                          {sample, static_cast<std::size_t>(channels)}, groups,
                          {corr, static_cast<std::size_t>(groups)});
    for (int g = 0; g < groups; ++g) acc[g] += weights[k] * corr[g];
    weight_sum += weights[k];
  }
  if (!(weight_sum > 0.0)) return false;
  for (int g = 0; g < groups; ++g) out[g] = static_cast<float>(acc[g] / weight_sum);
  return true;
}

std::optional<std::vector<float>> aggregate_support(
    const Eigen::Vector2i& p, const PlaneHypothesis& hyp,
    const CameraView& ref, const Grid<float>& ref_features,
    const CameraView& src, const Grid<float>& src_features,
    const SupportWeights& weights, SupportSet support, int groups) {
  if (ref_features.channels() % groups != 0) {
    throw ConfigError("feature channels must be divisible by the group count");
  }
  const auto H = try_plane_homography(ref, src, relative_pose(ref, src),
                                      pixel_center(p.x(), p.y()), hyp);
  if (!H.ok()) return std::nullopt;
  std::vector<float> out(groups);
  if (!aggregate_support(p, H.value, ref_features, src_features, weights,
                         support, groups, out)) {
    return std::nullopt;
  }
  return out;
}

double view_disbelief(std::span<const float> corr, double s_max) {
  if (corr.empty()) return s_max;
  double mean = 0.0;
  for (float c : corr) mean += c;
  mean /= static_cast<double>(corr.size());
  return std::clamp(s_max * (1.0 - mean) * 0.5, 0.0, s_max);
}

double combine_disbelief(std::span<const double> per_view,
                         std::span<const float> visibility, double s_max) {
  double weighted = 0.0, total = 0.0;
  for (std::size_t i = 0; i < per_view.size(); ++i) {
    if (!(visibility[i] > 0.0f)) continue;
    weighted += visibility[i] * per_view[i];
    total += visibility[i];
  }
  return total > 0.0 ? weighted / total : s_max;
}

double photometric_disbelief(
    std::span<const std::optional<std::vector<float>>> per_view_corr,
    std::span<const float> visibility, double s_max) {
  std::vector<double> per_view(per_view_corr.size());
  for (std::size_t i = 0; i < per_view.size(); ++i) {
    per_view[i] = per_view_corr[i] ? view_disbelief(*per_view_corr[i], s_max) : s_max;
  }
  return combine_disbelief(per_view, visibility, s_max);
}

double geometric_score(double s_pho, std::span<const double> errors,
                       std::span<const float> visibility, double g_max) {
  double score = 0.0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!(visibility[i] > 0.0f)) continue;
    score += visibility[i] * (s_pho + std::min(errors[i], g_max));
  }
  return score;
}

double geometric_score(const Pixel& p, const PlaneHypothesis& hyp,
                       double s_pho, const CameraView& ref,
                       std::span<const CameraView> sources,
                       std::span<const GeometryMap* const> source_geometry,
                       std::span<const float> visibility, double g_max) {
  std::vector<double> errors(sources.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (!(visibility[i] > 0.0f) || source_geometry[i] == nullptr) continue;
    const auto e = reprojection_error(ref, sources[i], p, hyp, *source_geometry[i]);
    if (e.ok()) errors[i] = e.value;
  }
  return geometric_score(s_pho, errors, visibility, g_max);
}

SupportWeights bilateral_weights(const Eigen::Vector2i& p,
                                 const Grid<float>& gray, double sigma_color,
                                 double sigma_distance) {
  SupportWeights w{};
  const double center = gray(p.x(), p.y(), 0);
  const double color_norm = 1.0 / (2.0 * sigma_color * sigma_color);
  const double dist_norm = 1.0 / (2.0 * sigma_distance * sigma_distance);
  for (int k = 0; k < kSupportCount; ++k) {
    if (k == kSupportCenter) {
      w[k] = 1.0f;
      continue;
    }
    const Eigen::Vector2i off = support_offset(k);
    const Eigen::Vector2i q = p + off;
    if (!gray.in_bounds(q.x(), q.y())) continue;
    const double dc = gray(q.x(), q.y(), 0) - center;
    const double dd2 = off.squaredNorm();
    w[k] = static_cast<float>(std::exp(-dc * dc * color_norm) * std::exp(-dd2 * dist_norm));
  }
  return w;
}

SupportWeights gt_coplanarity(const Eigen::Vector2i& p, const GeometryMap& gt,
                              const CameraView& camera, double tau) {
  SupportWeights w{};
  w[kSupportCenter] = 1.0f;
  if (!gt.valid(p.x(), p.y())) return w;
  const PlaneHypothesis center = gt.at(p.x(), p.y());
  const Eigen::Vector3d xp = center.depth * camera.ray(pixel_center(p.x(), p.y()));
  for (int k = 0; k < kSupportCount; ++k) {
    if (k == kSupportCenter) continue;
    const Eigen::Vector2i q = p + support_offset(k);
    if (!gt.in_bounds(q.x(), q.y()) || !gt.valid(q.x(), q.y())) continue;
    const Eigen::Vector3d xq = gt.at(q.x(), q.y()).depth * camera.ray(pixel_center(q.x(), q.y()));
    const double distance = std::abs(center.normal.dot(xq - xp)) / center.depth;
    w[k] = distance < tau ? 1.0f : 0.0f;
  }
  return w;
}

const char* to_string(WeightSource source) {
  switch (source) {
    case WeightSource::kBilateral: return "bilateral";
    case WeightSource::kLoaded: return "file";
    case WeightSource::kGroundTruth: return "gt";
  }
  return "unknown";
}

namespace {

void store(CoplanarityMap& map, int x, int y, const SupportWeights& w) {
  for (int k = 0; k < kSupportCount; ++k) map.weights(x, y, k) = w[k];
}

}  // namespace

WeightProvider WeightProvider::bilateral(const Grid<float>& gray,
                                         double sigma_color,
                                         double sigma_distance) {
  if (!(sigma_color > 0.0) || !(sigma_distance > 0.0)) {
    throw ConfigError("bilateral sigmas must be positive");
  }
  CoplanarityMap map(gray.width(), gray.height());
  for (int y = 0; y < gray.height(); ++y)
    for (int x = 0; x < gray.width(); ++x)
      store(map, x, y, bilateral_weights({x, y}, gray, sigma_color, sigma_distance));
  return WeightProvider(WeightSource::kBilateral, std::move(map));
}

WeightProvider WeightProvider::loaded(const CoplanarityMap& source, int width,
                                      int height) {
  if (source.width() == width && source.height() == height) {
    return WeightProvider(WeightSource::kLoaded, source);
  }
  if (source.width() == 0 || source.height() == 0) {
    throw ConfigError("empty coplanarity map");
  }
  CoplanarityMap map(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = static_cast<int>(static_cast<long>(y) * source.height() / height);
    for (int x = 0; x < width; ++x) {
      const int sx = static_cast<int>(static_cast<long>(x) * source.width() / width);
      for (int k = 0; k < kSupportCount; ++k) map.weights(x, y, k) = source.weights(sx, sy, k);
    }
  }
  return WeightProvider(WeightSource::kLoaded, std::move(map));
}

WeightProvider WeightProvider::ground_truth(const GeometryMap& gt,
                                            const CameraView& camera,
                                            double tau) {
  if (!(tau > 0.0)) throw ConfigError("coplanarity tolerance must be positive");
  CoplanarityMap map(gt.width(), gt.height());
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x)
      store(map, x, y, gt_coplanarity({x, y}, gt, camera, tau));
  return WeightProvider(WeightSource::kGroundTruth, std::move(map));
}

SupportWeights WeightProvider::weights(int x, int y) const {
  SupportWeights w;
  const auto px = map_.weights.pixel(x, y);
  std::copy(px.begin(), px.end(), w.begin());
  return w;
}

Grid<float> matching_features(const Grid<float>& gradient_level) {
  const int w = gradient_level.width(), h = gradient_level.height();
  const int intensity_channels = gradient_level.channels() - 2;
  assert(intensity_channels >= 1);
  Grid<float> intensity(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float sum = 0.0f;
      for (int c = 0; c < intensity_channels; ++c) sum += gradient_level(x, y, c);
      intensity(x, y) = sum / static_cast<float>(intensity_channels);
    }
  }
  constexpr int kRadius = 2;
  Grid<float> out(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      int count = 0;
      for (int dy = -kRadius; dy <= kRadius; ++dy) {
        for (int dx = -kRadius; dx <= kRadius; ++dx) {
          if (!intensity.in_bounds(x + dx, y + dy)) continue;
          sum += intensity(x + dx, y + dy);
          ++count;
        }
      }
      out(x, y, 0) = intensity(x, y) - static_cast<float>(sum / count);
      out(x, y, 1) = gradient_level(x, y, intensity_channels);
      out(x, y, 2) = gradient_level(x, y, intensity_channels + 1);
    }
  }
  return out;
}

FeaturePyramid matching_pyramid(const Grid<float>& gray) {
  const FeaturePyramid base = build_pyramid(gray, FeatureSource::kGradient);
  std::vector<PyramidLevel> levels;
  for (const auto& level : base.levels()) {
    levels.push_back({level.scale, matching_features(level.data)});
  }
  return FeaturePyramid(std::move(levels), FeatureSource::kGradient);
}

}  // namespace pmvs
