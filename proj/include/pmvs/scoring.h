#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "pmvs/geometry.h"
#include "pmvs/grid.h"
#include "pmvs/image_io.h"
#include "pmvs/maps.h"

namespace pmvs {

// Log-disbelief range. The photometric term spans [0, S_max]; each visible
// view adds at most G_max pixels of reprojection error.
inline constexpr double kDefaultSMax = 12.0;
inline constexpr double kDefaultGMax = 3.0;

using SupportWeights = std::array<float, kSupportCount>;

// Bit k set = supporting pixel k participates. The centre is always scored.
using SupportSet = std::uint16_t;
inline constexpr SupportSet kFullSupport = 0x1ff;
inline constexpr SupportSet kCenterOnly = SupportSet{1} << kSupportCenter;

inline bool in_support(SupportSet set, int k) { return (set >> k) & 1u; }

// Per-group normalised dot product. A group with zero norm on either side
// correlates to 0. `a.size()` must be divisible by `groups`.
void groupwise_correlation(std::span<const float> a, std::span<const float> b,
                           int groups, std::span<float> out);
std::vector<float> groupwise_correlation(std::span<const float> a,
                                         std::span<const float> b, int groups);

// Bilinear sample at continuous position `p` (pixel centres at +0.5).
// Returns false when the 2x2 footprint leaves the grid.
bool sample_bilinear(const Grid<float>& grid, const Pixel& p,
                     std::span<float> out);

// Weighted mean over the active supporting pixels of the group-wise
// correlation between ref features at q and src features at H*q. Weights are
// renormalised over the supports that are inside both images. Returns false
// (SupportUnavailable) when none is.
bool aggregate_support(const Eigen::Vector2i& p, const Eigen::Matrix3d& H,
                       const Grid<float>& ref_features,
                       const Grid<float>& src_features,
                       const SupportWeights& weights, SupportSet support,
                       int groups, std::span<float> out);

std::optional<std::vector<float>> aggregate_support(
    const Eigen::Vector2i& p, const PlaneHypothesis& hyp,
    const CameraView& ref, const Grid<float>& ref_features,
    const CameraView& src, const Grid<float>& src_features,
    const SupportWeights& weights, SupportSet support, int groups);

// S_max * (1 - mean(corr)) / 2 for one view.
double view_disbelief(std::span<const float> corr, double s_max);

// Visibility-weighted mean of per-view disbeliefs; S_max when no view is
// visible.
double combine_disbelief(std::span<const double> per_view,
                         std::span<const float> visibility, double s_max);

// Per view: the aggregated correlation, or nullopt when unavailable (scored
// as S_max).
double photometric_disbelief(
    std::span<const std::optional<std::vector<float>>> per_view_corr,
    std::span<const float> visibility, double s_max);

// sum_i v_i * (S_pho + min(E_i, G_max)). Unavailable errors are +inf.
double geometric_score(double s_pho, std::span<const double> errors,
                       std::span<const float> visibility, double g_max);

// Same, computing E_i with reprojection_error against each source map.
// OutOfView / InvalidNeighbor contribute G_max.
double geometric_score(const Pixel& p, const PlaneHypothesis& hyp,
                       double s_pho, const CameraView& ref,
                       std::span<const CameraView> sources,
                       std::span<const GeometryMap* const> source_geometry,
                       std::span<const float> visibility, double g_max);

inline constexpr double kDefaultSigmaColor = 0.1;
inline constexpr double kDefaultSigmaDistance = 3.0;
inline constexpr double kDefaultCoplanarTolerance = 0.01;

// exp(-dc^2 / 2 sc^2) * exp(-dd^2 / 2 sd^2) on intensity `gray` (channel 0).
// Out-of-bounds supports get weight 0; the centre gets 1.
SupportWeights bilateral_weights(const Eigen::Vector2i& p,
                                 const Grid<float>& gray, double sigma_color,
                                 double sigma_distance);

// 1 where the neighbour's ground-truth point lies within tau * depth(p) of the
// tangent plane at p (strict), else 0. Invalid neighbours get 0.
SupportWeights gt_coplanarity(const Eigen::Vector2i& p, const GeometryMap& gt,
                              const CameraView& camera, double tau);

enum class WeightSource { kBilateral, kLoaded, kGroundTruth };

const char* to_string(WeightSource source);

// Supporting-pixel weights for every pixel of one pyramid level. Immutable
// once built.
class WeightProvider {
 public:
  static WeightProvider bilateral(const Grid<float>& gray,
                                  double sigma_color = kDefaultSigmaColor,
                                  double sigma_distance = kDefaultSigmaDistance);
  // `map` is resampled (nearest) onto a width x height grid when needed.
  static WeightProvider loaded(const CoplanarityMap& map, int width,
                               int height);
  static WeightProvider ground_truth(const GeometryMap& gt,
                                     const CameraView& camera,
                                     double tau = kDefaultCoplanarTolerance);

  WeightSource source() const { return source_; }
  int width() const { return map_.width(); }
  int height() const { return map_.height(); }
  SupportWeights weights(int x, int y) const;
  const CoplanarityMap& map() const { return map_; }

 private:
  WeightProvider(WeightSource source, CoplanarityMap map)
      : source_(source), map_(std::move(map)) {}

  WeightSource source_;
  CoplanarityMap map_;
};

// Baseline matching features for one gradient-mode pyramid level: intensity
// minus its local 5x5 mean, followed by the x/y gradient channels.
Grid<float> matching_features(const Grid<float>& gradient_level);

// Gradient pyramid of a grayscale image turned into matching features.
FeaturePyramid matching_pyramid(const Grid<float>& gray);

}  // namespace pmvs
