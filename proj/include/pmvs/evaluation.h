#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "pmvs/grid.h"
#include "pmvs/maps.h"

namespace pmvs {

struct ThresholdScore {
  double threshold = 0.0;
  double accuracy = 0.0;      // percent of reconstructed points near GT
  double completeness = 0.0;  // percent of GT points near the reconstruction
  double f1 = 0.0;
};

struct RewardStats {
  std::size_t pixels = 0;
  double mean = 0.0;
  double median = 0.0;
};

struct EvalReport {
  std::vector<ThresholdScore> scores;
  std::size_t cloud_points = 0;
  std::size_t gt_points = 0;
  bool empty_cloud = false;
  bool empty_gt = false;
  bool has_reward = false;
  RewardStats reward;
};

double f1_score(double accuracy, double completeness);

// Uniform voxel grid answering "is any point within `radius`" queries.
class PointIndex {
 public:
  PointIndex(std::span<const Eigen::Vector3d> points, double cell);
  bool any_within(const Eigen::Vector3d& q, double radius) const;

 private:
  struct Key {
    std::int64_t x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };
  Key key_of(const Eigen::Vector3d& p) const;

  std::vector<Eigen::Vector3d> points_;
  double cell_;
  std::unordered_map<Key, std::vector<std::uint32_t>, KeyHash> cells_;
};

// A point counts as matched when its nearest neighbour lies within the
// threshold (inclusive).
EvalReport evaluate(std::span<const Eigen::Vector3d> cloud,
                    std::span<const Eigen::Vector3d> gt,
                    std::span<const double> thresholds, int threads = 1);

// Product of Gaussian densities in depth error and normal angle (radians).
double reward_density(double depth_error, double angle, double sigma_d,
                      double sigma_n);

// Mean and median (average of the middle pair for even counts).
RewardStats reward_stats(std::vector<double> values);

struct RewardField {
  Grid<double> reward;
  Grid<std::uint8_t> mask;  // 1 where both maps are valid
  RewardStats stats() const;
};

// Throws ConfigError for sigma <= 0 or mismatched map sizes.
RewardField geometry_reward(const GeometryMap& estimate, const GeometryMap& gt,
                            double sigma_d, double sigma_n);

inline constexpr double kDefaultSigmaNormal = 0.1;
inline double default_sigma_depth(double depth_min, double depth_max) {
  return 0.01 * (depth_max - depth_min);
}

std::string format_report(const EvalReport& report);
std::string format_key_values(const EvalReport& report);

}  // namespace pmvs
