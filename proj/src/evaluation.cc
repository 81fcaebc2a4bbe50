#include "pmvs/evaluation.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "pmvs/error.h"

namespace pmvs {

double f1_score(double accuracy, double completeness) {
  const double sum = accuracy + completeness;
  return sum > 0.0 ? 2.0 * accuracy * completeness / sum : 0.0;
}

std::size_t PointIndex::KeyHash::operator()(const Key& k) const {
  std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9e3779b97f4a7c15ull;
  h ^= static_cast<std::uint64_t>(k.y) * 0xc2b2ae3d27d4eb4full + (h << 6) + (h >> 2);
  h ^= static_cast<std::uint64_t>(k.z) * 0x165667b19e3779f9ull + (h << 6) + (h >> 2);
  return static_cast<std::size_t>(h);
}

PointIndex::Key PointIndex::key_of(const Eigen::Vector3d& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell_)),
          static_cast<std::int64_t>(std::floor(p.y() / cell_)),
          static_cast<std::int64_t>(std::floor(p.z() / cell_))};
}

PointIndex::PointIndex(std::span<const Eigen::Vector3d> points, double cell)
    : points_(points.begin(), points.end()), cell_(cell) {
  if (!(cell > 0.0)) throw ConfigError("index cell size must be positive");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    cells_[key_of(points_[i])].push_back(static_cast<std::uint32_t>(i));
  }
}

bool PointIndex::any_within(const Eigen::Vector3d& q, double radius) const {
  const Key c = key_of(q);
  const auto reach = static_cast<std::int64_t>(std::ceil(radius / cell_));
  const double r2 = radius * radius;
  for (std::int64_t dz = -reach; dz <= reach; ++dz) {
    for (std::int64_t dy = -reach; dy <= reach; ++dy) {
      for (std::int64_t dx = -reach; dx <= reach; ++dx) {
        const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
        if (it == cells_.end()) continue;
        for (std::uint32_t i : it->second) {
          if ((points_[i] - q).squaredNorm() <= r2) return true;
        }
      }
    }
  }
  return false;
}

namespace {

double matched_percent(std::span<const Eigen::Vector3d> queries,
                       const PointIndex& index, double radius, int threads) {
  if (queries.empty()) return 0.0;
  long matched = 0;
  const long n = static_cast<long>(queries.size());
#pragma omp parallel for reduction(+ : matched) schedule(static) num_threads(std::max(1, threads))
  for (long i = 0; i < n; ++i) {
    if (index.any_within(queries[i], radius)) ++matched;
  }
  return 100.0 * static_cast<double>(matched) / static_cast<double>(n);
}

}  // namespace

EvalReport evaluate(std::span<const Eigen::Vector3d> cloud,
                    std::span<const Eigen::Vector3d> gt,
                    std::span<const double> thresholds, int threads) {
  EvalReport report;
  report.cloud_points = cloud.size();
  report.gt_points = gt.size();
  report.empty_cloud = cloud.empty();
  report.empty_gt = gt.empty();
  if (thresholds.empty()) return report;
  for (double t : thresholds) {
    if (!(t > 0.0)) throw ConfigError("evaluation thresholds must be positive");
  }
  const double cell = *std::max_element(thresholds.begin(), thresholds.end());
  const PointIndex cloud_index(cloud, cell);
  const PointIndex gt_index(gt, cell);
  for (double t : thresholds) {
    ThresholdScore s;
    s.threshold = t;
    s.accuracy = matched_percent(cloud, gt_index, t, threads);
    s.completeness = matched_percent(gt, cloud_index, t, threads);
    s.f1 = f1_score(s.accuracy, s.completeness);
    report.scores.push_back(s);
  }
  return report;
}

double reward_density(double depth_error, double angle, double sigma_d,
                      double sigma_n) {
  const double depth_term = std::exp(-depth_error * depth_error / (2.0 * sigma_d * sigma_d)) /
                            (std::sqrt(2.0 * std::numbers::pi) * sigma_d);
  const double normal_term = std::exp(-angle * angle / (2.0 * sigma_n * sigma_n)) /
                             (std::sqrt(2.0 * std::numbers::pi) * sigma_n);
  return depth_term * normal_term;
}

RewardStats reward_stats(std::vector<double> values) {
  RewardStats s;
  s.pixels = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  s.median = values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  return s;
}

RewardStats RewardField::stats() const {
  std::vector<double> values;
  for (int y = 0; y < reward.height(); ++y) {
    for (int x = 0; x < reward.width(); ++x) {
      if (mask(x, y)) values.push_back(reward(x, y));
    }
  }
  return reward_stats(std::move(values));
}

RewardField geometry_reward(const GeometryMap& estimate, const GeometryMap& gt,
                            double sigma_d, double sigma_n) {
  if (!(sigma_d > 0.0) || !(sigma_n > 0.0)) {
    throw ConfigError("reward sigmas must be positive");
  }
  if (estimate.width() != gt.width() || estimate.height() != gt.height()) {
    throw ConfigError("reward maps must have the same size");
  }
  const int w = gt.width(), h = gt.height();
  RewardField field{Grid<double>(w, h, 1, 0.0), Grid<std::uint8_t>(w, h, 1, 0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!estimate.valid(x, y) || !gt.valid(x, y)) continue;
      const PlaneHypothesis e = estimate.at(x, y);
      const PlaneHypothesis g = gt.at(x, y);
      const double cosine = std::clamp(e.normal.dot(g.normal) / (e.normal.norm() * g.normal.norm()), -1.0, 1.0);
      field.reward(x, y) = reward_density(e.depth - g.depth, std::acos(cosine), sigma_d, sigma_n);
      field.mask(x, y) = 1;
    }
  }
  return field;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  out << "points: " << report.cloud_points << " reconstructed, " << report.gt_points
      << " ground truth\n";
  if (report.empty_cloud) out << "warning: reconstructed cloud is empty\n";
  if (report.empty_gt) out << "warning: ground-truth cloud is empty\n";
  out << std::fixed << std::setprecision(2);
  for (const auto& s : report.scores) {
    out << "tau " << std::setprecision(6) << s.threshold << std::setprecision(2)
        << ": accuracy " << s.accuracy << "%  completeness " << s.completeness
        << "%  F1 " << s.f1 << "%\n";
  }
  if (report.has_reward) {
    out << std::setprecision(6) << "reward over " << report.reward.pixels
        << " pixels: mean " << report.reward.mean << " median " << report.reward.median << "\n";
  }
  return out.str();
}

std::string format_key_values(const EvalReport& report) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "cloud_points=" << report.cloud_points << "\n";
  out << "gt_points=" << report.gt_points << "\n";
  out << "empty_cloud=" << (report.empty_cloud ? 1 : 0) << "\n";
  out << "empty_gt=" << (report.empty_gt ? 1 : 0) << "\n";
  for (std::size_t i = 0; i < report.scores.size(); ++i) {
    const auto& s = report.scores[i];
    out << "threshold." << i << "=" << s.threshold << "\n";
    out << "accuracy." << i << "=" << s.accuracy << "\n";
    out << "completeness." << i << "=" << s.completeness << "\n";
    out << "f1." << i << "=" << s.f1 << "\n";
  }
  if (report.has_reward) {
    out << "reward.pixels=" << report.reward.pixels << "\n";
    out << "reward.mean=" << report.reward.mean << "\n";
    out << "reward.median=" << report.reward.median << "\n";
  }
  return out.str();
}

}  // namespace pmvs
