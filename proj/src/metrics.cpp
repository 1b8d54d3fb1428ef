#include "marionette/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "marionette/error.hpp"
#include "marionette/random.hpp"

namespace marionette::metrics {

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

std::vector<std::vector<motion::Vec3>> joint_positions(const motion::MotionClip& clip, const motion::Skeleton& skeleton) {
  std::vector<std::vector<motion::Vec3>> out;
  out.reserve(clip.size());
  for (const auto& pose : clip.poses) out.push_back(motion::forward_kinematics(pose, skeleton));
  return out;
}

double mean_distance(const std::vector<motion::Vec3>& a, const std::vector<motion::Vec3>& b) {
  double sum = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) sum += (a[j] - b[j]).norm();
  return sum / static_cast<double>(a.size());
}

constexpr double kCm = 100.0;

}  // namespace

GaussianStats GaussianStats::fit(const std::vector<Feature>& features) {
  if (features.size() < 2) throw Error(ErrorKind::TooFew, "Gaussian fit needs at least two features");
  const auto m = features.front().size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(features.size()), m);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != m) throw Error(ErrorKind::DimensionMismatch, "features differ in width");
    x.row(static_cast<Eigen::Index>(i)) = features[i].transpose();
  }
  GaussianStats s;
  s.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(features.size() - 1);
  return s;
}

double fid(const GaussianStats& a, const GaussianStats& b) {
  const auto m = a.mean.size();
  if (b.mean.size() != m || a.cov.rows() != m || a.cov.cols() != m || b.cov.rows() != m || b.cov.cols() != m) {
    throw Error(ErrorKind::DimensionMismatch, "statistics of width " + std::to_string(m) + " and " +
                                                  std::to_string(b.mean.size()));
  }
  const Eigen::MatrixXd ra = psd_sqrt(a.cov);
  const Eigen::MatrixXd inner = ra * b.cov * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(value, 0.0);
}

double diversity(const std::vector<Feature>& features, std::uint64_t seed) {
  if (features.size() < 2) throw Error(ErrorKind::TooFew, "diversity needs at least two features");
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t half = order.size() / 2;
  double sum = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    const auto& f = features[order[i]];
    const auto& g = features[order[half + i]];
    if (f.size() != g.size()) throw Error(ErrorKind::DimensionMismatch, "features differ in width");
    sum += (f - g).norm();
  }
  return sum / static_cast<double>(half);
}

Multimodality multimodality(const std::map<int, std::vector<Feature>>& by_tag, std::uint64_t seed) {
  Multimodality out;
  double sum = 0.0;
  int used = 0;
  for (const auto& [tag, features] : by_tag) {
    if (features.size() < 2) {
      out.excluded_tags.push_back(tag);
      continue;
    }
    sum += diversity(features, Rng::mix(seed, static_cast<std::uint64_t>(tag)));
    ++used;
  }
  if (used == 0) throw Error(ErrorKind::TooFew, "no tag has two features");
  out.value = sum / used;
  return out;
}

double jpe(const motion::MotionClip& pred, const motion::MotionClip& gt, const motion::Skeleton& skeleton) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw Error(ErrorKind::ShapeError, "JPE needs equal non-empty lengths, got " + std::to_string(pred.size()) +
                                           " and " + std::to_string(gt.size()));
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    sum += mean_distance(motion::forward_kinematics(pred.poses[t], skeleton),
                         motion::forward_kinematics(gt.poses[t], skeleton));
  }
  return kCm * sum / static_cast<double>(pred.size());
}

TransitionGap transition_gaps(const motion::MotionClip& prev, const motion::MotionClip& cur,
                              const motion::Skeleton& skeleton) {
  if (prev.empty() || cur.empty()) throw Error(ErrorKind::TooShort, "transition needs non-empty clips");
  const auto end = motion::forward_kinematics(prev.back(), skeleton);
  const auto start = motion::forward_kinematics(cur.front(), skeleton);
  TransitionGap gap;
  gap.delta_pose = kCm * mean_distance(end, start);
  if (prev.size() >= 2 && cur.size() >= 2) {
    const auto before = motion::forward_kinematics(prev.poses[prev.size() - 2], skeleton);
    const auto after = motion::forward_kinematics(cur.poses[1], skeleton);
    double sum = 0.0;
    for (std::size_t j = 0; j < end.size(); ++j) sum += ((end[j] - before[j]) - (after[j] - start[j])).norm();
    gap.delta_velocity = kCm * sum / static_cast<double>(end.size());
  }
  return gap;
}

double median_frame_displacement(const std::vector<motion::MotionClip>& clips, const motion::Skeleton& skeleton) {
  std::vector<double> steps;
  for (const auto& clip : clips) {
    const auto positions = joint_positions(clip, skeleton);
    for (std::size_t t = 1; t < positions.size(); ++t) steps.push_back(kCm * mean_distance(positions[t], positions[t - 1]));
  }
  if (steps.empty()) throw Error(ErrorKind::TooFew, "no consecutive frames");
  const auto mid = steps.begin() + static_cast<std::ptrdiff_t>(steps.size() / 2);
  std::nth_element(steps.begin(), mid, steps.end());
  if (steps.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(steps.begin(), mid);
  return 0.5 * (lower + upper);
}

double action_qr(const std::vector<std::vector<bool>>& per_motion_correct) {
  if (per_motion_correct.empty()) throw Error(ErrorKind::Empty, "no motions");
  double sum = 0.0;
  for (const auto& motion : per_motion_correct) {
    if (motion.empty()) throw Error(ErrorKind::Empty, "motion without actions");
    sum += static_cast<double>(std::count(motion.begin(), motion.end(), true)) / static_cast<double>(motion.size());
  }
  return sum / static_cast<double>(per_motion_correct.size());
}

double motion_qr(const std::vector<bool>& per_motion_all_correct) {
  if (per_motion_all_correct.empty()) throw Error(ErrorKind::Empty, "no motions");
  return static_cast<double>(std::count(per_motion_all_correct.begin(), per_motion_all_correct.end(), true)) /
         static_cast<double>(per_motion_all_correct.size());
}

}  // namespace marionette::metrics
