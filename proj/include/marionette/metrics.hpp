#pragma once

// Distribution and motion-quality metrics over classifier features and joint
// positions. Distances are reported in centimeters.

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "marionette/motion.hpp"

namespace marionette::metrics {

using Feature = Eigen::VectorXd;

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  // Sample mean and unbiased covariance. Throws TooFew below two features.
  static GaussianStats fit(const std::vector<Feature>& features);
  int dim() const { return static_cast<int>(mean.size()); }
};

// |mu_a - mu_b|^2 + tr(A + B - 2 (A B)^(1/2)), the cross term taken from the
// eigenvalues of A^(1/2) B A^(1/2) clamped at zero. Throws DimensionMismatch.
double fid(const GaussianStats& a, const GaussianStats& b);

// Shuffles under seed, drops the last element of an odd list and averages the
// L2 distance between the two halves. Throws TooFew below two features.
double diversity(const std::vector<Feature>& features, std::uint64_t seed);

struct Multimodality {
  double value = 0.0;
  std::vector<int> excluded_tags;  // fewer than two members
};

// Per-tag diversity averaged over tags with at least two members. Throws
// TooFew when no tag qualifies.
Multimodality multimodality(const std::map<int, std::vector<Feature>>& by_tag, std::uint64_t seed);

// Mean per-frame, per-joint position distance. Throws ShapeError.
double jpe(const motion::MotionClip& pred, const motion::MotionClip& gt, const motion::Skeleton& skeleton);

struct TransitionGap {
  double delta_pose = 0.0;              // cm
  std::optional<double> delta_velocity;  // cm/frame; empty when a clip has one frame
};

TransitionGap transition_gaps(const motion::MotionClip& prev, const motion::MotionClip& cur,
                              const motion::Skeleton& skeleton);

// Median over all clips of the mean per-joint displacement between
// consecutive frames (cm).
double median_frame_displacement(const std::vector<motion::MotionClip>& clips, const motion::Skeleton& skeleton);

// Mean over motions of the fraction of correctly classified actions. Throws
// Empty on no motions or a motion without actions.
double action_qr(const std::vector<std::vector<bool>>& per_motion_correct);
// Fraction of motions whose actions are all correct. Throws Empty.
double motion_qr(const std::vector<bool>& per_motion_all_correct);

}  // namespace marionette::metrics
