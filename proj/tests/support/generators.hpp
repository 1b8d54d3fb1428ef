#pragma once

// Hand-rolled generators for property-style tests.

#include <cmath>
#include <numbers>

#include "marionette/motion.hpp"
#include "marionette/random.hpp"

namespace marionette::testing {

inline motion::Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

inline motion::Vec6 random_sixd(Rng& rng) {
  // Unnormalized but well-conditioned input: a rotation's columns, scaled and
  // sheared a little.
  const auto m = random_rotation(rng);
  motion::Vec6 r6;
  r6.head<3>() = m.col(0) * rng.uniform(0.5, 2.0);
  r6.tail<3>() = m.col(1) * rng.uniform(0.5, 2.0) + 0.3 * rng.uniform(-1.0, 1.0) * m.col(0);
  return r6;
}

inline motion::Pose random_pose(Rng& rng, int joints) {
  motion::Pose p;
  p.root_translation = motion::Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 1.2));
  p.joint_rotations.resize(joints, 6);
  for (int j = 0; j < joints; ++j) {
    p.joint_rotations.row(j) = motion::rotation_matrix_to_sixd(random_rotation(rng)).transpose();
  }
  return p;
}

inline motion::MotionClip random_clip(Rng& rng, int frames, int joints) {
  motion::MotionClip clip;
  for (int i = 0; i < frames; ++i) clip.poses.push_back(random_pose(rng, joints));
  return clip;
}

inline double max_abs_diff(const motion::MotionClip& a, const motion::MotionClip& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, (a.poses[i].root_translation - b.poses[i].root_translation).cwiseAbs().maxCoeff());
    worst = std::max(worst, (a.poses[i].joint_rotations - b.poses[i].joint_rotations).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace marionette::testing
