#pragma once

// Pose and rotation algebra, forward kinematics on a fixed skeleton, and the
// rigid ground-plane normalization used to stitch generated actions.
//
// Conventions: z is up, the rest pose faces -y, positions are in meters.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace marionette::motion {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
// One row of 6 numbers per joint: the first two columns of its rotation.
using RotationRows = Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>;

inline constexpr double kDefaultFrameRate = 30.0;

// Gram-Schmidt on the two stacked 3-vectors; third column is their cross
// product. Throws DegenerateInput when either basis vector collapses.
Mat3 sixd_to_rotation_matrix(const Vec6& r6);

// First two columns of an orthonormal matrix. Throws NotARotation when the
// matrix is not orthonormal within 1e-5 or is a reflection.
Vec6 rotation_matrix_to_sixd(const Mat3& m);

Mat3 rotation_z(double yaw);

// Wraps an angle into (-pi, pi].
double wrap_angle(double angle);

// Heading of a root rotation: the forward axis (-y) is rotated and projected
// onto the ground plane. Returns 0 when the projection is shorter than 1e-6.
double extract_yaw(const Mat3& root_rotation);

struct Pose {
  Vec3 root_translation = Vec3::Zero();
  RotationRows joint_rotations;

  static Pose identity(int joint_count);

  int joint_count() const { return static_cast<int>(joint_rotations.rows()); }
  Vec6 rotation(int joint) const { return joint_rotations.row(joint).transpose(); }
  Mat3 rotation_matrix(int joint) const { return sixd_to_rotation_matrix(rotation(joint)); }

  // Exact element-wise equality (shapes must match too).
  bool operator==(const Pose& other) const;
};

struct MotionClip {
  std::vector<Pose> poses;
  double frame_rate = kDefaultFrameRate;
  std::optional<int> tag;

  std::size_t size() const { return poses.size(); }
  bool empty() const { return poses.empty(); }
  int joint_count() const { return poses.empty() ? 0 : poses.front().joint_count(); }
  const Pose& front() const { return poses.front(); }
  const Pose& back() const { return poses.back(); }

  // Frames [begin, end) as a new clip with the same rate and tag.
  MotionClip slice(std::size_t begin, std::size_t end) const;
  // Last n frames (or all of them when shorter).
  MotionClip tail(std::size_t n) const;

  // Throws SchemaError on an empty clip, non-positive rate, mixed joint counts
  // or non-finite values.
  void validate() const;

  bool operator==(const MotionClip& other) const;
};

struct Skeleton {
  std::string name;
  std::vector<std::string> joint_names;
  std::vector<int> parents;
  std::vector<Vec3> offsets;

  int joint_count() const { return static_cast<int>(parents.size()); }

  // Parents must precede children so a single forward sweep suffices.
  void validate() const;

  // 22-joint SMPL-like topology with hand-tuned mean-adult offsets.
  static Skeleton smpl22();
  // Three-joint chain used by small test configurations.
  static Skeleton chain(int joint_count, double bone_length = 0.25);

  // Structured text: {"name": ..., "joints": [{"name", "parent", "offset"}]}.
  static Skeleton load(const std::string& path);
  void save(const std::string& path) const;
  // Accepts a built-in name ("smpl22", "chain3") or a file path.
  static Skeleton resolve(const std::string& reference);
};

// Rotation about the vertical axis followed by a translation.
struct RigidFrame {
  double yaw = 0.0;
  Vec3 translation = Vec3::Zero();

  // Ground-plane anchor of a pose: its heading and planar root position.
  static RigidFrame anchor_of(const Pose& pose);

  RigidFrame inverse() const;
  Vec3 apply(const Vec3& p) const;
  Vec2 apply_planar(const Vec2& p) const;
  Pose apply(const Pose& pose) const;
  MotionClip apply(const MotionClip& clip) const;
};

// Joint positions in meters, root first, in skeleton order.
std::vector<Vec3> forward_kinematics(const Pose& pose, const Skeleton& skeleton);

// Re-expresses the clip so its last pose has zero heading and zero planar
// root translation. Returns the anchor needed to undo it.
std::pair<MotionClip, RigidFrame> normalize_clip(const MotionClip& clip);
// Same as normalize_clip but anchored at an arbitrary frame.
std::pair<MotionClip, RigidFrame> normalize_clip_at(const MotionClip& clip, std::size_t anchor_index);

MotionClip denormalize_clip(const MotionClip& clip, const RigidFrame& frame);

// n_frames transition poses between tail.back() and head.front(): rotations by
// shortest-arc quaternion slerp, root translation linearly, at t = i/(n+1).
MotionClip slerp_blend(const MotionClip& tail, const MotionClip& head, int n_frames);

// Rounds every value to the nearest float32, the precision stored on disk.
MotionClip quantize_to_float(const MotionClip& clip);

}  // namespace marionette::motion
