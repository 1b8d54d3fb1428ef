#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "marionette/error.hpp"
#include "marionette/motion.hpp"
#include "support/generators.hpp"

using namespace marionette;
using namespace marionette::motion;

namespace {

Vec6 sixd(double a, double b, double c, double d, double e, double f) {
  Vec6 v;
  v << a, b, c, d, e, f;
  return v;
}

Pose single_joint_pose(double yaw, const Vec3& translation) {
  Pose p = Pose::identity(1);
  p.root_translation = translation;
  p.joint_rotations.row(0) = rotation_matrix_to_sixd(rotation_z(yaw)).transpose();
  return p;
}

}  // namespace

TEST_CASE("6D to rotation matrix examples") {
  CHECK(sixd_to_rotation_matrix(sixd(1, 0, 0, 0, 1, 0)).isApprox(Mat3::Identity(), 1e-12));
  CHECK(sixd_to_rotation_matrix(sixd(2, 0, 0, 0, 3, 0)).isApprox(Mat3::Identity(), 1e-12));

  const double h = std::sqrt(2.0) / 2.0;
  Mat3 expected;
  expected.col(0) = Vec3(h, h, 0);
  expected.col(1) = Vec3(-h, h, 0);
  expected.col(2) = Vec3(0, 0, 1);
  CHECK((sixd_to_rotation_matrix(sixd(1, 1, 0, 0, 1, 0)) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("6D conversion rejects collapsed bases") {
  CHECK_THROWS_AS(sixd_to_rotation_matrix(sixd(0, 0, 0, 0, 1, 0)), Error);
  CHECK_THROWS_AS(sixd_to_rotation_matrix(sixd(1, 0, 0, 2, 0, 0)), Error);
  try {
    sixd_to_rotation_matrix(sixd(1, 0, 0, 2, 0, 0));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateInput);
  }
}

TEST_CASE("rotation matrix to 6D examples") {
  CHECK(rotation_matrix_to_sixd(Mat3::Identity()) == sixd(1, 0, 0, 0, 1, 0));
  Mat3 rz;
  rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((rotation_matrix_to_sixd(rz) - sixd(0, 1, 0, -1, 0, 0)).cwiseAbs().maxCoeff() < 1e-15);

  Mat3 scaled = 2.0 * Mat3::Identity();
  CHECK_THROWS_AS(rotation_matrix_to_sixd(scaled), Error);
  Mat3 reflection = Mat3::Identity();
  reflection(2, 2) = -1.0;
  CHECK_THROWS_AS(rotation_matrix_to_sixd(reflection), Error);
}

TEST_CASE("property: 6D output is a proper rotation and round trips") {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Vec6 r6 = testing::random_sixd(rng);
    const Mat3 m = sixd_to_rotation_matrix(r6);
    REQUIRE(std::abs(m.determinant() - 1.0) < 1e-6);
    REQUIRE(((m.transpose() * m) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    // Idempotent after the first projection.
    const Mat3 again = sixd_to_rotation_matrix(rotation_matrix_to_sixd(m));
    REQUIRE((again - m).cwiseAbs().maxCoeff() < 1e-6);

    const Mat3 r = testing::random_rotation(rng);
    REQUIRE((sixd_to_rotation_matrix(rotation_matrix_to_sixd(r)) - r).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("yaw extraction and wrapping") {
  for (double yaw : {0.0, 0.3, -1.2, 2.9, std::numbers::pi}) {
    CHECK(extract_yaw(rotation_z(yaw)) == doctest::Approx(yaw).epsilon(1e-12));
  }
  // Facing straight down: no planar heading.
  Mat3 pitch = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitX()).toRotationMatrix();
  CHECK(extract_yaw(pitch) == 0.0);
  CHECK(wrap_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(wrap_angle(3 * std::numbers::pi) == doctest::Approx(std::numbers::pi));
}

TEST_CASE("forward kinematics examples") {
  const Skeleton sk = Skeleton::smpl22();
  const Pose rest = Pose::identity(sk.joint_count());
  const auto pos = forward_kinematics(rest, sk);
  for (int j = 0; j < sk.joint_count(); ++j) {
    Vec3 cumulative = Vec3::Zero();
    for (int k = j; k > 0; k = sk.parents[k]) cumulative += sk.offsets[k];
    CHECK((pos[j] - cumulative).norm() < 1e-12);
  }

  Skeleton two;
  two.parents = {-1, 0};
  two.offsets = {Vec3::Zero(), Vec3(1, 0, 0)};
  Pose p = single_joint_pose(std::numbers::pi / 2, Vec3::Zero());
  p.joint_rotations.conservativeResize(2, 6);
  p.joint_rotations.row(1) << 1, 0, 0, 0, 1, 0;
  const auto child = forward_kinematics(p, two)[1];
  CHECK((child - Vec3(0, 1, 0)).norm() < 1e-12);

  Pose moved = rest;
  moved.root_translation = Vec3(0.3, -1.0, 0.2);
  const auto shifted = forward_kinematics(moved, sk);
  for (int j = 0; j < sk.joint_count(); ++j) CHECK((shifted[j] - pos[j] - moved.root_translation).norm() < 1e-12);

  CHECK_THROWS_AS(forward_kinematics(Pose::identity(3), sk), Error);
}

TEST_CASE("property: forward kinematics is equivariant under rigid frames") {
  Rng rng(5);
  const Skeleton sk = Skeleton::smpl22();
  for (int i = 0; i < 200; ++i) {
    const Pose p = testing::random_pose(rng, sk.joint_count());
    RigidFrame f{rng.uniform(-3.14, 3.14), Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-1, 1))};
    const auto a = forward_kinematics(f.apply(p), sk);
    const auto b = forward_kinematics(p, sk);
    for (int j = 0; j < sk.joint_count(); ++j) REQUIRE((a[j] - f.apply(b[j])).norm() < 1e-6);
  }
}

TEST_CASE("rigid frame inverse is exact") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    RigidFrame f{wrap_angle(rng.uniform(-4, 4)), Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3))};
    CHECK(f.yaw > -std::numbers::pi);
    CHECK(f.yaw <= std::numbers::pi);
    const Vec3 p(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    CHECK((f.inverse().apply(f.apply(p)) - p).norm() < 1e-9);
  }
}

TEST_CASE("normalize clip examples") {
  MotionClip clip;
  clip.poses = {single_joint_pose(0.4, Vec3(1, 1, 1)), single_joint_pose(0.0, Vec3(0, 0, 0.9))};
  auto [same, frame] = normalize_clip(clip);
  CHECK(frame.yaw == 0.0);
  CHECK(frame.translation.isZero());
  CHECK(testing::max_abs_diff(same, clip) < 1e-15);

  MotionClip one;
  one.poses = {single_joint_pose(std::numbers::pi / 2, Vec3(1, 2, 0))};
  auto [norm, anchor] = normalize_clip(one);
  CHECK(anchor.yaw == doctest::Approx(std::numbers::pi / 2));
  CHECK(norm.back().root_translation.norm() < 1e-12);
  CHECK(std::abs(extract_yaw(norm.back().rotation_matrix(0))) < 1e-12);

  CHECK_THROWS_AS(normalize_clip(MotionClip{}), Error);
}

TEST_CASE("property: denormalize inverts normalize") {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    const MotionClip clip = testing::random_clip(rng, 8, 5);
    auto [norm, frame] = normalize_clip(clip);
    REQUIRE(std::hypot(norm.back().root_translation.x(), norm.back().root_translation.y()) < 1e-9);
    REQUIRE(std::abs(extract_yaw(norm.back().rotation_matrix(0))) < 1e-9);
    REQUIRE(testing::max_abs_diff(denormalize_clip(norm, frame), clip) < 1e-6);
  }
}

TEST_CASE("denormalize with identity or a full turn") {
  Rng rng(4);
  const MotionClip clip = testing::random_clip(rng, 4, 3);
  CHECK(testing::max_abs_diff(denormalize_clip(clip, RigidFrame{}), clip) < 1e-15);
  const RigidFrame half{std::numbers::pi, Vec3::Zero()};
  const Skeleton sk = Skeleton::chain(3);
  const MotionClip twice = denormalize_clip(denormalize_clip(clip, half), half);
  for (std::size_t i = 0; i < clip.size(); ++i) {
    const auto a = forward_kinematics(twice.poses[i], sk);
    const auto b = forward_kinematics(clip.poses[i], sk);
    for (int j = 0; j < 3; ++j) CHECK((a[j] - b[j]).norm() < 1e-6);
  }
}

TEST_CASE("slerp blend examples") {
  MotionClip a;
  a.poses = {single_joint_pose(0.0, Vec3(0, 0, 1))};
  MotionClip b;
  b.poses = {single_joint_pose(std::numbers::pi / 2, Vec3(2, 0, 1))};

  const auto mid = slerp_blend(a, b, 1);
  REQUIRE(mid.size() == 1);
  CHECK(extract_yaw(mid.front().rotation_matrix(0)) == doctest::Approx(std::numbers::pi / 4).epsilon(1e-12));
  CHECK((mid.front().root_translation - Vec3(1, 0, 1)).norm() < 1e-12);

  const auto constant = slerp_blend(a, a, 5);
  REQUIRE(constant.size() == 5);
  for (const auto& p : constant.poses) CHECK((p.joint_rotations - a.front().joint_rotations).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(slerp_blend(a, b, 0), Error);
}

TEST_CASE("property: long slerp blends approach their endpoints") {
  Rng rng(8);
  const auto a = testing::random_clip(rng, 2, 4);
  const auto b = testing::random_clip(rng, 2, 4);
  const auto blend = slerp_blend(a, b, 100000);
  const Skeleton sk = Skeleton::chain(4);
  auto close = [&](const Pose& x, const Pose& y) {
    for (int j = 0; j < 4; ++j) {
      if ((x.rotation_matrix(j) - y.rotation_matrix(j)).cwiseAbs().maxCoeff() > 1e-4) return false;
    }
    return (x.root_translation - y.root_translation).norm() < 1e-4;
  };
  CHECK(close(blend.front(), a.back()));
  CHECK(close(blend.back(), b.front()));
}

TEST_CASE("shipped skeleton file matches the built-in topology") {
  const auto loaded = Skeleton::load(std::string(MARIONETTE_DATA_DIR) + "/skeleton_smpl22.json");
  const auto builtin = Skeleton::smpl22();
  CHECK(loaded.joint_names == builtin.joint_names);
  CHECK(loaded.parents == builtin.parents);
  for (int j = 0; j < builtin.joint_count(); ++j) CHECK(loaded.offsets[j] == builtin.offsets[j]);

  const auto path = std::filesystem::temp_directory_path() / "marionette_skeleton_roundtrip.json";
  builtin.save(path.string());
  CHECK(Skeleton::load(path.string()).parents == builtin.parents);

  Skeleton bad = builtin;
  bad.parents[3] = 7;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("clip validation") {
  MotionClip clip;
  CHECK_THROWS_AS(clip.validate(), Error);
  clip.poses = {Pose::identity(2), Pose::identity(3)};
  CHECK_THROWS_AS(clip.validate(), Error);
  clip.poses = {Pose::identity(2)};
  clip.frame_rate = 0.0;
  CHECK_THROWS_AS(clip.validate(), Error);
}
