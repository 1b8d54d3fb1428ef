#pragma once

// Annotation preprocessing: cubic Bezier fitting of hand-drawn ground-plane
// curves, per-frame trajectory sampling, in-place segments, and the check that
// keeps the starting body orientation consistent with the path direction.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "marionette/motion.hpp"

namespace marionette::trajectory {

using motion::Vec2;

struct BezierCurve {
  std::array<Vec2, 4> control_points{Vec2::Zero(), Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};

  // Direct evaluation of the cubic Bernstein form at t in [0, 1].
  Vec2 evaluate(double t) const;
  bool is_point() const;
};

struct BezierFit {
  BezierCurve curve;
  double rms_error = 0.0;
  bool degenerate = false;  // every input point coincides
};

// Endpoints interpolate the first/last point; the two inner control points are
// the least-squares solution over a chord-length parameterization, then refined
// jointly with the per-point parameters by Levenberg-Marquardt.
// Throws InvalidArgument for fewer than two points.
BezierFit fit_bezier(const std::vector<Vec2>& points);

// Frame n = 1..frames sampled at t = n / frames, so the last sample is P3.
std::vector<Vec2> sample_bezier(const BezierCurve& curve, int frames);

enum class SegmentKind { Root, InPlace };

std::string_view to_string(SegmentKind kind);
SegmentKind segment_kind_from_string(std::string_view text);

struct Segment {
  SegmentKind kind = SegmentKind::Root;
  int tag = 0;
  int duration = 0;
  // Root segments cover polyline[begin..end] inclusive; in-place segments sit
  // on the single anchor point polyline[begin] (end == begin).
  int begin = 0;
  int end = 0;
};

struct Annotation {
  std::vector<Vec2> polyline;
  std::vector<Segment> segments;
};

struct ValidationIssue {
  std::string field;
  std::string message;
};

// Empty when the annotation is usable. Root slices must be chained in order
// (each begins where the previous root slice ended) and in-place anchors may
// not step backwards along the curve.
std::vector<ValidationIssue> validate(const Annotation& annotation, int tag_count);

enum class TrajectoryFrame {
  // World coordinates. When an origin is given the path is first shifted so
  // the origin lands on the root of the pose that starts the action.
  Global,
  // Already expressed relative to the starting pose (its heading is -y and
  // its root is at the planar origin).
  Local,
};

struct ActionRequest {
  int tag = 0;
  int duration = 0;
  // Ground-plane positions for frames 1..duration. In-place actions carry
  // zeros in the local frame; nullopt is treated the same way.
  std::optional<std::vector<Vec2>> trajectory;
  TrajectoryFrame frame = TrajectoryFrame::Global;
  std::optional<Vec2> origin;
};

// One request per segment in annotation order. Throws SchemaError when
// validate() reports issues.
std::vector<ActionRequest> preprocess_annotation(const Annotation& annotation, int tag_count);

struct AngleRange {
  double lo = -3.141592653589793;
  double hi = 3.141592653589793;
};

struct OrientationCheck {
  double yaw = 0.0;
  double angle = 0.0;        // facing-to-path angle before correction
  bool corrected = false;
  bool undefined_direction = false;
};

// Head direction runs from the first to the last of up to six samples. When
// the signed angle between facing and that direction leaves valid_range the
// yaw is rotated by the smallest amount that lands it on the nearer bound.
OrientationCheck orientation_check(double bop_yaw, const std::vector<Vec2>& trajectory_head,
                                   const AngleRange& valid_range);

// Signed facing-to-path angle of a head relative to a yaw; nullopt when the
// head has no direction.
std::optional<double> heading_angle(double yaw, const std::vector<Vec2>& trajectory_head);

// [1st, 99th] percentile of a sample of angles.
AngleRange percentile_range(std::vector<double> angles);

}  // namespace marionette::trajectory
