#include "marionette/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/Dense>

#include "marionette/error.hpp"

namespace marionette::trajectory {

namespace {

constexpr int kMaxRefinementSteps = 500;
constexpr std::size_t kHeadSamples = 6;

std::array<double, 4> bernstein(double t) {
  const double s = 1.0 - t;
  return {s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t};
}

Vec2 first_derivative(const BezierCurve& c, double t) {
  const auto& p = c.control_points;
  const double s = 1.0 - t;
  return 3.0 * s * s * (p[1] - p[0]) + 6.0 * s * t * (p[2] - p[1]) + 3.0 * t * t * (p[3] - p[2]);
}

// Inner control points for fixed parameters, as offsets from the straight-line
// thirds so underdetermined inputs fall back to a straight segment.
BezierCurve solve_inner(const std::vector<Vec2>& points, const std::vector<double>& params) {
  const std::size_t n = points.size();
  BezierCurve curve;
  auto& cp = curve.control_points;
  cp[0] = points.front();
  cp[3] = points.back();
  cp[1] = cp[0] + (cp[3] - cp[0]) / 3.0;
  cp[2] = cp[0] + 2.0 * (cp[3] - cp[0]) / 3.0;

  Eigen::MatrixXd a(n, 2);
  Eigen::MatrixXd rhs(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = bernstein(params[i]);
    a(static_cast<Eigen::Index>(i), 0) = b[1];
    a(static_cast<Eigen::Index>(i), 1) = b[2];
    const Vec2 r = points[i] - (b[0] * cp[0] + b[1] * cp[1] + b[2] * cp[2] + b[3] * cp[3]);
    rhs.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  const Eigen::MatrixXd delta = a.completeOrthogonalDecomposition().solve(rhs);
  cp[1] += delta.row(0).transpose();
  cp[2] += delta.row(1).transpose();
  return curve;
}

double rms(const BezierCurve& curve, const std::vector<Vec2>& points, const std::vector<double>& params) {
  double sum = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) sum += (curve.evaluate(params[i]) - points[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(points.size()));
}

// Joint Levenberg-Marquardt over the inner control points and the interior
// parameters.
std::pair<BezierCurve, double> refine_fit(const std::vector<Vec2>& points, std::vector<double> params) {
  BezierCurve best = solve_inner(points, params);
  double best_rms = rms(best, points, params);
  const std::size_t n = points.size();
  const std::size_t interior = n - 2;
  const auto unknowns = static_cast<Eigen::Index>(4 + interior);
  const auto residuals = static_cast<Eigen::Index>(2 * n);
  double damping = 1e-3;
  for (int step = 0; step < kMaxRefinementSteps && best_rms > 1e-14; ++step) {
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(residuals, unknowns);
    Eigen::VectorXd res(residuals);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = static_cast<Eigen::Index>(2 * i);
      const auto b = bernstein(params[i]);
      res.segment<2>(row) = best.evaluate(params[i]) - points[i];
      jac(row, 0) = jac(row + 1, 1) = b[1];
      jac(row, 2) = jac(row + 1, 3) = b[2];
      if (i > 0 && i + 1 < n) jac.block<2, 1>(row, static_cast<Eigen::Index>(4 + i - 1)) = first_derivative(best, params[i]);
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * res;
    bool improved = false;
    for (int attempt = 0; attempt < 12 && !improved; ++attempt) {
      Eigen::MatrixXd lhs = jtj;
      lhs.diagonal() += damping * (jtj.diagonal().array() + 1e-12).matrix();
      const Eigen::VectorXd delta = lhs.ldlt().solve(-jtr);
      BezierCurve candidate = best;
      candidate.control_points[1] += delta.segment<2>(0);
      candidate.control_points[2] += delta.segment<2>(2);
      std::vector<double> candidate_params = params;
      for (std::size_t i = 1; i + 1 < n; ++i) {
        candidate_params[i] = std::clamp(params[i] + delta(static_cast<Eigen::Index>(4 + i - 1)), 0.0, 1.0);
      }
      const double candidate_rms = rms(candidate, points, candidate_params);
      if (std::isfinite(candidate_rms) && candidate_rms < best_rms) {
        improved = true;
        best = candidate;
        params = std::move(candidate_params);
        best_rms = candidate_rms;
        damping = std::max(damping * 0.3, 1e-12);
      } else {
        damping *= 10.0;
      }
    }
    if (!improved) break;
  }
  return {best, best_rms};
}

}  // namespace

Vec2 BezierCurve::evaluate(double t) const {
  const auto b = bernstein(t);
  return b[0] * control_points[0] + b[1] * control_points[1] + b[2] * control_points[2] +
         b[3] * control_points[3];
}

bool BezierCurve::is_point() const {
  return control_points[0] == control_points[1] && control_points[1] == control_points[2] &&
         control_points[2] == control_points[3];
}

BezierFit fit_bezier(const std::vector<Vec2>& points) {
  if (points.size() < 2) throw Error(ErrorKind::InvalidArgument, "Bezier fit needs at least two points");
  for (const auto& p : points) {
    if (!p.allFinite()) throw Error(ErrorKind::InvalidArgument, "Bezier fit input is not finite");
  }

  std::vector<double> params(points.size(), 0.0);
  for (std::size_t i = 1; i < points.size(); ++i) params[i] = params[i - 1] + (points[i] - points[i - 1]).norm();
  const double total = params.back();
  if (total <= 1e-12) {
    BezierFit fit;
    fit.curve.control_points.fill(points.front());
    fit.degenerate = true;
    return fit;
  }
  for (auto& u : params) u /= total;
  params.back() = 1.0;

  // Chord-length start first; uniform and centripetal starts catch the cases
  // where refinement settles in a shallow valley.
  auto best = refine_fit(points, params);
  for (const double exponent : {0.0, 0.5}) {
    std::vector<double> alt(points.size(), 0.0);
    for (std::size_t i = 1; i < points.size(); ++i) {
      alt[i] = alt[i - 1] + std::pow((points[i] - points[i - 1]).norm(), exponent);
    }
    for (auto& u : alt) u /= alt.back();
    alt.back() = 1.0;
    if (best.second < 1e-12) break;
    auto candidate = refine_fit(points, std::move(alt));
    if (candidate.second < best.second) best = std::move(candidate);
  }
  return {best.first, best.second, false};
}

std::vector<Vec2> sample_bezier(const BezierCurve& curve, int frames) {
  if (frames < 1) throw Error(ErrorKind::InvalidArgument, "sample count must be at least 1");
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(frames));
  for (int n = 1; n <= frames; ++n) {
    out.push_back(n == frames ? curve.control_points[3] : curve.evaluate(static_cast<double>(n) / frames));
  }
  return out;
}

std::string_view to_string(SegmentKind kind) { return kind == SegmentKind::Root ? "root" : "in-place"; }

SegmentKind segment_kind_from_string(std::string_view text) {
  if (text == "root") return SegmentKind::Root;
  if (text == "in-place" || text == "inplace") return SegmentKind::InPlace;
  throw Error(ErrorKind::SchemaError, "unknown segment kind '" + std::string(text) + "'");
}

std::vector<ValidationIssue> validate(const Annotation& annotation, int tag_count) {
  std::vector<ValidationIssue> issues;
  const int points = static_cast<int>(annotation.polyline.size());
  if (points == 0) issues.push_back({"polyline", "needs at least one point"});
  for (int i = 0; i < points; ++i) {
    if (!annotation.polyline[static_cast<std::size_t>(i)].allFinite()) {
      issues.push_back({"polyline[" + std::to_string(i) + "]", "not finite"});
    }
  }
  if (annotation.segments.empty()) issues.push_back({"segments", "needs at least one segment"});

  int cursor = 0;
  std::optional<int> last_root_end;
  for (std::size_t s = 0; s < annotation.segments.size(); ++s) {
    const auto& seg = annotation.segments[s];
    const std::string field = "segments[" + std::to_string(s) + "]";
    if (seg.duration < 1) issues.push_back({field + ".duration", "must be at least 1 frame"});
    if (seg.tag < 0 || seg.tag >= tag_count) issues.push_back({field + ".tag", "unknown tag"});
    if (seg.begin < 0 || seg.begin >= points || seg.end < 0 || seg.end >= points) {
      issues.push_back({field, "point index out of range"});
      continue;
    }
    if (seg.kind == SegmentKind::Root) {
      if (seg.end <= seg.begin) {
        issues.push_back({field + ".end", "root segment needs at least two points"});
        continue;
      }
      if (last_root_end ? seg.begin != *last_root_end : seg.begin != 0) {
        issues.push_back({field + ".begin", "root segments must chain along the polyline"});
      }
      last_root_end = seg.end;
      cursor = seg.end;
    } else {
      if (seg.end != seg.begin) issues.push_back({field + ".end", "in-place segment sits on one anchor"});
      if (seg.begin < cursor) issues.push_back({field + ".begin", "anchor lies before the previous segment"});
      cursor = std::max(cursor, seg.begin);
    }
  }
  if (last_root_end && *last_root_end != points - 1) {
    issues.push_back({"segments", "root segments must end at the last polyline point"});
  }
  return issues;
}

std::vector<ActionRequest> preprocess_annotation(const Annotation& annotation, int tag_count) {
  const auto issues = validate(annotation, tag_count);
  if (!issues.empty()) {
    throw Error(ErrorKind::SchemaError, issues.front().field + ": " + issues.front().message);
  }
  std::vector<ActionRequest> requests;
  requests.reserve(annotation.segments.size());
  for (const auto& seg : annotation.segments) {
    ActionRequest req;
    req.tag = seg.tag;
    req.duration = seg.duration;
    req.frame = TrajectoryFrame::Global;
    if (seg.kind == SegmentKind::Root) {
      const std::vector<Vec2> slice(annotation.polyline.begin() + seg.begin,
                                    annotation.polyline.begin() + seg.end + 1);
      const auto fit = fit_bezier(slice);
      req.trajectory = sample_bezier(fit.curve, seg.duration);
      req.origin = fit.curve.control_points[0];
    } else {
      req.trajectory = std::vector<Vec2>(static_cast<std::size_t>(seg.duration), Vec2::Zero());
      req.frame = TrajectoryFrame::Local;
    }
    requests.push_back(std::move(req));
  }
  return requests;
}

std::optional<double> heading_angle(double yaw, const std::vector<Vec2>& trajectory_head) {
  if (trajectory_head.size() < 2) return std::nullopt;
  const std::size_t last = std::min(trajectory_head.size(), kHeadSamples) - 1;
  const Vec2 dir = trajectory_head[last] - trajectory_head.front();
  if (dir.norm() < 1e-9) return std::nullopt;
  const Vec2 facing(std::sin(yaw), -std::cos(yaw));
  const double cross = facing.x() * dir.y() - facing.y() * dir.x();
  return std::atan2(cross, facing.dot(dir));
}

OrientationCheck orientation_check(double bop_yaw, const std::vector<Vec2>& trajectory_head,
                                   const AngleRange& valid_range) {
  OrientationCheck result;
  result.yaw = bop_yaw;
  const auto angle = heading_angle(bop_yaw, trajectory_head);
  if (!angle) {
    result.undefined_direction = true;
    return result;
  }
  result.angle = *angle;
  // Turning the body by +delta lowers the facing-to-path angle by delta.
  double excess = 0.0;
  if (*angle > valid_range.hi) excess = *angle - valid_range.hi;
  if (*angle < valid_range.lo) excess = *angle - valid_range.lo;
  if (excess != 0.0) {
    result.yaw = motion::wrap_angle(bop_yaw + excess);
    result.corrected = true;
  }
  return result;
}

AngleRange percentile_range(std::vector<double> angles) {
  if (angles.empty()) return {};
  std::sort(angles.begin(), angles.end());
  auto percentile = [&](double q) {
    const double pos = q * static_cast<double>(angles.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, angles.size() - 1);
    return angles[lo] + (pos - static_cast<double>(lo)) * (angles[hi] - angles[lo]);
  };
  return {percentile(0.01), percentile(0.99)};
}

}  // namespace marionette::trajectory
