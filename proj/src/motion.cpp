#include "marionette/motion.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "marionette/error.hpp"

namespace marionette::motion {

namespace {

constexpr double kBasisEpsilon = 1e-8;
constexpr double kOrthonormalTolerance = 1e-5;
const Vec3 kForwardAxis(0.0, -1.0, 0.0);

Vec6 rotate_sixd(const Mat3& r, const Vec6& r6) {
  Vec6 out;
  out.head<3>() = r * r6.head<3>();
  out.tail<3>() = r * r6.tail<3>();
  return out;
}

}  // namespace

Mat3 sixd_to_rotation_matrix(const Vec6& r6) {
  if (!r6.allFinite()) {
    throw Error(ErrorKind::DegenerateInput, "6D rotation has non-finite entries");
  }
  const Vec3 a1 = r6.head<3>();
  const Vec3 a2 = r6.tail<3>();
  const double n1 = a1.norm();
  if (n1 < kBasisEpsilon) {
    throw Error(ErrorKind::DegenerateInput, "first basis vector collapsed");
  }
  const Vec3 b1 = a1 / n1;
  const Vec3 u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (n2 < kBasisEpsilon) {
    throw Error(ErrorKind::DegenerateInput, "second basis vector collapsed");
  }
  const Vec3 b2 = u2 / n2;
  Mat3 m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

Vec6 rotation_matrix_to_sixd(const Mat3& m) {
  const double err = m.allFinite() ? ((m.transpose() * m) - Mat3::Identity()).cwiseAbs().maxCoeff()
                                   : std::numeric_limits<double>::infinity();
  if (!(err <= kOrthonormalTolerance)) {
    throw Error(ErrorKind::NotARotation, "matrix is not orthonormal (max deviation " + std::to_string(err) + ")");
  }
  if (m.determinant() < 0.0) {
    throw Error(ErrorKind::NotARotation, "matrix is a reflection");
  }
  Vec6 r6;
  r6.head<3>() = m.col(0);
  r6.tail<3>() = m.col(1);
  return r6;
}

Mat3 rotation_z(double yaw) {
  return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
}

double wrap_angle(double angle) {
  constexpr double pi = std::numbers::pi;
  double wrapped = std::remainder(angle, 2.0 * pi);
  if (wrapped <= -pi) wrapped += 2.0 * pi;
  return wrapped;
}

double extract_yaw(const Mat3& root_rotation) {
  const Vec3 forward = root_rotation * kForwardAxis;
  const double planar = std::hypot(forward.x(), forward.y());
  if (planar < 1e-6) return 0.0;
  // rotation_z(g) maps (0,-1) to (sin g, -cos g).
  return wrap_angle(std::atan2(forward.x(), -forward.y()));
}

Pose Pose::identity(int joint_count) {
  Pose pose;
  pose.joint_rotations = RotationRows::Zero(joint_count, 6);
  for (int j = 0; j < joint_count; ++j) {
    pose.joint_rotations(j, 0) = 1.0;
    pose.joint_rotations(j, 4) = 1.0;
  }
  return pose;
}

bool Pose::operator==(const Pose& other) const {
  return root_translation == other.root_translation &&
         joint_rotations.rows() == other.joint_rotations.rows() &&
         joint_rotations == other.joint_rotations;
}

MotionClip MotionClip::slice(std::size_t begin, std::size_t end) const {
  MotionClip out;
  out.frame_rate = frame_rate;
  out.tag = tag;
  end = std::min(end, poses.size());
  if (begin < end) out.poses.assign(poses.begin() + static_cast<std::ptrdiff_t>(begin),
                                    poses.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

MotionClip MotionClip::tail(std::size_t n) const {
  return slice(poses.size() > n ? poses.size() - n : 0, poses.size());
}

void MotionClip::validate() const {
  if (poses.empty()) throw Error(ErrorKind::SchemaError, "motion clip is empty");
  if (!(frame_rate > 0.0)) throw Error(ErrorKind::SchemaError, "frame rate must be positive");
  const int joints = poses.front().joint_count();
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (poses[i].joint_count() != joints) {
      throw Error(ErrorKind::SchemaError, "frame " + std::to_string(i) + " has a different joint count");
    }
    if (!poses[i].root_translation.allFinite() || !poses[i].joint_rotations.allFinite()) {
      throw Error(ErrorKind::SchemaError, "frame " + std::to_string(i) + " has non-finite values");
    }
  }
}

bool MotionClip::operator==(const MotionClip& other) const {
  return frame_rate == other.frame_rate && tag == other.tag && poses == other.poses;
}

// ---------------------------------------------------------------------------
// Skeleton

void Skeleton::validate() const {
  const auto n = parents.size();
  if (n == 0) throw Error(ErrorKind::SchemaError, "skeleton has no joints");
  if (offsets.size() != n) throw Error(ErrorKind::SchemaError, "skeleton offsets/parents length mismatch");
  if (!joint_names.empty() && joint_names.size() != n) {
    throw Error(ErrorKind::SchemaError, "skeleton names/parents length mismatch");
  }
  if (parents[0] != -1) throw Error(ErrorKind::SchemaError, "joint 0 must be the root");
  for (std::size_t j = 1; j < n; ++j) {
    if (parents[j] < 0 || parents[j] >= static_cast<int>(j)) {
      throw Error(ErrorKind::SchemaError, "joint " + std::to_string(j) + " has an invalid parent");
    }
  }
  for (const auto& o : offsets) {
    if (!o.allFinite()) throw Error(ErrorKind::SchemaError, "skeleton offset is not finite");
  }
}

Skeleton Skeleton::smpl22() {
  struct Row {
    const char* name;
    int parent;
    double x, y, z;
  };
  // Left is +x when facing -y with z up.
  static constexpr Row rows[] = {
      {"pelvis", -1, 0.0, 0.0, 0.0},
      {"left_hip", 0, 0.06, 0.0, -0.09},
      {"right_hip", 0, -0.06, 0.0, -0.09},
      {"spine1", 0, 0.0, 0.0, 0.11},
      {"left_knee", 1, 0.04, 0.0, -0.38},
      {"right_knee", 2, -0.04, 0.0, -0.38},
      {"spine2", 3, 0.0, 0.0, 0.13},
      {"left_ankle", 4, 0.0, 0.0, -0.40},
      {"right_ankle", 5, 0.0, 0.0, -0.40},
      {"spine3", 6, 0.0, 0.0, 0.05},
      {"left_foot", 7, 0.0, -0.12, -0.05},
      {"right_foot", 8, 0.0, -0.12, -0.05},
      {"neck", 9, 0.0, 0.0, 0.21},
      {"left_collar", 9, 0.08, 0.0, 0.12},
      {"right_collar", 9, -0.08, 0.0, 0.12},
      {"head", 12, 0.0, 0.0, 0.09},
      {"left_shoulder", 13, 0.12, 0.0, 0.03},
      {"right_shoulder", 14, -0.12, 0.0, 0.03},
      {"left_elbow", 16, 0.25, 0.0, 0.0},
      {"right_elbow", 17, -0.25, 0.0, 0.0},
      {"left_wrist", 18, 0.25, 0.0, 0.0},
      {"right_wrist", 19, -0.25, 0.0, 0.0},
  };
  Skeleton s;
  s.name = "smpl22";
  for (const auto& r : rows) {
    s.joint_names.emplace_back(r.name);
    s.parents.push_back(r.parent);
    s.offsets.emplace_back(r.x, r.y, r.z);
  }
  return s;
}

Skeleton Skeleton::chain(int joint_count, double bone_length) {
  Skeleton s;
  s.name = "chain" + std::to_string(joint_count);
  for (int j = 0; j < joint_count; ++j) {
    s.joint_names.push_back("joint" + std::to_string(j));
    s.parents.push_back(j - 1);
    s.offsets.push_back(j == 0 ? Vec3::Zero() : Vec3(bone_length, 0.0, 0.0));
  }
  return s;
}

Skeleton Skeleton::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open skeleton file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::FormatError, path + " at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  Skeleton s;
  try {
    s.name = doc.value("name", std::string("custom"));
    for (const auto& joint : doc.at("joints")) {
      s.joint_names.push_back(joint.at("name").get<std::string>());
      s.parents.push_back(joint.at("parent").get<int>());
      const auto o = joint.at("offset").get<std::vector<double>>();
      if (o.size() != 3) throw Error(ErrorKind::SchemaError, "offset must have 3 components");
      s.offsets.emplace_back(o[0], o[1], o[2]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaError, path + ": " + e.what());
  }
  s.validate();
  return s;
}

void Skeleton::save(const std::string& path) const {
  nlohmann::json doc;
  doc["name"] = name;
  doc["joints"] = nlohmann::json::array();
  for (int j = 0; j < joint_count(); ++j) {
    doc["joints"].push_back({{"name", joint_names.empty() ? "joint" + std::to_string(j) : joint_names[j]},
                             {"parent", parents[j]},
                             {"offset", {offsets[j].x(), offsets[j].y(), offsets[j].z()}}});
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write skeleton file " + path);
  out << doc.dump(2) << '\n';
}

Skeleton Skeleton::resolve(const std::string& reference) {
  if (reference == "smpl22") return smpl22();
  if (reference.rfind("chain", 0) == 0 && reference.size() > 5 &&
      reference.find_first_not_of("0123456789", 5) == std::string::npos) {
    return chain(std::stoi(reference.substr(5)));
  }
  return load(reference);
}

// ---------------------------------------------------------------------------
// RigidFrame

RigidFrame RigidFrame::anchor_of(const Pose& pose) {
  RigidFrame f;
  f.yaw = extract_yaw(pose.rotation_matrix(0));
  f.translation = Vec3(pose.root_translation.x(), pose.root_translation.y(), 0.0);
  return f;
}

RigidFrame RigidFrame::inverse() const {
  RigidFrame inv;
  inv.yaw = wrap_angle(-yaw);
  inv.translation = -(rotation_z(-yaw) * translation);
  return inv;
}

Vec3 RigidFrame::apply(const Vec3& p) const { return rotation_z(yaw) * p + translation; }

Vec2 RigidFrame::apply_planar(const Vec2& p) const {
  const Vec3 q = apply(Vec3(p.x(), p.y(), 0.0));
  return {q.x(), q.y()};
}

Pose RigidFrame::apply(const Pose& pose) const {
  const Mat3 r = rotation_z(yaw);
  Pose out = pose;
  out.root_translation = r * pose.root_translation + translation;
  if (out.joint_rotations.rows() > 0) {
    out.joint_rotations.row(0) = rotate_sixd(r, pose.rotation(0)).transpose();
  }
  return out;
}

MotionClip RigidFrame::apply(const MotionClip& clip) const {
  MotionClip out;
  out.frame_rate = clip.frame_rate;
  out.tag = clip.tag;
  out.poses.reserve(clip.size());
  for (const auto& p : clip.poses) out.poses.push_back(apply(p));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Vec3> forward_kinematics(const Pose& pose, const Skeleton& skeleton) {
  const int n = skeleton.joint_count();
  if (pose.joint_count() != n) {
    throw Error(ErrorKind::ShapeError, "pose has " + std::to_string(pose.joint_count()) +
                                           " joints, skeleton has " + std::to_string(n));
  }
  std::vector<Mat3> global(n);
  std::vector<Vec3> positions(n);
  for (int j = 0; j < n; ++j) {
    const Mat3 local = pose.rotation_matrix(j);
    const int p = skeleton.parents[j];
    if (p < 0) {
      global[j] = local;
      positions[j] = pose.root_translation;
    } else {
      global[j] = global[p] * local;
      positions[j] = positions[p] + global[p] * skeleton.offsets[j];
    }
  }
  return positions;
}

std::pair<MotionClip, RigidFrame> normalize_clip_at(const MotionClip& clip, std::size_t anchor_index) {
  if (clip.empty()) throw Error(ErrorKind::SchemaError, "cannot normalize an empty clip");
  const RigidFrame frame = RigidFrame::anchor_of(clip.poses.at(anchor_index));
  return {frame.inverse().apply(clip), frame};
}

std::pair<MotionClip, RigidFrame> normalize_clip(const MotionClip& clip) {
  if (clip.empty()) throw Error(ErrorKind::SchemaError, "cannot normalize an empty clip");
  return normalize_clip_at(clip, clip.size() - 1);
}

MotionClip denormalize_clip(const MotionClip& clip, const RigidFrame& frame) { return frame.apply(clip); }

MotionClip slerp_blend(const MotionClip& tail, const MotionClip& head, int n_frames) {
  if (n_frames < 1) throw Error(ErrorKind::InvalidArgument, "blend needs at least one frame");
  if (tail.empty() || head.empty()) throw Error(ErrorKind::InvalidArgument, "blend endpoints must be non-empty");
  const Pose& a = tail.back();
  const Pose& b = head.front();
  if (a.joint_count() != b.joint_count()) throw Error(ErrorKind::ShapeError, "blend endpoints differ in joint count");
  const int joints = a.joint_count();

  std::vector<Eigen::Quaterniond> qa(joints), qb(joints);
  for (int j = 0; j < joints; ++j) {
    qa[j] = Eigen::Quaterniond(a.rotation_matrix(j));
    qb[j] = Eigen::Quaterniond(b.rotation_matrix(j));
  }

  MotionClip out;
  out.frame_rate = tail.frame_rate;
  for (int i = 1; i <= n_frames; ++i) {
    const double t = static_cast<double>(i) / (n_frames + 1);
    Pose p;
    p.root_translation = (1.0 - t) * a.root_translation + t * b.root_translation;
    p.joint_rotations.resize(joints, 6);
    for (int j = 0; j < joints; ++j) {
      // Eigen's slerp already takes the shorter arc.
      const Mat3 m = qa[j].slerp(t, qb[j]).normalized().toRotationMatrix();
      p.joint_rotations.row(j) = rotation_matrix_to_sixd(m).transpose();
    }
    out.poses.push_back(std::move(p));
  }
  return out;
}

MotionClip quantize_to_float(const MotionClip& clip) {
  // The volatile keeps g++ -O3 from vectorizing the narrowing into a no-op.
  const auto round = [](double& v) {
    volatile float f = static_cast<float>(v);
    v = f;
  };
  MotionClip out = clip;
  for (auto& p : out.poses) {
    for (Eigen::Index i = 0; i < 3; ++i) round(p.root_translation(i));
    for (Eigen::Index i = 0; i < p.joint_rotations.size(); ++i) round(p.joint_rotations.data()[i]);
  }
  return out;
}

}  // namespace marionette::motion
