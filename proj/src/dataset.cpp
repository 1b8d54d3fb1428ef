#include "marionette/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "marionette/error.hpp"
#include "marionette/random.hpp"

namespace marionette::dataset {

using motion::Mat3;
using motion::Pose;
using motion::Vec3;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary dataset I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'N', 'M', 'D', 'S'};
constexpr int kCrossfadeFrames = 6;

// ---------------------------------------------------------------------------
// Binary container

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void u8(std::uint8_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f32(double v) {
    const auto f = static_cast<float>(v);
    out_.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorKind::FormatError, path_ + " at byte " + std::to_string(offset_) + ": " + what);
  }

  void bytes(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail(std::string("truncated ") + what);
    offset_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v = 0;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v = 0;
    bytes(&v, sizeof v, what);
    return v;
  }
  double f32(const char* what) {
    float v = 0;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::string str(const char* what) {
    const auto n = u32(what);
    if (n > (1u << 20)) fail(std::string("implausible string length for ") + what);
    std::string s(n, '\0');
    if (n > 0) bytes(s.data(), n, what);
    return s;
  }
  std::size_t offset() const { return offset_; }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::string path_;
  std::size_t offset_ = 0;
};

void write_clip(Writer& w, const MotionClip& clip) {
  for (const auto& p : clip.poses) {
    for (int j = 0; j < p.joint_count(); ++j) {
      for (int c = 0; c < 6; ++c) w.f32(p.joint_rotations(j, c));
    }
  }
  for (const auto& p : clip.poses) {
    for (int c = 0; c < 3; ++c) w.f32(p.root_translation(c));
  }
}

MotionClip read_clip(Reader& r, std::size_t frames, int joints, double rate) {
  MotionClip clip;
  clip.frame_rate = rate;
  clip.poses.resize(frames);
  for (auto& p : clip.poses) {
    p.joint_rotations.resize(joints, 6);
    for (int j = 0; j < joints; ++j) {
      for (int c = 0; c < 6; ++c) p.joint_rotations(j, c) = r.f32("joint rotations");
    }
  }
  for (auto& p : clip.poses) {
    for (int c = 0; c < 3; ++c) p.root_translation(c) = r.f32("root translations");
  }
  return clip;
}

void save_binary(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  Writer w(out);
  out.write(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);
  w.f32(data.frame_rate);
  w.u32(static_cast<std::uint32_t>(data.joint_count));
  w.u32(static_cast<std::uint32_t>(data.context_length));
  w.str(data.skeleton);
  w.u32(static_cast<std::uint32_t>(data.vocabulary.size()));
  for (const auto& t : data.vocabulary.tags) {
    w.str(t.name);
    w.u8(static_cast<std::uint8_t>(t.kind));
  }
  w.u32(static_cast<std::uint32_t>(data.items.size()));
  for (const auto& item : data.items) {
    w.u32(static_cast<std::uint32_t>(item.current_tag));
    w.u32(static_cast<std::uint32_t>(item.next_tag));
    w.u32(static_cast<std::uint32_t>(item.duration));
    write_clip(w, item.initial_motion);
    write_clip(w, item.action);
    for (const auto& p : item.trajectory) {
      w.f32(p.x());
      w.f32(p.y());
    }
  }
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path);
}

Dataset load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  Reader r(in, path);
  char magic[4];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("not a motion dataset file");
  const auto version = r.u32("format version");
  if (version != kFormatVersion) r.fail("unsupported format version " + std::to_string(version));

  Dataset data;
  data.frame_rate = r.f32("frame rate");
  if (!(data.frame_rate > 0.0)) r.fail("frame rate must be positive");
  data.joint_count = static_cast<int>(r.u32("joint count"));
  data.context_length = static_cast<int>(r.u32("context length"));
  if (data.joint_count <= 0 || data.joint_count > 1024) r.fail("implausible joint count");
  if (data.context_length <= 0 || data.context_length > 100000) r.fail("implausible context length");
  data.skeleton = r.str("skeleton reference");
  const auto tag_count = r.u32("tag count");
  if (tag_count > 100000) r.fail("implausible tag count");
  for (std::uint32_t i = 0; i < tag_count; ++i) {
    Tag t;
    t.name = r.str("tag name");
    const auto kind = r.u8("tag kind");
    if (kind > static_cast<std::uint8_t>(TagKind::BodyPart)) r.fail("unknown tag kind " + std::to_string(kind));
    t.kind = static_cast<TagKind>(kind);
    data.vocabulary.tags.push_back(std::move(t));
  }
  const auto item_count = r.u32("item count");
  for (std::uint32_t i = 0; i < item_count; ++i) {
    DatasetItem item;
    item.current_tag = static_cast<int>(r.u32("current tag"));
    item.next_tag = static_cast<int>(r.u32("next tag"));
    item.duration = static_cast<int>(r.u32("duration"));
    if (item.duration <= 0 || item.duration > 1000000) r.fail("implausible duration " + std::to_string(item.duration));
    item.initial_motion = read_clip(r, static_cast<std::size_t>(data.context_length), data.joint_count, data.frame_rate);
    item.action = read_clip(r, static_cast<std::size_t>(item.duration), data.joint_count, data.frame_rate);
    item.action.tag = item.current_tag;
    item.trajectory.resize(static_cast<std::size_t>(item.duration));
    for (auto& p : item.trajectory) {
      p.x() = r.f32("trajectory");
      p.y() = r.f32("trajectory");
    }
    data.items.push_back(std::move(item));
  }
  if (!r.at_end()) r.fail("trailing bytes after the last item");
  return data;
}

// ---------------------------------------------------------------------------
// Structured-text manifest

json clip_to_json(const MotionClip& clip) {
  json rotations = json::array();
  json root = json::array();
  for (const auto& p : clip.poses) {
    std::vector<double> flat;
    for (int j = 0; j < p.joint_count(); ++j) {
      for (int c = 0; c < 6; ++c) flat.push_back(static_cast<float>(p.joint_rotations(j, c)));
    }
    rotations.push_back(flat);
    root.push_back({static_cast<float>(p.root_translation.x()), static_cast<float>(p.root_translation.y()),
                    static_cast<float>(p.root_translation.z())});
  }
  return {{"rotations", rotations}, {"root", root}};
}

MotionClip clip_from_json(const json& j, int joints, double rate, const std::string& where) {
  const auto& rotations = j.at("rotations");
  const auto& root = j.at("root");
  if (rotations.size() != root.size()) {
    throw Error(ErrorKind::SchemaError, where + ": rotations and root have different frame counts");
  }
  MotionClip clip;
  clip.frame_rate = rate;
  for (std::size_t f = 0; f < rotations.size(); ++f) {
    const auto flat = rotations[f].get<std::vector<double>>();
    if (flat.size() != static_cast<std::size_t>(joints) * 6) {
      throw Error(ErrorKind::SchemaError, where + ".rotations[" + std::to_string(f) + "] needs n_J*6 values");
    }
    const auto t = root[f].get<std::vector<double>>();
    if (t.size() != 3) throw Error(ErrorKind::SchemaError, where + ".root[" + std::to_string(f) + "] needs 3 values");
    Pose p;
    p.joint_rotations.resize(joints, 6);
    for (int k = 0; k < joints * 6; ++k) p.joint_rotations(k / 6, k % 6) = static_cast<float>(flat[static_cast<std::size_t>(k)]);
    p.root_translation = Vec3(static_cast<float>(t[0]), static_cast<float>(t[1]), static_cast<float>(t[2]));
    clip.poses.push_back(std::move(p));
  }
  return clip;
}

int tag_from_json(const json& j, const TagVocabulary& vocab, const std::string& where) {
  if (j.is_string()) {
    const auto found = vocab.find(j.get<std::string>());
    if (!found) throw Error(ErrorKind::SchemaError, where + ": unknown tag '" + j.get<std::string>() + "'");
    return *found;
  }
  return j.get<int>();
}

void save_manifest(const Dataset& data, const std::string& path) {
  json doc;
  doc["format_version"] = kFormatVersion;
  doc["frame_rate"] = static_cast<float>(data.frame_rate);
  doc["joint_count"] = data.joint_count;
  doc["context_length"] = data.context_length;
  doc["skeleton"] = data.skeleton;
  json tags = json::array();
  for (const auto& t : data.vocabulary.tags) tags.push_back({{"name", t.name}, {"kind", to_string(t.kind)}});
  doc["tags"] = tags;
  json items = json::array();
  for (const auto& item : data.items) {
    json traj = json::array();
    for (const auto& p : item.trajectory) traj.push_back({static_cast<float>(p.x()), static_cast<float>(p.y())});
    items.push_back({{"current_tag", item.current_tag},
                     {"next_tag", item.next_tag},
                     {"duration", item.duration},
                     {"initial_motion", clip_to_json(item.initial_motion)},
                     {"action", clip_to_json(item.action)},
                     {"trajectory", traj}});
  }
  doc["items"] = items;
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out << doc.dump(1) << '\n';
}

Dataset load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::FormatError, path + " at byte " + std::to_string(e.byte) + ": malformed manifest");
  }
  try {
    if (doc.at("format_version").get<std::uint32_t>() != kFormatVersion) {
      throw Error(ErrorKind::FormatError, path + ": unsupported format version");
    }
    Dataset data;
    data.frame_rate = doc.at("frame_rate").get<double>();
    data.joint_count = doc.at("joint_count").get<int>();
    data.context_length = doc.value("context_length", kDefaultContextLength);
    data.skeleton = doc.value("skeleton", std::string("smpl22"));
    for (const auto& t : doc.at("tags")) {
      data.vocabulary.tags.push_back({t.at("name").get<std::string>(), tag_kind_from_string(t.at("kind").get<std::string>())});
    }
    const auto& items = doc.at("items");
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& j = items[i];
      const std::string where = "items[" + std::to_string(i) + "]";
      DatasetItem item;
      item.current_tag = tag_from_json(j.at("current_tag"), data.vocabulary, where + ".current_tag");
      item.next_tag = tag_from_json(j.at("next_tag"), data.vocabulary, where + ".next_tag");
      item.duration = j.at("duration").get<int>();
      item.initial_motion = clip_from_json(j.at("initial_motion"), data.joint_count, data.frame_rate, where + ".initial_motion");
      item.action = clip_from_json(j.at("action"), data.joint_count, data.frame_rate, where + ".action");
      item.action.tag = item.current_tag;
      for (const auto& p : j.at("trajectory")) {
        const auto xy = p.get<std::vector<double>>();
        if (xy.size() != 2) throw Error(ErrorKind::SchemaError, where + ".trajectory entries need 2 values");
        item.trajectory.emplace_back(static_cast<float>(xy[0]), static_cast<float>(xy[1]));
      }
      data.items.push_back(std::move(item));
    }
    return data;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaError, path + ": " + e.what());
  }
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

int decimation_step(double source_hz, double target_hz) {
  if (!(target_hz > 0.0)) throw Error(ErrorKind::RateError, "target rate must be positive");
  if (target_hz > source_hz + 1e-9) {
    throw Error(ErrorKind::RateError, "cannot resample " + std::to_string(source_hz) + " Hz up to " +
                                          std::to_string(target_hz) + " Hz");
  }
  return std::max(1, static_cast<int>(std::lround(source_hz / target_hz)));
}

// ---------------------------------------------------------------------------
// Toy motion families

struct Family {
  double frequency = 1.0;  // Hz
  std::vector<Vec3> axes;
  std::vector<double> amplitudes;
  std::vector<double> phases;
  double speed = 0.0;      // m/s along the heading
  double turn_rate = 0.0;  // rad/s
};

Family make_family(int tag, int joints, std::uint64_t seed) {
  Rng rng(Rng::mix(seed, 1000 + static_cast<std::uint64_t>(tag)));
  Family f;
  f.frequency = 0.6 + 0.45 * tag;
  for (int j = 0; j < joints; ++j) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    f.axes.push_back(axis.normalized());
    f.amplitudes.push_back(j == 0 ? 0.08 : rng.uniform(0.15, 0.55));
    f.phases.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
  }
  if (tag % 2 == 0) {
    f.speed = 0.7 + 0.25 * (tag / 2);
    f.turn_rate = rng.uniform(-0.35, 0.35);
  }
  return f;
}

Mat3 oscillation(const Family& f, int joint, double time, double weight, double scale) {
  const auto j = static_cast<std::size_t>(joint);
  const double angle = weight * scale * f.amplitudes[j] *
                       std::sin(2.0 * std::numbers::pi * f.frequency * time + f.phases[j]);
  return Eigen::AngleAxisd(angle, f.axes[j]).toRotationMatrix();
}

struct ToyState {
  double heading = 0.0;
  Vec2 position = Vec2::Zero();
};

// One frame of segment `cur` at local time tau, crossfading in from `prev`
// (which keeps running on its own clock) over the first frames.
Pose toy_frame(const Family& cur, double cur_time, double cur_scale, const Family* prev, double prev_time,
               double prev_scale, double weight, ToyState& state, double dt) {
  const Family& old = prev ? *prev : cur;
  const double speed = weight * cur.speed + (1.0 - weight) * old.speed;
  const double turn = weight * cur.turn_rate + (1.0 - weight) * old.turn_rate;
  state.heading = motion::wrap_angle(state.heading + turn * dt);
  state.position += speed * dt * Vec2(std::sin(state.heading), -std::cos(state.heading));

  const int joints = static_cast<int>(cur.axes.size());
  Pose p;
  p.joint_rotations.resize(joints, 6);
  for (int j = 0; j < joints; ++j) {
    Mat3 r = oscillation(cur, j, cur_time, weight, cur_scale);
    if (prev) r = r * oscillation(*prev, j, prev_time, 1.0 - weight, prev_scale);
    if (j == 0) r = motion::rotation_z(state.heading) * r;
    p.joint_rotations.row(j) = motion::rotation_matrix_to_sixd(r).transpose();
  }
  const double bob = 0.03 * (weight * std::sin(4.0 * std::numbers::pi * cur.frequency * cur_time) +
                             (1.0 - weight) * std::sin(4.0 * std::numbers::pi * old.frequency * prev_time));
  p.root_translation = Vec3(state.position.x(), state.position.y(), 0.9 + bob);
  return p;
}

const char* const kToyNames[] = {"walk", "wave", "run", "squat", "sidestep", "punch", "jog", "kick"};

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(TagKind kind) {
  switch (kind) {
    case TagKind::IntentionRoot: return "intention-root";
    case TagKind::IntentionInPlace: return "intention-inplace";
    case TagKind::BodyState: return "body-state";
    case TagKind::BodyPart: return "body-part";
  }
  return "intention-inplace";
}

TagKind tag_kind_from_string(std::string_view text) {
  for (auto k : {TagKind::IntentionRoot, TagKind::IntentionInPlace, TagKind::BodyState, TagKind::BodyPart}) {
    if (text == to_string(k)) return k;
  }
  throw Error(ErrorKind::SchemaError, "unknown tag kind '" + std::string(text) + "'");
}

std::optional<int> TagVocabulary::find(std::string_view name) const {
  for (int i = 0; i < size(); ++i) {
    if (tags[static_cast<std::size_t>(i)].name == name) return i;
  }
  return std::nullopt;
}

void TagVocabulary::validate() const {
  if (tags.size() < 2) throw Error(ErrorKind::SchemaError, "tag vocabulary needs at least 2 tags");
  std::set<std::string> seen;
  for (const auto& t : tags) {
    if (t.name.empty()) throw Error(ErrorKind::SchemaError, "tag names must be non-empty");
    if (!seen.insert(t.name).second) throw Error(ErrorKind::SchemaError, "duplicate tag name '" + t.name + "'");
  }
}

bool DatasetItem::operator==(const DatasetItem& other) const {
  return current_tag == other.current_tag && next_tag == other.next_tag && duration == other.duration &&
         initial_motion == other.initial_motion && action == other.action && trajectory == other.trajectory;
}

void Dataset::validate() const {
  vocabulary.validate();
  if (!(frame_rate > 0.0)) throw Error(ErrorKind::SchemaError, "frame rate must be positive");
  if (context_length < 1) throw Error(ErrorKind::SchemaError, "context length must be at least 1");
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    const std::string where = "items[" + std::to_string(i) + "]: ";
    if (!vocabulary.contains(item.current_tag)) throw Error(ErrorKind::SchemaError, where + "current tag not in vocabulary");
    if (!vocabulary.contains(item.next_tag)) throw Error(ErrorKind::SchemaError, where + "next tag not in vocabulary");
    if (item.duration < 1) throw Error(ErrorKind::SchemaError, where + "duration must be at least 1");
    if (static_cast<int>(item.initial_motion.size()) != context_length) {
      throw Error(ErrorKind::SchemaError, where + "initial motion has " + std::to_string(item.initial_motion.size()) +
                                              " frames, context length is " + std::to_string(context_length));
    }
    if (static_cast<int>(item.action.size()) != item.duration) {
      throw Error(ErrorKind::SchemaError, where + "action length " + std::to_string(item.action.size()) +
                                              " != duration " + std::to_string(item.duration));
    }
    if (static_cast<int>(item.trajectory.size()) != item.duration) {
      throw Error(ErrorKind::SchemaError, where + "trajectory length " + std::to_string(item.trajectory.size()) +
                                              " != duration " + std::to_string(item.duration));
    }
    for (const auto* clip : {&item.initial_motion, &item.action}) {
      try {
        clip->validate();
      } catch (const Error& e) {
        throw Error(ErrorKind::SchemaError, where + e.what());
      }
      if (clip->joint_count() != joint_count) throw Error(ErrorKind::SchemaError, where + "joint count mismatch");
    }
  }
}

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(vocabulary.size()), 0);
  for (const auto& item : items) ++counts.at(static_cast<std::size_t>(item.current_tag));
  return counts;
}

bool Dataset::operator==(const Dataset& other) const {
  return frame_rate == other.frame_rate && joint_count == other.joint_count &&
         context_length == other.context_length && skeleton == other.skeleton && vocabulary == other.vocabulary &&
         items == other.items;
}

Dataset load_dataset(const std::string& path) {
  Dataset data = ends_with(path, ".json") ? load_manifest(path) : load_binary(path);
  if (data.frame_rate != motion::kDefaultFrameRate) data = downsample(data, motion::kDefaultFrameRate);
  data.validate();
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  data.validate();
  if (ends_with(path, ".json")) {
    save_manifest(data, path);
  } else {
    save_binary(data, path);
  }
}

MotionClip downsample(const MotionClip& clip, double target_hz) {
  const int step = decimation_step(clip.frame_rate, target_hz);
  MotionClip out;
  out.frame_rate = target_hz;
  out.tag = clip.tag;
  for (std::size_t i = 0; i < clip.size(); i += static_cast<std::size_t>(step)) out.poses.push_back(clip.poses[i]);
  return out;
}

Dataset downsample(const Dataset& data, double target_hz) {
  const int step = decimation_step(data.frame_rate, target_hz);
  if (data.context_length % step != 0) {
    throw Error(ErrorKind::SchemaError, "stored context of " + std::to_string(data.context_length) +
                                            " frames does not decimate evenly by " + std::to_string(step));
  }
  Dataset out = data;
  out.frame_rate = target_hz;
  out.context_length = data.context_length / step;
  for (auto& item : out.items) {
    MotionClip context;
    context.frame_rate = target_hz;
    for (int i = static_cast<int>(item.initial_motion.size()) - 1; i >= 0; i -= step) {
      context.poses.insert(context.poses.begin(), item.initial_motion.poses[static_cast<std::size_t>(i)]);
    }
    item.initial_motion = std::move(context);
    item.action = downsample(item.action, target_hz);
    std::vector<Vec2> traj;
    for (std::size_t i = 0; i < item.trajectory.size(); i += static_cast<std::size_t>(step)) {
      traj.push_back(item.trajectory[i]);
    }
    item.trajectory = std::move(traj);
    item.duration = static_cast<int>(item.action.size());
  }
  return out;
}

DatasetItem normalize_item(const DatasetItem& item) {
  const auto anchor = motion::RigidFrame::anchor_of(item.initial_motion.back());
  const auto to_local = anchor.inverse();
  DatasetItem out = item;
  out.initial_motion = to_local.apply(item.initial_motion);
  out.action = to_local.apply(item.action);
  for (auto& p : out.trajectory) p = to_local.apply_planar(p);
  return out;
}

std::vector<double> facing_angles(const Dataset& data) {
  std::vector<double> out;
  for (const auto& item : data.items) {
    if (!data.vocabulary.moves_root(item.current_tag)) continue;
    const auto yaw = motion::extract_yaw(item.initial_motion.back().rotation_matrix(0));
    const Vec3 bop = item.initial_motion.back().root_translation;
    std::vector<Vec2> head = {bop.head<2>()};
    for (std::size_t i = 0; i < item.trajectory.size() && head.size() < 6; ++i) head.push_back(item.trajectory[i]);
    if (const auto angle = trajectory::heading_angle(yaw, head)) out.push_back(*angle);
  }
  return out;
}

Dataset generate_toy_dataset(const ToyConfig& config) {
  if (config.n_tags < 2) throw Error(ErrorKind::InvalidArgument, "toy dataset needs at least 2 tags");
  if (config.items_per_tag < 1) throw Error(ErrorKind::InvalidArgument, "items_per_tag must be at least 1");
  if (config.min_duration < 1 || config.max_duration < config.min_duration) {
    throw Error(ErrorKind::InvalidArgument, "invalid toy duration range");
  }
  const auto skeleton = motion::Skeleton::resolve(config.skeleton);
  const int joints = skeleton.joint_count();
  const double dt = 1.0 / motion::kDefaultFrameRate;

  Dataset data;
  data.joint_count = joints;
  data.context_length = config.context_length;
  data.skeleton = config.skeleton;
  std::vector<Family> families;
  for (int c = 0; c < config.n_tags; ++c) {
    const std::string name = c < 8 ? kToyNames[c] : "action" + std::to_string(c);
    data.vocabulary.tags.push_back({name, c % 2 == 0 ? TagKind::IntentionRoot : TagKind::IntentionInPlace});
    families.push_back(make_family(c, joints, config.seed));
  }

  Rng rng(config.seed);
  std::vector<int> order;
  for (int c = 0; c < config.n_tags; ++c) order.insert(order.end(), static_cast<std::size_t>(config.items_per_tag), c);
  rng.shuffle(std::span<int>(order));

  constexpr std::size_t kSequenceLength = 8;
  for (std::size_t start = 0; start < order.size(); start += kSequenceLength) {
    const std::size_t stop = std::min(order.size(), start + kSequenceLength);
    ToyState state{rng.uniform(-std::numbers::pi, std::numbers::pi), Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1))};

    // Lead-in: the first family running before time zero.
    MotionClip history;
    const Family& first = families[static_cast<std::size_t>(order[start])];
    for (int f = -config.context_length; f < 0; ++f) {
      history.poses.push_back(toy_frame(first, f * dt, 1.0, nullptr, 0.0, 1.0, 1.0, state, dt));
    }
    const Family* prev = nullptr;
    double prev_time = 0.0;
    double prev_scale = 1.0;
    for (std::size_t s = start; s < stop; ++s) {
      const int tag = order[s];
      const Family& cur = families[static_cast<std::size_t>(tag)];
      const int duration = config.min_duration + static_cast<int>(rng.index(
                                                     static_cast<std::size_t>(config.max_duration - config.min_duration + 1)));
      const double scale = rng.uniform(0.95, 1.05);
      DatasetItem item;
      item.current_tag = tag;
      item.next_tag = s + 1 < stop ? order[s + 1] : tag;
      item.duration = duration;
      item.initial_motion = motion::quantize_to_float(history.tail(static_cast<std::size_t>(config.context_length)));
      item.action.tag = tag;
      for (int f = 0; f < duration; ++f) {
        const double weight = prev ? std::min(1.0, static_cast<double>(f) / kCrossfadeFrames) : 1.0;
        const Pose p = toy_frame(cur, f * dt, scale, prev, prev_time + f * dt, prev_scale, weight, state, dt);
        item.action.poses.push_back(p);
        history.poses.push_back(p);
      }
      item.action = motion::quantize_to_float(item.action);
      for (const auto& p : item.action.poses) item.trajectory.push_back(p.root_translation.head<2>());
      data.items.push_back(std::move(item));
      prev = &cur;
      prev_time = duration * dt;
      prev_scale = scale;
    }
  }
  data.validate();
  return data;
}

Split split_train_test(const Dataset& data, double ratio, int cap, std::uint64_t seed) {
  Split out{data, data};
  out.train.items.clear();
  out.test.items.clear();
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.vocabulary.size()));
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    by_class.at(static_cast<std::size_t>(data.items[i].current_tag)).push_back(i);
  }
  std::vector<bool> is_test(data.items.size(), false);
  for (auto& members : by_class) {
    if (members.empty()) continue;
    rng.shuffle(std::span<std::size_t>(members));
    const auto want = std::min<std::size_t>(static_cast<std::size_t>(std::ceil(ratio * members.size() - 1e-9)),
                                            static_cast<std::size_t>(cap));
    for (std::size_t k = 0; k < want; ++k) is_test[members[k]] = true;
  }
  // Keep the original item order inside each split.
  for (std::size_t i = 0; i < data.items.size(); ++i) (is_test[i] ? out.test : out.train).items.push_back(data.items[i]);
  return out;
}

std::int64_t TransitionMatrix::total() const {
  std::int64_t sum = 0;
  for (auto c : counts) sum += c;
  return sum;
}

std::vector<int> TransitionMatrix::successors(int current) const {
  std::vector<int> out;
  for (int j = 0; j < tag_count; ++j) {
    if (at(current, j) > 0) out.push_back(j);
  }
  return out;
}

std::vector<int> TransitionMatrix::top_successors(int current, int n) const {
  auto out = successors(current);
  std::stable_sort(out.begin(), out.end(), [&](int a, int b) { return at(current, a) > at(current, b); });
  if (static_cast<int>(out.size()) > n) out.resize(static_cast<std::size_t>(n));
  return out;
}

TransitionMatrix transition_matrix(const Dataset& data) {
  TransitionMatrix m(data.vocabulary.size());
  for (const auto& item : data.items) ++m.at(item.current_tag, item.next_tag);
  return m;
}

std::string_view to_string(ChainMode mode) { return mode == ChainMode::Overall ? "overall" : "sufficient"; }

ChainMode chain_mode_from_string(std::string_view text) {
  if (text == "overall") return ChainMode::Overall;
  if (text == "sufficient") return ChainMode::Sufficient;
  throw Error(ErrorKind::InvalidArgument, "unknown chain mode '" + std::string(text) + "'");
}

std::vector<ActionChain> build_multiaction_testset(const Dataset& test, const TransitionMatrix& train_transitions,
                                                   const std::vector<double>& confidences,
                                                   const TestsetOptions& options) {
  if (confidences.size() != test.items.size()) {
    throw Error(ErrorKind::DimensionMismatch, "one confidence per test item is required");
  }
  if (options.n_actions < 1) throw Error(ErrorKind::InvalidArgument, "chains need at least one action");
  if (train_transitions.tag_count != test.vocabulary.size()) {
    throw Error(ErrorKind::DimensionMismatch, "transition matrix does not match the vocabulary");
  }
  std::vector<std::vector<int>> by_tag(static_cast<std::size_t>(test.vocabulary.size()));
  for (std::size_t i = 0; i < test.items.size(); ++i) {
    by_tag[static_cast<std::size_t>(test.items[i].current_tag)].push_back(static_cast<int>(i));
  }

  Rng rng(options.seed);
  std::vector<ActionChain> chains;
  for (std::size_t i = 0; i < test.items.size(); ++i) {
    if (confidences[i] < options.confidence) continue;
    ActionChain chain;
    chain.first_item = static_cast<int>(i);
    chain.initial_motion = test.items[i].initial_motion;

    auto push_action = [&](int tag, int source) {
      auto local = normalize_item(test.items[static_cast<std::size_t>(source)]);
      if (!test.vocabulary.moves_root(tag)) std::fill(local.trajectory.begin(), local.trajectory.end(), Vec2::Zero());
      chain.actions.push_back({tag, local.duration, std::move(local.trajectory), source});
    };
    push_action(test.items[i].current_tag, static_cast<int>(i));
    while (static_cast<int>(chain.actions.size()) < options.n_actions) {
      const auto& last = chain.actions.back();
      std::vector<int> options_next;
      if (options.mode == ChainMode::Overall) {
        options_next = train_transitions.successors(last.tag);
      } else {
        options_next = train_transitions.top_successors(last.tag, 4);
        if (!options_next.empty()) {
          options_next.push_back(last.tag);
          options_next.push_back(test.items[static_cast<std::size_t>(last.source_item)].next_tag);
          std::sort(options_next.begin(), options_next.end());
          options_next.erase(std::unique(options_next.begin(), options_next.end()), options_next.end());
        }
      }
      if (options_next.empty()) {
        chain.dead_end_tag = last.tag;
        break;
      }
      const int tag = options_next[rng.index(options_next.size())];
      const auto& pool = by_tag[static_cast<std::size_t>(tag)];
      if (pool.empty()) {
        // No test item to borrow from: reuse the previous duration in place.
        const int duration = last.duration;
        chain.actions.push_back({tag, duration, std::vector<Vec2>(static_cast<std::size_t>(duration), Vec2::Zero()),
                                 last.source_item});
        continue;
      }
      push_action(tag, pool[rng.index(pool.size())]);
    }
    chains.push_back(std::move(chain));
  }
  return chains;
}

}  // namespace marionette::dataset
