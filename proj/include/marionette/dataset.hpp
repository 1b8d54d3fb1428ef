#pragma once

// Action-item datasets: the on-disk format, procedural toy motions, splits,
// transition statistics and multi-action test chains.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "marionette/motion.hpp"
#include "marionette/trajectory.hpp"

namespace marionette::dataset {

using motion::MotionClip;
using motion::Vec2;

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr int kDefaultContextLength = 6;

enum class TagKind { IntentionRoot, IntentionInPlace, BodyState, BodyPart };

std::string_view to_string(TagKind kind);
TagKind tag_kind_from_string(std::string_view text);

struct Tag {
  std::string name;
  TagKind kind = TagKind::IntentionInPlace;

  bool operator==(const Tag&) const = default;
};

struct TagVocabulary {
  std::vector<Tag> tags;

  int size() const { return static_cast<int>(tags.size()); }
  bool contains(int tag) const { return tag >= 0 && tag < size(); }
  // Root tags move the character across the ground; all others are in-place.
  bool moves_root(int tag) const { return tags.at(static_cast<std::size_t>(tag)).kind == TagKind::IntentionRoot; }
  std::optional<int> find(std::string_view name) const;

  // Throws SchemaError on duplicate names or fewer than two tags.
  void validate() const;

  bool operator==(const TagVocabulary&) const = default;
};

struct DatasetItem {
  MotionClip initial_motion;  // the k frames that precede the action
  int current_tag = 0;
  int next_tag = 0;
  int duration = 0;
  MotionClip action;
  std::vector<Vec2> trajectory;  // root ground-plane position per action frame

  bool operator==(const DatasetItem& other) const;
};

struct Dataset {
  double frame_rate = motion::kDefaultFrameRate;
  int joint_count = 0;
  int context_length = kDefaultContextLength;
  std::string skeleton = "smpl22";
  TagVocabulary vocabulary;
  std::vector<DatasetItem> items;

  // Throws SchemaError naming the first violated invariant.
  void validate() const;
  // Item count per current tag.
  std::vector<int> class_counts() const;

  bool operator==(const Dataset& other) const;
};

// Files ending in ".json" use the structured-text manifest; anything else the
// binary container. Loading resamples to 30 Hz and validates.
// Throws FormatError (with byte offset for binary files) or SchemaError.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& data, const std::string& path);

// Keeps frames 0, s, 2s, ... with s = round(frame_rate / target_hz).
// Throws RateError when target_hz exceeds the clip's rate.
MotionClip downsample(const MotionClip& clip, double target_hz);
// Same decimation for every item. The stored context must hold enough source
// frames to leave exactly context_length frames, aligned to its last frame.
Dataset downsample(const Dataset& data, double target_hz);

// The item re-expressed in the frame of its BOP (last context frame): that
// pose faces -y with its root above the origin. Trajectory follows.
DatasetItem normalize_item(const DatasetItem& item);

// Facing-to-path angles of root-tag items at their BOP, for the orientation
// check's valid range.
std::vector<double> facing_angles(const Dataset& data);

struct ToyConfig {
  int n_tags = 2;
  int items_per_tag = 20;
  int min_duration = 30;
  int max_duration = 45;
  int context_length = kDefaultContextLength;
  std::string skeleton = "smpl22";
  std::uint64_t seed = 0;
};

// Tag c drives every joint with its own sinusoid family (frequency, amplitude,
// rotation axes); even tags walk along a tag-specific arc, odd tags stay put.
// Items come from continuous sequences, so each context is the real preceding
// motion. Values are float32-representable so save/load is exact.
Dataset generate_toy_dataset(const ToyConfig& config);

struct Split {
  Dataset train;
  Dataset test;
};

// Per class, min(ceil(ratio * n), cap) items go to test.
Split split_train_test(const Dataset& data, double ratio = 0.2, int cap = 100, std::uint64_t seed = 0);

struct TransitionMatrix {
  int tag_count = 0;
  std::vector<std::int64_t> counts;  // row-major, [current][next]

  explicit TransitionMatrix(int tags = 0) : tag_count(tags), counts(static_cast<std::size_t>(tags * tags), 0) {}

  std::int64_t& at(int current, int next) { return counts[static_cast<std::size_t>(current * tag_count + next)]; }
  std::int64_t at(int current, int next) const { return counts[static_cast<std::size_t>(current * tag_count + next)]; }
  std::int64_t total() const;
  // Tags with a positive count after `current`, ascending.
  std::vector<int> successors(int current) const;
  // Up to n successors by count descending, ties by tag index ascending.
  std::vector<int> top_successors(int current, int n) const;
};

TransitionMatrix transition_matrix(const Dataset& data);

enum class ChainMode { Overall, Sufficient };

std::string_view to_string(ChainMode mode);
ChainMode chain_mode_from_string(std::string_view text);

struct ChainAction {
  int tag = 0;
  int duration = 0;
  std::vector<Vec2> trajectory;  // local to the action's BOP
  int source_item = -1;          // test item that supplied duration and path
};

struct ActionChain {
  int first_item = -1;        // candidate whose context starts the motion
  MotionClip initial_motion;  // that candidate's context
  std::vector<ChainAction> actions;
  std::optional<int> dead_end_tag;  // set when the chain was cut short
};

struct TestsetOptions {
  ChainMode mode = ChainMode::Overall;
  int n_actions = 20;
  double confidence = 0.5;
  std::uint64_t seed = 0;
};

// One chain per test item whose classifier confidence (aligned with
// test.items) reaches the threshold. Successors come from the training
// transition matrix; each action borrows duration and trajectory from a random
// test item of its tag. A tag with no successor aborts its chain and is
// recorded in dead_end_tag.
std::vector<ActionChain> build_multiaction_testset(const Dataset& test, const TransitionMatrix& train_transitions,
                                                   const std::vector<double>& confidences,
                                                   const TestsetOptions& options);

}  // namespace marionette::dataset
