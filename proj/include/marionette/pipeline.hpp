#pragma once

// Multi-action synthesis: the plain generate-and-stitch loop, Shadow Start
// projection of the BOP embedding, and classifier-driven Action Revision.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "marionette/classifier.hpp"
#include "marionette/dataset.hpp"
#include "marionette/model.hpp"
#include "marionette/motion.hpp"
#include "marionette/trajectory.hpp"

namespace marionette::pipeline {

using trajectory::ActionRequest;

struct BopEntry {
  Eigen::VectorXd embedding;
  int source_item = -1;
};

// Training BOP embeddings indexed by current tag.
struct BopBank {
  std::vector<std::vector<BopEntry>> by_tag;

  int tag_count() const { return static_cast<int>(by_tag.size()); }
  std::size_t size() const;
  bool empty(int tag) const;

  void save(const std::string& path) const;
  // Throws NotFound or FormatError.
  static BopBank load(const std::string& path);
};

// Embeds each item's BOP (last context frame, in its own normalized frame)
// with the model's shared pose embedding.
BopBank build_bop_bank(const dataset::Dataset& train, model::MarioNet& model);

struct ShadowStart {
  Eigen::VectorXd embedding;     // f0*
  Eigen::VectorXd coefficients;  // one per neighbor
  std::vector<int> neighbors;    // indices into the tag's bank entries, nearest first
};

// Projects f0 onto the span of its min(n, available) nearest bank embeddings
// of `tag` (minimum-norm least squares). Throws EmptyBank.
ShadowStart shadow_start(const Eigen::VectorXd& f0, int tag, const BopBank& bank, int n = 16);

struct ActionRecord {
  int tag = 0;
  int start = 0;   // index of the action's first frame in the motion
  int length = 0;  // generated frames
  int blend_frames = 0;  // slerp frames inserted just before start
  int generations = 1;
  bool revised = false;
  std::optional<int> classifier_tag;
  double confidence = 0.0;
  bool orientation_corrected = false;
  double orientation_angle = 0.0;
  std::string warning;
};

struct PipelineResult {
  motion::MotionClip motion;  // every action (and blend) after the initial motion
  std::vector<ActionRecord> actions;

  // The generated frames of action i.
  motion::MotionClip segment(std::size_t i) const;
  // Sidecar report with one record per action.
  nlohmann::json report() const;
};

struct PipelineOptions {
  std::uint64_t seed = 0;
  model::SampleMode mode = model::SampleMode::Random;
  int neighbors = 16;
  int blend_frames = 4;
  // When set, root actions whose path leaves this facing-to-path range
  // have their starting pose turned onto the nearer bound.
  std::optional<trajectory::AngleRange> valid_range;
};

// Generates every request in turn from the last k frames of what came
// before. The segment's next tag is the following request's tag (its own
// for the last one). Output frames are rounded to float32, the stored
// precision, before they serve as context. Throws DeadRequest for a duration
// below 1.
PipelineResult pure_generative(const std::vector<ActionRequest>& requests, const motion::MotionClip& initial_motion,
                               model::MarioNet& model, const PipelineOptions& options = {});

// As above, but a segment the recognizer does not assign to its requested tag
// is regenerated exactly once from a Shadow Start BOP embedding, with
// blend_frames slerp frames inserted in front of it.
PipelineResult neural_marionette(const std::vector<ActionRequest>& requests, const motion::MotionClip& initial_motion,
                                 model::MarioNet& model, classifier::ActionRecognizer& recognizer,
                                 const BopBank& bank, const PipelineOptions& options = {});

}  // namespace marionette::pipeline
