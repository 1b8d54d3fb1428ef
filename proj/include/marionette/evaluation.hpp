#pragma once

// Multi-action evaluation: runs test chains through a pipeline and scores the
// result per action index, per boundary and per motion.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "marionette/classifier.hpp"
#include "marionette/dataset.hpp"
#include "marionette/metrics.hpp"
#include "marionette/pipeline.hpp"

namespace marionette::evaluation {

// Requests for a chain. Paths are already local to each action's BOP;
// in-place tags get none.
std::vector<pipeline::ActionRequest> chain_requests(const dataset::ActionChain& chain,
                                                    const dataset::TagVocabulary& vocabulary);

// Runs every chain, chain c under seed mix(options.seed, c). With a null
// recognizer (or bank) the pure generative loop is used.
std::vector<pipeline::PipelineResult> run_chains(const std::vector<dataset::ActionChain>& chains,
                                                 const dataset::TagVocabulary& vocabulary, model::MarioNet& model,
                                                 classifier::ActionRecognizer* recognizer,
                                                 const pipeline::BopBank* bank,
                                                 const pipeline::PipelineOptions& options);

// A generated motion as dataset items, one per action: the k frames before
// the action (initial motion included) as context, the action's frames and
// its root path. The next tag is the following action's (its own for the
// last one).
dataset::Dataset result_to_dataset(const pipeline::PipelineResult& result, const motion::MotionClip& initial_motion,
                                   const dataset::TagVocabulary& vocabulary, const std::string& skeleton,
                                   int context_length, double frame_rate);

// Classifier features of every action clip in a dataset.
std::vector<metrics::Feature> real_features(classifier::Classifier& classifier, const dataset::Dataset& data);

struct IndexScore {
  int index = 0;  // 1-based action position in the chain
  int count = 0;
  double accuracy = 0.0;
  std::optional<double> fid;  // needs two clips at this index
};

struct BoundaryGap {
  int motion = 0;
  int action = 0;  // the action that starts at this boundary (>= 1)
  metrics::TransitionGap gap;
};

struct Aggregate {
  int count = 0;
  double accuracy = 0.0;
  std::optional<double> fid;
  double delta_pose = 0.0;
  std::optional<double> delta_velocity;
};

struct EvalReport {
  int motions = 0;
  std::vector<IndexScore> per_index;
  // Over every action after the first; empty when no chain has two actions.
  std::optional<Aggregate> aggregate;
  std::vector<BoundaryGap> gaps;
  double action_qr = 0.0;
  double motion_qr = 0.0;
  int revised_actions = 0;

  nlohmann::json to_json() const;
  // One row: motions,actions,acc,fid,delta_pose,delta_vel,action_qr,motion_qr.
  std::string summary_csv(const std::string& label) const;
  std::string per_index_csv() const;
  std::string gaps_csv() const;
};

// Splits each motion at its recorded boundaries and classifies every segment.
// The gap at a boundary is measured from the frames just before the action
// (a blend, when one was inserted) to the action itself. Throws
// BoundaryMismatch when a result does not line up with its chain.
EvalReport evaluate_multiaction(const std::vector<pipeline::PipelineResult>& results,
                                const std::vector<dataset::ActionChain>& chains, classifier::Classifier& classifier,
                                const std::vector<metrics::Feature>& real, const motion::Skeleton& skeleton);

}  // namespace marionette::evaluation
