#pragma once

// A trained system on disk: one directory holding the generator checkpoint,
// the action classifier, the BOP bank and the metadata the pipeline needs.
//
//   <dir>/bundle.json     vocabulary, skeleton, context length, frame rate,
//                         orientation range, training transitions, configs
//   <dir>/skeleton.json
//   <dir>/model.ckpt
//   <dir>/classifier.bin
//   <dir>/bop_bank.bin

#include <optional>
#include <string>

#include <json.hpp>

#include "marionette/classifier.hpp"
#include "marionette/dataset.hpp"
#include "marionette/model.hpp"
#include "marionette/pipeline.hpp"
#include "marionette/training.hpp"

namespace marionette::bundle {

struct ModelBundle {
  model::MarioNet model{nullptr};
  classifier::Classifier classifier;
  pipeline::BopBank bank;
  dataset::TagVocabulary vocabulary;
  motion::Skeleton skeleton;
  int context_length = dataset::kDefaultContextLength;
  double frame_rate = motion::kDefaultFrameRate;
  std::optional<trajectory::AngleRange> valid_range;
  dataset::TransitionMatrix transitions;
  nlohmann::json info;  // training summary and configs

  pipeline::PipelineOptions pipeline_options(std::uint64_t seed) const;
  // Contents of bundle.json.
  nlohmann::json metadata() const;

  void save(const std::string& dir) const;
  // Throws NotFound naming the missing path, or FormatError.
  static ModelBundle load(const std::string& dir);
};

nlohmann::json vocabulary_to_json(const dataset::TagVocabulary& vocabulary);
dataset::TagVocabulary vocabulary_from_json(const nlohmann::json& j);

struct BundleConfig {
  model::ModelConfig model;
  training::TrainConfig training;
  classifier::ClassifierConfig classifier;
  classifier::ClassifierTraining classifier_training;

  nlohmann::json to_json() const;
  // Missing sections keep their defaults.
  static BundleConfig from_json(const nlohmann::json& j);
};

// Trains the generator and the classifier on `train` and derives the bank,
// transition counts and orientation range from it.
ModelBundle train_bundle(const dataset::Dataset& train, const BundleConfig& config,
                         const training::EpochCallback& on_epoch = {});

}  // namespace marionette::bundle
