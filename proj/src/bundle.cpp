#include "marionette/bundle.hpp"

#include <filesystem>
#include <fstream>

#include "marionette/error.hpp"

namespace marionette::bundle {

namespace fs = std::filesystem;
using nlohmann::json;

json vocabulary_to_json(const dataset::TagVocabulary& vocabulary) {
  json tags = json::array();
  for (const auto& t : vocabulary.tags) tags.push_back({{"name", t.name}, {"kind", std::string(dataset::to_string(t.kind))}});
  return tags;
}

dataset::TagVocabulary vocabulary_from_json(const json& j) {
  dataset::TagVocabulary v;
  for (const auto& t : j) {
    v.tags.push_back({t.at("name").get<std::string>(), dataset::tag_kind_from_string(t.at("kind").get<std::string>())});
  }
  v.validate();
  return v;
}

pipeline::PipelineOptions ModelBundle::pipeline_options(std::uint64_t seed) const {
  pipeline::PipelineOptions o;
  o.seed = seed;
  o.valid_range = valid_range;
  return o;
}

json ModelBundle::metadata() const {
  json meta = info;
  meta["vocabulary"] = vocabulary_to_json(vocabulary);
  meta["skeleton"] = skeleton.name;
  meta["joint_count"] = skeleton.joint_count();
  meta["context_length"] = context_length;
  meta["frame_rate"] = frame_rate;
  meta["valid_range"] = valid_range ? json{valid_range->lo, valid_range->hi} : json(nullptr);
  meta["transitions"] = transitions.counts;
  meta["bank_size"] = bank.size();
  return meta;
}

void ModelBundle::save(const std::string& dir) const {
  fs::create_directories(dir);
  const fs::path root(dir);
  std::ofstream out(root / "bundle.json");
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + (root / "bundle.json").string());
  out << metadata().dump(2) << '\n';
  out.close();
  skeleton.save((root / "skeleton.json").string());
  auto m = model;
  model::save_checkpoint(m, metadata(), (root / "model.ckpt").string());
  classifier.save((root / "classifier.bin").string());
  bank.save((root / "bop_bank.bin").string());
}

ModelBundle ModelBundle::load(const std::string& dir) {
  const fs::path root(dir);
  for (const char* name : {"bundle.json", "skeleton.json", "model.ckpt", "classifier.bin", "bop_bank.bin"}) {
    if (!fs::exists(root / name)) throw Error(ErrorKind::NotFound, "model bundle file " + (root / name).string() + " does not exist");
  }
  ModelBundle b;
  json meta;
  {
    std::ifstream in(root / "bundle.json");
    try {
      meta = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::FormatError, (root / "bundle.json").string() + ": " + e.what());
    }
  }
  try {
    b.vocabulary = vocabulary_from_json(meta.at("vocabulary"));
    b.context_length = meta.at("context_length").get<int>();
    b.frame_rate = meta.at("frame_rate").get<double>();
    if (meta.contains("valid_range") && !meta["valid_range"].is_null()) {
      b.valid_range = trajectory::AngleRange{meta["valid_range"].at(0).get<double>(), meta["valid_range"].at(1).get<double>()};
    }
    b.transitions = dataset::TransitionMatrix(b.vocabulary.size());
    const auto counts = meta.at("transitions").get<std::vector<std::int64_t>>();
    if (counts.size() != b.transitions.counts.size()) {
      throw Error(ErrorKind::FormatError, (root / "bundle.json").string() + ": transition table does not match the vocabulary");
    }
    b.transitions.counts = counts;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, (root / "bundle.json").string() + ": " + e.what());
  }
  for (const char* key : {"vocabulary", "skeleton", "joint_count", "context_length", "frame_rate", "valid_range",
                          "transitions", "bank_size"}) {
    meta.erase(key);
  }
  b.info = std::move(meta);
  b.skeleton = motion::Skeleton::load((root / "skeleton.json").string());
  b.model = model::load_checkpoint((root / "model.ckpt").string()).model;
  b.classifier = classifier::Classifier::load((root / "classifier.bin").string());
  b.bank = pipeline::BopBank::load((root / "bop_bank.bin").string());
  if (b.bank.tag_count() != b.vocabulary.size() || b.model->config().tag_count != b.vocabulary.size()) {
    throw Error(ErrorKind::FormatError, dir + ": bundle parts disagree on the tag count");
  }
  return b;
}

json BundleConfig::to_json() const {
  return {{"model", model.to_json()},
          {"training", training.to_json()},
          {"classifier", classifier.to_json()},
          {"classifier_training",
           {{"epochs", classifier_training.epochs},
            {"batch_size", classifier_training.batch_size},
            {"learning_rate", classifier_training.learning_rate},
            {"seed", classifier_training.seed}}}};
}

BundleConfig BundleConfig::from_json(const json& j) {
  BundleConfig c;
  if (j.contains("model")) c.model = model::ModelConfig::from_json(j["model"]);
  if (j.contains("training")) c.training = training::TrainConfig::from_json(j["training"]);
  if (j.contains("classifier")) c.classifier = classifier::ClassifierConfig::from_json(j["classifier"]);
  if (j.contains("classifier_training")) {
    const auto& t = j["classifier_training"];
    c.classifier_training.epochs = t.value("epochs", c.classifier_training.epochs);
    c.classifier_training.batch_size = t.value("batch_size", c.classifier_training.batch_size);
    c.classifier_training.learning_rate = t.value("learning_rate", c.classifier_training.learning_rate);
    c.classifier_training.seed = t.value("seed", c.classifier_training.seed);
  }
  return c;
}

ModelBundle train_bundle(const dataset::Dataset& train, const BundleConfig& config,
                         const training::EpochCallback& on_epoch) {
  auto result = training::train(train, config.model, config.training, nullptr, on_epoch);
  ModelBundle b;
  b.model = result.model;
  b.classifier = classifier::train_classifier(train, config.classifier, config.classifier_training);
  b.bank = pipeline::build_bop_bank(train, b.model);
  b.vocabulary = train.vocabulary;
  b.skeleton = motion::Skeleton::resolve(train.skeleton);
  b.context_length = train.context_length;
  b.frame_rate = train.frame_rate;
  const auto angles = dataset::facing_angles(train);
  if (!angles.empty()) b.valid_range = trajectory::percentile_range(angles);
  b.transitions = dataset::transition_matrix(train);
  b.info = training::checkpoint_meta(train, result);
  b.info["config"] = config.to_json();
  b.info["classifier_accuracy"] = b.classifier.accuracy(train);
  return b;
}

}  // namespace marionette::bundle
