#pragma once

// Transformer action recognizer: a class token attends over the canonicalized
// pose sequence; its penultimate activation is the feature used by every
// action-level metric.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>
#include <torch/torch.h>

#include "marionette/dataset.hpp"
#include "marionette/motion.hpp"
#include "marionette/nn.hpp"

namespace marionette::classifier {

using torch::Tensor;

struct Recognition {
  int tag = 0;
  double confidence = 0.0;            // max softmax probability
  std::vector<double> probabilities;  // sums to 1
};

// What the multi-action pipeline needs from a recognizer.
class ActionRecognizer {
 public:
  virtual ~ActionRecognizer() = default;
  virtual Recognition classify(const motion::MotionClip& clip) = 0;
};

struct ClassifierConfig {
  int joint_count = 22;
  int tag_count = 2;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int ff_dim = 128;
  int max_frames = 300;  // longer clips are uniformly subsampled
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

struct ClassifierTraining {
  int epochs = 60;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

class ActionClassifierImpl : public torch::nn::Module {
 public:
  explicit ActionClassifierImpl(const ClassifierConfig& config);

  const ClassifierConfig& config() const { return config_; }

  // clips [B, T, pose_dim] already canonicalized; lengths for padding.
  // Returns {features [B, d], logits [B, tags]}.
  std::pair<Tensor, Tensor> forward(const Tensor& clips, const std::vector<int>& lengths = {});

 private:
  ClassifierConfig config_;
  torch::nn::Linear pose_embedding_{nullptr};
  Tensor class_token_;
  torch::nn::ModuleList encoder_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear feature_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(ActionClassifier);

// Re-expresses a clip in the frame of its first pose and caps its length.
motion::MotionClip canonicalize(const motion::MotionClip& clip, int max_frames);

class Classifier : public ActionRecognizer {
 public:
  Classifier() = default;
  explicit Classifier(ActionClassifier net) : net_(std::move(net)) {}

  bool loaded() const { return !net_.is_empty(); }
  const ClassifierConfig& config() const { return net_->config(); }
  int feature_dim() const { return net_->config().d_model; }

  Recognition classify(const motion::MotionClip& clip) override;
  Eigen::VectorXd features(const motion::MotionClip& clip);
  // Fraction of items whose action is classified as its current tag.
  double accuracy(const dataset::Dataset& data);

  void save(const std::string& path, const nlohmann::json& meta = {}) const;
  // Throws NotFound or FormatError.
  static Classifier load(const std::string& path);

  ActionClassifier& net() { return net_; }

 private:
  ActionClassifier net_{nullptr};
};

// Cross-entropy on every item's action labelled with its current tag.
// Deterministic under both seeds.
Classifier train_classifier(const dataset::Dataset& data, const ClassifierConfig& config,
                            const ClassifierTraining& training);

}  // namespace marionette::classifier
