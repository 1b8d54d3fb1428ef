#pragma once

// Reconstruction and KL losses, two-pass scheduled sampling and the training
// loop for the single-action generator.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "marionette/dataset.hpp"
#include "marionette/model.hpp"
#include "marionette/motion.hpp"

namespace marionette::training {

using torch::Tensor;

struct LossWeights {
  double lambda_R = 1.0;
  double lambda_D = 0.5;
  double lambda_J = 2.0;
  double lambda_V = 2.0;
  double lambda_KL = 1e-8;
  double lambda_1 = 1.0;  // teacher-forced pass
  double lambda_2 = 0.0;  // pass over the mixed inputs

  // (1, 0) while nothing is mixed, (0.1, 0.9) once sampling is active.
  static LossWeights for_mix_ratio(double xi);
  void validate() const;
};

struct TrainConfig {
  int epochs = 1000;
  int activate_epoch = 250;
  int accomplish_epoch = 750;
  int batch_size = 30;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  // Sampling also waits until the previous epoch's teacher-forced
  // reconstruction loss falls below this value. Off when unset.
  std::optional<double> loss_gate;
  // Validation JPE every n epochs when a validation set is given (0 = never).
  int validate_every = 0;
  std::string log_path;  // CSV, appended per epoch when non-empty

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Each term: frame-mean squared L2 of the value difference plus lambda_V times
// the same over first differences (dropped when T = 1).
struct ReconstructionTerms {
  Tensor rotation;  // L_R
  Tensor root;      // L_D
  Tensor joints;    // L_J
  Tensor total;     // weighted sum

  ReconstructionTerms scaled(double s) const;
  ReconstructionTerms operator+(const ReconstructionTerms& other) const;
};

// Skeleton geometry as tensors for differentiable forward kinematics.
class TorchSkeleton {
 public:
  explicit TorchSkeleton(const motion::Skeleton& skeleton);

  int joint_count() const { return static_cast<int>(parents_.size()); }
  // poses [..., pose_dim] -> joint positions [..., n_J, 3].
  Tensor forward_kinematics(const Tensor& poses) const;

 private:
  std::vector<int> parents_;
  Tensor offsets_;  // [n_J, 3]
};

// [..., 6] -> [..., 3, 3] by Gram-Schmidt, matching motion::sixd_to_rotation_matrix.
Tensor sixd_to_matrix(const Tensor& r6);

// pred, gt [B, T, pose_dim]; lengths mask padded frames (all T when empty).
// Padded frames still need valid rotations or the FK gradient turns NaN.
// Terms are averaged over the batch.
ReconstructionTerms reconstruction_loss(const Tensor& pred, const Tensor& gt, const LossWeights& weights,
                                        const TorchSkeleton& skeleton, const std::vector<int>& lengths = {});

struct ReconstructionBreakdown {
  double rotation = 0.0;
  double root = 0.0;
  double joints = 0.0;
  double total = 0.0;
};

// Clip form of the loss above. Throws ShapeError on mismatched clips.
ReconstructionBreakdown reconstruction_loss(const motion::MotionClip& pred, const motion::MotionClip& gt,
                                            const LossWeights& weights, const motion::Skeleton& skeleton);

// Batch mean of 0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1).
Tensor kl_loss(const model::LatentDistribution& dist);

// 0 before activation, 1 from completion on, linear in between.
double mix_ratio(int epoch, const TrainConfig& config);

// Per-frame Bernoulli(xi) draws over [B, T]; only frames below each length
// can be true.
Tensor mixing_mask(int batch, int frames, const std::vector<int>& lengths, double xi, std::uint64_t seed);

// Normalized, padded training items.
struct Batch {
  Tensor context;     // [B, k, pose_dim]
  Tensor current;     // [B] int64
  Tensor next;        // [B] int64
  Tensor action;      // [B, T, pose_dim]
  Tensor trajectory;  // [B, T, 2], zeros for in-place tags
  std::vector<int> lengths;
};

// Items are moved into their BOP frame; in-place tags get zero trajectories.
Batch make_batch(const dataset::Dataset& data, const std::vector<std::size_t>& indices);

struct StepResult {
  Tensor loss;
  ReconstructionTerms first;   // P' (teacher forced)
  ReconstructionTerms second;  // P'' (mixed inputs); undefined when skipped
  Tensor kl;
  Tensor first_pass;   // P'
  Tensor second_pass;  // P'' (equals P' when skipped)
  Tensor mask;         // [B, T] frames replaced by P'
  Tensor mixed;        // P^mix, target-aligned
};

// Both decoder passes share weights and carry gradients. The BOP input is
// never replaced. xi = 0 skips the second pass.
StepResult scheduled_sampling_step(model::MarioNet& model, const Batch& batch, double xi,
                                   const LossWeights& weights, const TorchSkeleton& skeleton, std::uint64_t seed);

struct EpochLog {
  int epoch = 0;
  double loss_total = 0.0;
  double L_R = 0.0;
  double L_D = 0.0;
  double L_J = 0.0;
  double L_KL = 0.0;
  double xi = 0.0;
  std::optional<double> validation_jpe;  // cm

  double reconstruction(const LossWeights& w) const { return w.lambda_R * L_R + w.lambda_D * L_D + w.lambda_J * L_J; }
};

struct TrainResult {
  model::MarioNet model{nullptr};
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Adam at a constant rate. Deterministic under config.seed. Throws
// DivergenceError naming the epoch when the loss stops being finite.
TrainResult train(const dataset::Dataset& data, const model::ModelConfig& model_config, const TrainConfig& config,
                  const dataset::Dataset* validation = nullptr, const EpochCallback& on_epoch = {});

// Teacher-forced loss of the whole dataset with mean latents.
double evaluation_loss(model::MarioNet& model, const dataset::Dataset& data);

// Mean JPE (cm) of mean-latent generations against ground truth.
double validation_jpe(model::MarioNet& model, const dataset::Dataset& data);

// Vocabulary, skeleton and context length stored alongside the weights.
nlohmann::json checkpoint_meta(const dataset::Dataset& data, const TrainResult& result);

}  // namespace marionette::training
