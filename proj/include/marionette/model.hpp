#pragma once

// The single-action generator: a condition encoder producing an action-level
// latent distribution, a time-unrolling decoder that turns one latent code into
// per-frame controls, and an autoregressive pose decoder.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "marionette/motion.hpp"
#include "marionette/nn.hpp"

namespace marionette::model {

using torch::Tensor;

struct ModelConfig {
  int joint_count = 22;
  int tag_count = 2;
  int d_model = 256;
  int d_tilde = 240;  // latent share of each frame control; the rest encodes the path
  int n_heads = 4;
  int n_layers = 2;
  int ff_dim = 512;
  int context_length = 6;
  int max_duration = 300;
  bool use_trajectory = true;
  std::uint64_t seed = 0;  // parameter initialization

  int pose_dim() const { return nn::pose_dim(joint_count); }
  // Throws InvalidArgument naming the offending field.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  // d = 16, 2 heads, 1 layer per block: the configuration used for gradient
  // checks and fast tests.
  static ModelConfig tiny(int joint_count, int tag_count);
};

struct LatentDistribution {
  Tensor mu;       // [B, d]
  Tensor log_var;  // [B, d]

  Tensor sigma() const { return torch::exp(0.5 * log_var); }
};

enum class SampleMode { Mean, Random };

// Rows at positions T-1, T-2, ..., 0: the last frame always gets position 0.
// Throws DurationError outside 1..max_duration.
Tensor reverse_positional_encoding(int length, int dim, int max_duration);

class MarioNetImpl : public torch::nn::Module {
 public:
  explicit MarioNetImpl(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Shared pose embedding: [..., pose_dim] -> [..., d] and back.
  Tensor embed_pose(const Tensor& poses);
  Tensor project_pose(const Tensor& features);

  // context [B, k, pose_dim], tags [B] (int64).
  LatentDistribution encode_condition(const Tensor& context, const Tensor& current_tag, const Tensor& next_tag);

  // eps [B, d] supplies the noise for Random mode (ignored for Mean).
  static Tensor sample_latent(const LatentDistribution& dist, SampleMode mode, const Tensor& eps = {});

  // z [B, d]; trajectory [B, T, 2] in the BOP frame (zeros for in-place);
  // lengths give each sequence's duration for padded batches (all T when
  // empty). Returns controls [B, T, d].
  Tensor time_unroll(const Tensor& z, const Tensor& current_tag, const Tensor& trajectory,
                     const std::vector<int>& lengths = {});

  // inputs [B, T, pose_dim] (BOP first), controls [B, T, d]. Output t is the
  // prediction for frame t+1 and sees inputs 0..t only.
  Tensor decode_parallel(const Tensor& inputs, const Tensor& controls, const std::vector<int>& lengths = {});
  // Same with already embedded inputs [B, T, d].
  Tensor decode_embedded(const Tensor& embedded, const Tensor& controls, const std::vector<int>& lengths = {});

  // Frame-by-frame decoding from a BOP embedding [B, d]: feeds each prediction
  // back as the next input. Returns [B, T, pose_dim].
  Tensor decode_iterative(const Tensor& bop_embedding, const Tensor& controls);

 private:
  Tensor tag_vectors(const Tensor& tags);

  ModelConfig config_;
  torch::nn::Linear pose_embedding_{nullptr};
  torch::nn::Embedding tag_embedding_{nullptr};
  torch::nn::ModuleList encoder_{nullptr};
  torch::nn::LayerNorm encoder_norm_{nullptr};
  torch::nn::Linear mu_head_{nullptr}, log_var_head_{nullptr};
  torch::nn::ModuleList unroll_{nullptr};
  torch::nn::LayerNorm unroll_norm_{nullptr};
  torch::nn::Linear latent_projection_{nullptr};
  torch::nn::Linear trajectory_projection_{nullptr};
  torch::nn::ModuleList decoder_{nullptr};
  torch::nn::LayerNorm decoder_norm_{nullptr};
  torch::nn::Linear pose_head_{nullptr};
};
TORCH_MODULE(MarioNet);

MarioNet make_model(const ModelConfig& config);

struct GenerateOptions {
  SampleMode mode = SampleMode::Mean;
  std::uint64_t seed = 0;
  // Replaces the decoder's BOP embedding (Shadow Start); the encoder still
  // sees the real context.
  std::optional<Eigen::VectorXd> bop_embedding;
};

// Generates `duration` frames following `context` (already in the BOP frame:
// last pose facing -y above the origin). trajectory holds duration ground-plane
// points in that frame, or is empty for in-place actions. 6D rows of the
// result are re-orthonormalized.
motion::MotionClip generate_action(MarioNet& model, const motion::MotionClip& context, int current_tag, int next_tag,
                                   int duration, const std::vector<motion::Vec2>& trajectory,
                                   const GenerateOptions& options = {});

// embed_pose of a single pose as an Eigen vector.
Eigen::VectorXd embed_pose(MarioNet& model, const motion::Pose& pose);

// Latent noise for Random mode drawn from the project's seeded stream.
Tensor latent_noise(int batch, int dim, std::uint64_t seed);

struct Checkpoint {
  MarioNet model{nullptr};
  nlohmann::json meta;  // vocabulary, skeleton, training summary
};

void save_checkpoint(MarioNet& model, const nlohmann::json& meta, const std::string& path);
// Throws NotFound (message names the path) or FormatError.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace marionette::model
