#pragma once

// Transformer building blocks shared by the generator and the classifier,
// sinusoidal encodings, deterministic initialization and a tensor archive.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "marionette/motion.hpp"

namespace marionette::nn {

using torch::Tensor;

inline constexpr auto kDType = torch::kFloat64;

inline torch::TensorOptions options() { return torch::TensorOptions().dtype(kDType); }

// Standard sinusoid table: even columns sin(p / 10000^(2i/d)), odd columns cos.
// positions: [N] or [B, N] of (possibly fractional) positions.
Tensor sinusoid(const Tensor& positions, int dim);
// Rows for positions 0..length-1.
Tensor forward_positional_encoding(int length, int dim);

class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(int dim, int heads);

  // query [B, Tq, d], memory [B, Tk, d]. blocked [Tq, Tk] and key_padding
  // [B, Tk] are optional boolean masks where true removes the key.
  Tensor forward(const Tensor& query, const Tensor& memory, const Tensor& blocked = {},
                 const Tensor& key_padding = {});

 private:
  int heads_;
  int head_dim_;
  torch::nn::Linear q_{nullptr}, k_{nullptr}, v_{nullptr}, out_{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

class FeedForwardImpl : public torch::nn::Module {
 public:
  FeedForwardImpl(int dim, int hidden);
  Tensor forward(const Tensor& x);

 private:
  torch::nn::Linear in_{nullptr}, out_{nullptr};
};
TORCH_MODULE(FeedForward);

// Pre-norm encoder layer: self-attention then feed-forward.
class EncoderLayerImpl : public torch::nn::Module {
 public:
  EncoderLayerImpl(int dim, int heads, int hidden);
  Tensor forward(const Tensor& x, const Tensor& key_padding = {});

 private:
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  MultiHeadAttention attn_{nullptr};
  FeedForward ff_{nullptr};
};
TORCH_MODULE(EncoderLayer);

// Pre-norm decoder layer: (masked) self-attention, cross-attention to memory,
// feed-forward.
class DecoderLayerImpl : public torch::nn::Module {
 public:
  DecoderLayerImpl(int dim, int heads, int hidden);
  Tensor forward(const Tensor& x, const Tensor& memory, const Tensor& self_blocked = {},
                 const Tensor& self_padding = {}, const Tensor& memory_padding = {});

 private:
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr}, norm3_{nullptr};
  MultiHeadAttention self_attn_{nullptr}, cross_attn_{nullptr};
  FeedForward ff_{nullptr};
};
TORCH_MODULE(DecoderLayer);

// [T, T] mask blocking keys later than the query.
Tensor causal_mask(int length);
// [B, T] mask that is true past each sequence's length.
Tensor padding_mask(const std::vector<int>& lengths, int max_length);

// Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit norms and N(0, 1)
// embeddings drawn from a seeded stream in parameter-name order.
void initialize(torch::nn::Module& module, std::uint64_t seed);

// Pose vectors: [n_J * 6 rotation values, 3 root values].
int pose_dim(int joint_count);
Tensor pose_to_tensor(const motion::Pose& pose);
// [T, pose_dim]
Tensor clip_to_tensor(const motion::MotionClip& clip);
motion::Pose tensor_to_pose(const Tensor& row, int joint_count);
motion::MotionClip tensor_to_clip(const Tensor& rows, int joint_count, double frame_rate = motion::kDefaultFrameRate);

// Named float64 tensors plus structured metadata, stored bit-exactly.
struct Archive {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void save(const std::string& path, const std::string& magic) const;
  static Archive load(const std::string& path, const std::string& magic);

  const Tensor& get(const std::string& name) const;
};

void store_parameters(const torch::nn::Module& module, Archive& archive, const std::string& prefix = "");
void restore_parameters(torch::nn::Module& module, const Archive& archive, const std::string& prefix = "");

}  // namespace marionette::nn
