#include "marionette/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "marionette/error.hpp"
#include "marionette/random.hpp"

namespace marionette::nn {

Tensor sinusoid(const Tensor& positions, int dim) {
  const auto pos = positions.to(kDType).unsqueeze(-1);
  const auto idx = torch::arange(0, dim, options());
  const auto pair = torch::floor(idx / 2.0) * 2.0;
  const auto freq = torch::exp(-std::log(10000.0) * pair / static_cast<double>(dim));
  const auto angle = pos * freq;
  const auto even = torch::remainder(idx, 2.0).eq(0.0);
  return torch::where(even, torch::sin(angle), torch::cos(angle));
}

Tensor forward_positional_encoding(int length, int dim) { return sinusoid(torch::arange(0, length, options()), dim); }

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int dim, int heads) : heads_(heads), head_dim_(dim / heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw Error(ErrorKind::InvalidArgument, "model width must be divisible by the head count");
  }
  q_ = register_module("q", torch::nn::Linear(dim, dim));
  k_ = register_module("k", torch::nn::Linear(dim, dim));
  v_ = register_module("v", torch::nn::Linear(dim, dim));
  out_ = register_module("out", torch::nn::Linear(dim, dim));
}

Tensor MultiHeadAttentionImpl::forward(const Tensor& query, const Tensor& memory, const Tensor& blocked,
                                       const Tensor& key_padding) {
  const auto batch = query.size(0);
  const auto tq = query.size(1);
  const auto tk = memory.size(1);
  auto split = [&](const Tensor& x, int64_t len) { return x.view({batch, len, heads_, head_dim_}).transpose(1, 2); };
  const auto q = split(q_(query), tq);
  const auto k = split(k_(memory), tk);
  const auto v = split(v_(memory), tk);
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim_));
  const double neg_inf = -std::numeric_limits<double>::infinity();
  if (blocked.defined()) scores = scores.masked_fill(blocked, neg_inf);
  if (key_padding.defined()) scores = scores.masked_fill(key_padding.view({batch, 1, 1, tk}), neg_inf);
  const auto weights = torch::softmax(scores, -1);
  const auto mixed = torch::matmul(weights, v).transpose(1, 2).reshape({batch, tq, heads_ * head_dim_});
  return out_(mixed);
}

FeedForwardImpl::FeedForwardImpl(int dim, int hidden) {
  in_ = register_module("in", torch::nn::Linear(dim, hidden));
  out_ = register_module("out", torch::nn::Linear(hidden, dim));
}

Tensor FeedForwardImpl::forward(const Tensor& x) { return out_(torch::gelu(in_(x))); }

EncoderLayerImpl::EncoderLayerImpl(int dim, int heads, int hidden) {
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", MultiHeadAttention(dim, heads));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  ff_ = register_module("ff", FeedForward(dim, hidden));
}

Tensor EncoderLayerImpl::forward(const Tensor& x, const Tensor& key_padding) {
  const auto h = norm1_(x);
  auto y = x + attn_->forward(h, h, Tensor(), key_padding);
  return y + ff_(norm2_(y));
}

DecoderLayerImpl::DecoderLayerImpl(int dim, int heads, int hidden) {
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  self_attn_ = register_module("self_attn", MultiHeadAttention(dim, heads));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  cross_attn_ = register_module("cross_attn", MultiHeadAttention(dim, heads));
  norm3_ = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  ff_ = register_module("ff", FeedForward(dim, hidden));
}

Tensor DecoderLayerImpl::forward(const Tensor& x, const Tensor& memory, const Tensor& self_blocked,
                                 const Tensor& self_padding, const Tensor& memory_padding) {
  const auto h = norm1_(x);
  auto y = x + self_attn_->forward(h, h, self_blocked, self_padding);
  y = y + cross_attn_->forward(norm2_(y), memory, Tensor(), memory_padding);
  return y + ff_(norm3_(y));
}

Tensor causal_mask(int length) {
  return torch::ones({length, length}, torch::kBool).triu(1);
}

Tensor padding_mask(const std::vector<int>& lengths, int max_length) {
  auto mask = torch::zeros({static_cast<int64_t>(lengths.size()), max_length}, torch::kBool);
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    if (lengths[b] < max_length) mask.index_put_({static_cast<int64_t>(b), torch::indexing::Slice(lengths[b])}, true);
  }
  return mask;
}

void initialize(torch::nn::Module& module, std::uint64_t seed) {
  torch::NoGradGuard guard;
  Rng rng(seed);
  for (auto& item : module.named_parameters()) {
    const auto& name = item.key();
    auto& p = item.value();
    auto host = torch::empty(p.sizes(), options());
    auto* data = host.data_ptr<double>();
    const auto n = host.numel();
    const bool is_norm = name.find("norm") != std::string::npos;
    if (name.ends_with("bias")) {
      for (int64_t i = 0; i < n; ++i) data[i] = 0.0;
    } else if (is_norm) {
      for (int64_t i = 0; i < n; ++i) data[i] = 1.0;
    } else if (p.dim() == 2 && name.find("embedding") != std::string::npos) {
      for (int64_t i = 0; i < n; ++i) data[i] = rng.normal();
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.dim() == 2 ? p.size(1) : n));
      for (int64_t i = 0; i < n; ++i) data[i] = rng.uniform(-bound, bound);
    }
    p.copy_(host);
  }
}

int pose_dim(int joint_count) { return joint_count * 6 + 3; }

Tensor pose_to_tensor(const motion::Pose& pose) {
  const int joints = pose.joint_count();
  auto t = torch::empty({pose_dim(joints)}, options());
  auto* d = t.data_ptr<double>();
  for (int j = 0; j < joints; ++j) {
    for (int c = 0; c < 6; ++c) d[j * 6 + c] = pose.joint_rotations(j, c);
  }
  for (int c = 0; c < 3; ++c) d[joints * 6 + c] = pose.root_translation(c);
  return t;
}

Tensor clip_to_tensor(const motion::MotionClip& clip) {
  const int joints = clip.joint_count();
  auto t = torch::empty({static_cast<int64_t>(clip.size()), pose_dim(joints)}, options());
  for (std::size_t i = 0; i < clip.size(); ++i) t[static_cast<int64_t>(i)].copy_(pose_to_tensor(clip.poses[i]));
  return t;
}

motion::Pose tensor_to_pose(const Tensor& row, int joint_count) {
  const auto host = row.detach().to(kDType).contiguous();
  if (host.numel() != pose_dim(joint_count)) throw Error(ErrorKind::ShapeError, "pose vector has the wrong length");
  const auto* d = host.data_ptr<double>();
  motion::Pose p;
  p.joint_rotations.resize(joint_count, 6);
  for (int j = 0; j < joint_count; ++j) {
    for (int c = 0; c < 6; ++c) p.joint_rotations(j, c) = d[j * 6 + c];
  }
  for (int c = 0; c < 3; ++c) p.root_translation(c) = d[joint_count * 6 + c];
  return p;
}

motion::MotionClip tensor_to_clip(const Tensor& rows, int joint_count, double frame_rate) {
  motion::MotionClip clip;
  clip.frame_rate = frame_rate;
  for (int64_t i = 0; i < rows.size(0); ++i) clip.poses.push_back(tensor_to_pose(rows[i], joint_count));
  return clip;
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (in.gcount() != sizeof v) {
    throw Error(ErrorKind::FormatError, path + " at byte " + std::to_string(static_cast<long long>(in.tellg())) +
                                            ": truncated archive");
  }
  return v;
}

std::string get_string(std::istream& in, const std::string& path) {
  const auto n = get_u64(in, path);
  if (n > (1ull << 30)) throw Error(ErrorKind::FormatError, path + ": implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::uint64_t>(in.gcount()) != n) throw Error(ErrorKind::FormatError, path + ": truncated archive");
  return s;
}

constexpr std::uint64_t kArchiveVersion = 1;

}  // namespace

void Archive::save(const std::string& path, const std::string& magic) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  put_u64(out, kArchiveVersion);
  const auto text = meta.dump();
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u64(out, tensors.size());
  for (const auto& [name, tensor] : tensors) {
    const auto host = tensor.detach().to(kDType).contiguous();
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, static_cast<std::uint64_t>(host.dim()));
    for (auto s : host.sizes()) put_u64(out, static_cast<std::uint64_t>(s));
    out.write(reinterpret_cast<const char*>(host.data_ptr<double>()),
              static_cast<std::streamsize>(host.numel() * sizeof(double)));
  }
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path);
}

Archive Archive::load(const std::string& path, const std::string& magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::NotFound, "cannot open " + path);
  std::string head(magic.size(), '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  if (head != magic) throw Error(ErrorKind::FormatError, path + " at byte 0: expected a " + magic + " archive");
  if (get_u64(in, path) != kArchiveVersion) throw Error(ErrorKind::FormatError, path + ": unsupported archive version");
  Archive a;
  try {
    a.meta = nlohmann::json::parse(get_string(in, path));
  } catch (const nlohmann::json::parse_error&) {
    throw Error(ErrorKind::FormatError, path + ": corrupt metadata block");
  }
  const auto count = get_u64(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = get_string(in, path);
    const auto dims = get_u64(in, path);
    if (dims > 8) throw Error(ErrorKind::FormatError, path + ": implausible tensor rank");
    std::vector<int64_t> sizes;
    for (std::uint64_t d = 0; d < dims; ++d) sizes.push_back(static_cast<int64_t>(get_u64(in, path)));
    auto t = torch::empty(sizes, options());
    const auto bytes = static_cast<std::streamsize>(t.numel() * sizeof(double));
    in.read(reinterpret_cast<char*>(t.data_ptr<double>()), bytes);
    if (in.gcount() != bytes) throw Error(ErrorKind::FormatError, path + ": truncated tensor '" + name + "'");
    a.tensors.emplace_back(std::move(name), std::move(t));
  }
  return a;
}

const Tensor& Archive::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw Error(ErrorKind::FormatError, "archive has no tensor '" + name + "'");
}

void store_parameters(const torch::nn::Module& module, Archive& archive, const std::string& prefix) {
  for (const auto& item : module.named_parameters()) archive.tensors.emplace_back(prefix + item.key(), item.value().detach().clone());
}

void restore_parameters(torch::nn::Module& module, const Archive& archive, const std::string& prefix) {
  torch::NoGradGuard guard;
  for (auto& item : module.named_parameters()) {
    const auto& src = archive.get(prefix + item.key());
    if (src.sizes() != item.value().sizes()) {
      throw Error(ErrorKind::ShapeError, "parameter '" + item.key() + "' has a different shape in the archive");
    }
    item.value().copy_(src);
  }
}

}  // namespace marionette::nn
