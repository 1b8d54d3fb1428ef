#include "marionette/model.hpp"

#include "marionette/error.hpp"
#include "marionette/random.hpp"

namespace marionette::model {

using nlohmann::json;

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& field, const std::string& why) {
    if (!ok) throw Error(ErrorKind::InvalidArgument, "model config " + field + ": " + why);
  };
  require(joint_count > 0, "joint_count", "must be positive");
  require(tag_count >= 1, "tag_count", "must be positive");
  require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, "d_model", "must be divisible by n_heads");
  if (use_trajectory) {
    require(d_tilde > 0 && d_tilde < d_model, "d_tilde", "must lie strictly between 0 and d_model");
  } else {
    require(d_tilde == d_model, "d_tilde", "must equal d_model without trajectory conditioning");
  }
  require(n_layers >= 1, "n_layers", "must be at least 1");
  require(ff_dim >= 1, "ff_dim", "must be positive");
  require(context_length >= 1, "context_length", "must be at least 1");
  require(max_duration >= 1, "max_duration", "must be at least 1");
}

json ModelConfig::to_json() const {
  return {{"joint_count", joint_count},       {"tag_count", tag_count},   {"d_model", d_model},
          {"d_tilde", d_tilde},               {"n_heads", n_heads},       {"n_layers", n_layers},
          {"ff_dim", ff_dim},                 {"context_length", context_length},
          {"max_duration", max_duration},     {"use_trajectory", use_trajectory},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.joint_count = j.value("joint_count", c.joint_count);
  c.tag_count = j.value("tag_count", c.tag_count);
  c.d_model = j.value("d_model", c.d_model);
  c.d_tilde = j.value("d_tilde", c.d_model - 16);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.ff_dim = j.value("ff_dim", 2 * c.d_model);
  c.context_length = j.value("context_length", c.context_length);
  c.max_duration = j.value("max_duration", c.max_duration);
  c.use_trajectory = j.value("use_trajectory", c.use_trajectory);
  c.seed = j.value("seed", c.seed);
  if (!c.use_trajectory && !j.contains("d_tilde")) c.d_tilde = c.d_model;
  return c;
}

ModelConfig ModelConfig::tiny(int joint_count, int tag_count) {
  ModelConfig c;
  c.joint_count = joint_count;
  c.tag_count = tag_count;
  c.d_model = 16;
  c.d_tilde = 12;
  c.n_heads = 2;
  c.n_layers = 1;
  c.ff_dim = 32;
  c.max_duration = 64;
  return c;
}

Tensor reverse_positional_encoding(int length, int dim, int max_duration) {
  if (length < 1 || length > max_duration) {
    throw Error(ErrorKind::DurationError, "duration " + std::to_string(length) + " outside 1.." +
                                              std::to_string(max_duration));
  }
  return nn::sinusoid(torch::arange(length - 1, -1, -1, nn::options()), dim);
}

MarioNetImpl::MarioNetImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  pose_embedding_ = register_module("pose_embedding", torch::nn::Linear(config_.pose_dim(), d));
  tag_embedding_ = register_module("tag_embedding", torch::nn::Embedding(config_.tag_count, d));

  encoder_ = register_module("encoder", torch::nn::ModuleList());
  unroll_ = register_module("unroll", torch::nn::ModuleList());
  decoder_ = register_module("decoder", torch::nn::ModuleList());
  for (int i = 0; i < config_.n_layers; ++i) {
    encoder_->push_back(nn::EncoderLayer(d, config_.n_heads, config_.ff_dim));
    unroll_->push_back(nn::DecoderLayer(d, config_.n_heads, config_.ff_dim));
    decoder_->push_back(nn::DecoderLayer(d, config_.n_heads, config_.ff_dim));
  }
  encoder_norm_ = register_module("encoder_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  unroll_norm_ = register_module("unroll_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  decoder_norm_ = register_module("decoder_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  mu_head_ = register_module("mu_head", torch::nn::Linear(d, d));
  log_var_head_ = register_module("log_var_head", torch::nn::Linear(d, d));
  latent_projection_ = register_module("latent_projection", torch::nn::Linear(d, config_.d_tilde));
  if (config_.use_trajectory) {
    trajectory_projection_ =
        register_module("trajectory_projection", torch::nn::Linear(2, d - config_.d_tilde));
  }
  pose_head_ = register_module("pose_head", torch::nn::Linear(d, config_.pose_dim()));

  to(nn::kDType);
  nn::initialize(*this, config_.seed);
}

Tensor MarioNetImpl::embed_pose(const Tensor& poses) { return pose_embedding_(poses); }

Tensor MarioNetImpl::project_pose(const Tensor& features) { return pose_head_(features); }

Tensor MarioNetImpl::tag_vectors(const Tensor& tags) {
  if (tags.numel() > 0 && (tags.min().item<int64_t>() < 0 || tags.max().item<int64_t>() >= config_.tag_count)) {
    throw Error(ErrorKind::InvalidArgument, "tag outside the vocabulary");
  }
  return tag_embedding_(tags.to(torch::kInt64));
}

LatentDistribution MarioNetImpl::encode_condition(const Tensor& context, const Tensor& current_tag,
                                                  const Tensor& next_tag) {
  if (context.dim() != 3 || context.size(1) != config_.context_length || context.size(2) != config_.pose_dim()) {
    throw Error(ErrorKind::ShapeError, "context must be [B, " + std::to_string(config_.context_length) + ", " +
                                           std::to_string(config_.pose_dim()) + "]");
  }
  const int k = config_.context_length;
  auto tokens = torch::cat({embed_pose(context), tag_vectors(current_tag).unsqueeze(1),
                            tag_vectors(next_tag).unsqueeze(1)},
                           1);
  tokens = tokens + nn::forward_positional_encoding(k + 2, config_.d_model).unsqueeze(0);
  for (const auto& layer : *encoder_) tokens = layer->as<nn::EncoderLayer>()->forward(tokens);
  const auto action_token = encoder_norm_(tokens.select(1, k));
  return {mu_head_(action_token), log_var_head_(action_token)};
}

Tensor MarioNetImpl::sample_latent(const LatentDistribution& dist, SampleMode mode, const Tensor& eps) {
  if (mode == SampleMode::Mean) return dist.mu;
  if (!eps.defined()) throw Error(ErrorKind::InvalidArgument, "random sampling needs noise");
  return dist.mu + dist.sigma() * eps;
}

Tensor MarioNetImpl::time_unroll(const Tensor& z, const Tensor& current_tag, const Tensor& trajectory,
                                 const std::vector<int>& lengths) {
  const auto batch = z.size(0);
  const auto frames = trajectory.size(1);
  if (trajectory.dim() != 3 || trajectory.size(0) != batch || trajectory.size(2) != 2) {
    throw Error(ErrorKind::ShapeError, "trajectory must be [B, T, 2]");
  }
  std::vector<int> lens = lengths;
  if (lens.empty()) lens.assign(static_cast<std::size_t>(batch), static_cast<int>(frames));
  if (static_cast<int64_t>(lens.size()) != batch) throw Error(ErrorKind::ShapeError, "one length per batch entry");

  auto positions = torch::zeros({batch, frames}, nn::options());
  for (int64_t b = 0; b < batch; ++b) {
    const int len = lens[static_cast<std::size_t>(b)];
    if (len < 1 || len > config_.max_duration || len > frames) {
      throw Error(ErrorKind::DurationError, "duration " + std::to_string(len) + " outside 1.." +
                                                std::to_string(std::min<int64_t>(config_.max_duration, frames)));
    }
    positions[b].slice(0, 0, len).copy_(torch::arange(len - 1, -1, -1, nn::options()));
  }
  auto query = nn::sinusoid(positions, config_.d_model) + tag_vectors(current_tag).unsqueeze(1);
  const auto padding = nn::padding_mask(lens, static_cast<int>(frames));
  const auto memory = z.unsqueeze(1);
  for (const auto& layer : *unroll_) query = layer->as<nn::DecoderLayer>()->forward(query, memory, Tensor(), padding);
  auto latent = latent_projection_(unroll_norm_(query));
  if (!config_.use_trajectory) return latent;
  return torch::cat({latent, trajectory_projection_(trajectory.to(nn::kDType))}, -1);
}

Tensor MarioNetImpl::decode_parallel(const Tensor& inputs, const Tensor& controls, const std::vector<int>& lengths) {
  return decode_embedded(embed_pose(inputs), controls, lengths);
}

Tensor MarioNetImpl::decode_embedded(const Tensor& embedded, const Tensor& controls, const std::vector<int>& lengths) {
  const auto frames = embedded.size(1);
  if (controls.dim() != 3 || controls.size(0) != embedded.size(0) || controls.size(2) != config_.d_model) {
    throw Error(ErrorKind::ShapeError, "controls must be [B, T, d]");
  }
  if (frames < 1 || frames > config_.max_duration) {
    throw Error(ErrorKind::DurationError, "decoder input length outside 1.." + std::to_string(config_.max_duration));
  }
  Tensor self_padding;
  Tensor memory_padding;
  if (!lengths.empty()) {
    self_padding = nn::padding_mask(lengths, static_cast<int>(frames));
    memory_padding = nn::padding_mask(lengths, static_cast<int>(controls.size(1)));
  }
  auto x = embedded + nn::forward_positional_encoding(static_cast<int>(frames), config_.d_model).unsqueeze(0);
  const auto blocked = nn::causal_mask(static_cast<int>(frames));
  for (const auto& layer : *decoder_) {
    x = layer->as<nn::DecoderLayer>()->forward(x, controls, blocked, self_padding, memory_padding);
  }
  return project_pose(decoder_norm_(x));
}

Tensor MarioNetImpl::decode_iterative(const Tensor& bop_embedding, const Tensor& controls) {
  const auto frames = controls.size(1);
  auto inputs = bop_embedding.unsqueeze(1);
  std::vector<Tensor> outputs;
  for (int64_t t = 0; t < frames; ++t) {
    const auto step = decode_embedded(inputs, controls).select(1, t);
    outputs.push_back(step);
    if (t + 1 < frames) inputs = torch::cat({inputs, embed_pose(step).unsqueeze(1)}, 1);
  }
  return torch::stack(outputs, 1);
}

MarioNet make_model(const ModelConfig& config) { return MarioNet(config); }

Tensor latent_noise(int batch, int dim, std::uint64_t seed) {
  Rng rng(seed);
  auto eps = torch::empty({batch, dim}, nn::options());
  auto* d = eps.data_ptr<double>();
  for (int64_t i = 0; i < eps.numel(); ++i) d[i] = rng.normal();
  return eps;
}

Eigen::VectorXd embed_pose(MarioNet& model, const motion::Pose& pose) {
  torch::NoGradGuard guard;
  const auto f = model->embed_pose(nn::pose_to_tensor(pose).unsqueeze(0)).squeeze(0).contiguous();
  return Eigen::Map<const Eigen::VectorXd>(f.data_ptr<double>(), f.numel());
}

motion::MotionClip generate_action(MarioNet& model, const motion::MotionClip& context, int current_tag, int next_tag,
                                   int duration, const std::vector<motion::Vec2>& trajectory,
                                   const GenerateOptions& options) {
  torch::NoGradGuard guard;
  const auto& cfg = model->config();
  if (static_cast<int>(context.size()) != cfg.context_length) {
    throw Error(ErrorKind::ShapeError, "context has " + std::to_string(context.size()) + " frames, model expects " +
                                           std::to_string(cfg.context_length));
  }
  if (duration < 1 || duration > cfg.max_duration) {
    throw Error(ErrorKind::DurationError, "duration " + std::to_string(duration) + " outside 1.." +
                                              std::to_string(cfg.max_duration));
  }
  if (!trajectory.empty() && static_cast<int>(trajectory.size()) != duration) {
    throw Error(ErrorKind::ShapeError, "trajectory has " + std::to_string(trajectory.size()) + " points for " +
                                           std::to_string(duration) + " frames");
  }
  const auto ctx = nn::clip_to_tensor(context).unsqueeze(0);
  const auto cur = torch::tensor({static_cast<int64_t>(current_tag)});
  const auto next = torch::tensor({static_cast<int64_t>(next_tag)});
  const auto dist = model->encode_condition(ctx, cur, next);
  const auto z = MarioNetImpl::sample_latent(
      dist, options.mode, options.mode == SampleMode::Random ? latent_noise(1, cfg.d_model, options.seed) : Tensor{});

  auto path = torch::zeros({1, duration, 2}, nn::options());
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    path[0][static_cast<int64_t>(i)][0] = trajectory[i].x();
    path[0][static_cast<int64_t>(i)][1] = trajectory[i].y();
  }
  const auto controls = model->time_unroll(z, cur, path);

  Tensor bop;
  if (options.bop_embedding) {
    if (options.bop_embedding->size() != cfg.d_model) throw Error(ErrorKind::ShapeError, "BOP embedding has the wrong width");
    bop = torch::from_blob(const_cast<double*>(options.bop_embedding->data()), {1, cfg.d_model}, nn::options()).clone();
  } else {
    bop = model->embed_pose(nn::pose_to_tensor(context.back()).unsqueeze(0));
  }
  const auto poses = model->decode_iterative(bop, controls).squeeze(0);
  auto clip = nn::tensor_to_clip(poses, cfg.joint_count, context.frame_rate);
  clip.tag = current_tag;
  for (auto& p : clip.poses) {
    for (int j = 0; j < p.joint_count(); ++j) {
      try {
        p.joint_rotations.row(j) = motion::rotation_matrix_to_sixd(p.rotation_matrix(j)).transpose();
      } catch (const Error&) {
        // A collapsed 6D row is left as predicted.
      }
    }
  }
  return clip;
}

void save_checkpoint(MarioNet& model, const json& meta, const std::string& path) {
  nn::Archive archive;
  archive.meta = meta;
  archive.meta["model_config"] = model->config().to_json();
  nn::store_parameters(*model, archive);
  archive.save(path, "NMCK");
}

Checkpoint load_checkpoint(const std::string& path) {
  auto archive = nn::Archive::load(path, "NMCK");
  if (!archive.meta.contains("model_config")) throw Error(ErrorKind::FormatError, path + ": checkpoint has no model config");
  Checkpoint ck;
  ck.model = MarioNet(ModelConfig::from_json(archive.meta["model_config"]));
  nn::restore_parameters(*ck.model, archive);
  ck.meta = std::move(archive.meta);
  return ck;
}

}  // namespace marionette::model
