#include "marionette/classifier.hpp"

#include <algorithm>
#include <numeric>

#include "marionette/error.hpp"
#include "marionette/random.hpp"

namespace marionette::classifier {

using nlohmann::json;

void ClassifierConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorKind::InvalidArgument, "classifier config " + what);
  };
  require(joint_count > 0, "joint_count: must be positive");
  require(tag_count >= 2, "tag_count: needs at least two classes");
  require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, "d_model: must be divisible by n_heads");
  require(n_layers >= 1, "n_layers: must be at least 1");
  require(ff_dim >= 1, "ff_dim: must be positive");
  require(max_frames >= 1, "max_frames: must be at least 1");
}

json ClassifierConfig::to_json() const {
  return {{"joint_count", joint_count}, {"tag_count", tag_count}, {"d_model", d_model},
          {"n_heads", n_heads},         {"n_layers", n_layers},   {"ff_dim", ff_dim},
          {"max_frames", max_frames},   {"seed", seed}};
}

ClassifierConfig ClassifierConfig::from_json(const json& j) {
  ClassifierConfig c;
  c.joint_count = j.value("joint_count", c.joint_count);
  c.tag_count = j.value("tag_count", c.tag_count);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.max_frames = j.value("max_frames", c.max_frames);
  c.seed = j.value("seed", c.seed);
  return c;
}

ActionClassifierImpl::ActionClassifierImpl(const ClassifierConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  pose_embedding_ = register_module("pose_embedding", torch::nn::Linear(nn::pose_dim(config_.joint_count), d));
  class_token_ = register_parameter("class_embedding", torch::zeros({1, d}));
  encoder_ = register_module("encoder", torch::nn::ModuleList());
  for (int i = 0; i < config_.n_layers; ++i) encoder_->push_back(nn::EncoderLayer(d, config_.n_heads, config_.ff_dim));
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  feature_ = register_module("feature", torch::nn::Linear(d, d));
  head_ = register_module("head", torch::nn::Linear(d, config_.tag_count));
  to(nn::kDType);
  nn::initialize(*this, config_.seed);
}

std::pair<Tensor, Tensor> ActionClassifierImpl::forward(const Tensor& clips, const std::vector<int>& lengths) {
  if (clips.dim() != 3 || clips.size(2) != nn::pose_dim(config_.joint_count)) {
    throw Error(ErrorKind::ShapeError, "classifier input must be [B, T, " +
                                           std::to_string(nn::pose_dim(config_.joint_count)) + "]");
  }
  const auto batch = clips.size(0);
  const auto frames = clips.size(1);
  auto tokens = torch::cat({class_token_.unsqueeze(0).expand({batch, 1, config_.d_model}), pose_embedding_(clips)}, 1);
  tokens = tokens + nn::forward_positional_encoding(static_cast<int>(frames + 1), config_.d_model).unsqueeze(0);
  Tensor padding;
  if (!lengths.empty()) {
    std::vector<int> shifted(lengths);
    for (auto& l : shifted) ++l;
    padding = nn::padding_mask(shifted, static_cast<int>(frames + 1));
  }
  for (const auto& layer : *encoder_) tokens = layer->as<nn::EncoderLayer>()->forward(tokens, padding);
  const auto features = torch::gelu(feature_(norm_(tokens.select(1, 0))));
  return {features, head_(features)};
}

motion::MotionClip canonicalize(const motion::MotionClip& clip, int max_frames) {
  if (clip.empty()) throw Error(ErrorKind::SchemaError, "cannot classify an empty clip");
  auto local = motion::normalize_clip_at(clip, 0).first;
  if (static_cast<int>(local.size()) <= max_frames) return local;
  motion::MotionClip out = local;
  out.poses.clear();
  const double step = static_cast<double>(local.size() - 1) / static_cast<double>(max_frames - 1 > 0 ? max_frames - 1 : 1);
  for (int i = 0; i < max_frames; ++i) {
    out.poses.push_back(local.poses[static_cast<std::size_t>(std::lround(i * step))]);
  }
  return out;
}

namespace {

struct Prepared {
  Tensor clips;
  std::vector<int> lengths;
};

Prepared prepare(const std::vector<const motion::MotionClip*>& clips, int max_frames) {
  std::vector<motion::MotionClip> local;
  int longest = 0;
  for (const auto* c : clips) {
    local.push_back(canonicalize(*c, max_frames));
    longest = std::max(longest, static_cast<int>(local.back().size()));
  }
  const int pose = nn::pose_dim(local.front().joint_count());
  Prepared p;
  p.clips = torch::zeros({static_cast<int64_t>(local.size()), longest, pose}, nn::options());
  for (std::size_t i = 0; i < local.size(); ++i) {
    const auto rows = nn::clip_to_tensor(local[i]);
    p.clips[static_cast<int64_t>(i)].slice(0, 0, rows.size(0)).copy_(rows);
    p.lengths.push_back(static_cast<int>(rows.size(0)));
  }
  return p;
}

}  // namespace

Recognition Classifier::classify(const motion::MotionClip& clip) {
  if (!loaded()) throw Error(ErrorKind::InvalidArgument, "classifier not loaded");
  torch::NoGradGuard guard;
  net_->eval();
  const auto p = prepare({&clip}, net_->config().max_frames);
  const auto probs = torch::softmax(net_->forward(p.clips, p.lengths).second, -1).squeeze(0).contiguous();
  Recognition r;
  r.probabilities.assign(probs.data_ptr<double>(), probs.data_ptr<double>() + probs.numel());
  const auto best = std::max_element(r.probabilities.begin(), r.probabilities.end());
  r.tag = static_cast<int>(best - r.probabilities.begin());
  r.confidence = *best;
  return r;
}

Eigen::VectorXd Classifier::features(const motion::MotionClip& clip) {
  if (!loaded()) throw Error(ErrorKind::InvalidArgument, "classifier not loaded");
  torch::NoGradGuard guard;
  net_->eval();
  const auto p = prepare({&clip}, net_->config().max_frames);
  const auto f = net_->forward(p.clips, p.lengths).first.squeeze(0).contiguous();
  return Eigen::Map<const Eigen::VectorXd>(f.data_ptr<double>(), f.numel());
}

double Classifier::accuracy(const dataset::Dataset& data) {
  if (data.items.empty()) throw Error(ErrorKind::Empty, "no items to classify");
  int correct = 0;
  for (const auto& item : data.items) correct += classify(item.action).tag == item.current_tag;
  return static_cast<double>(correct) / static_cast<double>(data.items.size());
}

void Classifier::save(const std::string& path, const json& meta) const {
  nn::Archive archive;
  archive.meta = meta;
  archive.meta["classifier_config"] = net_->config().to_json();
  nn::store_parameters(*net_, archive);
  archive.save(path, "NMCL");
}

Classifier Classifier::load(const std::string& path) {
  const auto archive = nn::Archive::load(path, "NMCL");
  if (!archive.meta.contains("classifier_config")) {
    throw Error(ErrorKind::FormatError, path + ": classifier archive has no config");
  }
  ActionClassifier net(ClassifierConfig::from_json(archive.meta["classifier_config"]));
  nn::restore_parameters(*net, archive);
  net->eval();
  return Classifier(net);
}

Classifier train_classifier(const dataset::Dataset& data, const ClassifierConfig& config,
                            const ClassifierTraining& training) {
  if (data.items.empty()) throw Error(ErrorKind::InvalidArgument, "cannot train a classifier on no items");
  auto cfg = config;
  cfg.joint_count = data.joint_count;
  cfg.tag_count = data.vocabulary.size();
  ActionClassifier net(cfg);
  net->train();
  torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(training.learning_rate));

  std::vector<std::size_t> order(data.items.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= training.epochs; ++epoch) {
    Rng rng(Rng::mix(training.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(training.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(training.batch_size));
      std::vector<const motion::MotionClip*> clips;
      std::vector<int64_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        clips.push_back(&data.items[order[i]].action);
        labels.push_back(data.items[order[i]].current_tag);
      }
      const auto p = prepare(clips, cfg.max_frames);
      const auto logits = net->forward(p.clips, p.lengths).second;
      const auto loss = torch::nn::functional::cross_entropy(logits, torch::tensor(labels));
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
    }
  }
  net->eval();
  return Classifier(net);
}

}  // namespace marionette::classifier
