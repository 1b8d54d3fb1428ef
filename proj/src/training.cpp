#include "marionette/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "marionette/error.hpp"
#include "marionette/metrics.hpp"
#include "marionette/random.hpp"

namespace marionette::training {

using nlohmann::json;

namespace {

Tensor valid_frames(const std::vector<int>& lengths, int batch, int frames) {
  if (lengths.empty()) return torch::ones({batch, frames}, torch::kBool);
  return nn::padding_mask(lengths, frames).logical_not();
}

// Squared error summed over trailing dims: [B, T, ...] -> [B, T].
Tensor frame_error(const Tensor& a, const Tensor& b) {
  auto e = (a - b).pow(2);
  while (e.dim() > 2) e = e.sum(-1);
  return e;
}

// Per-sequence mean over valid frames plus lambda_V times the same over first
// differences, averaged over the batch.
Tensor term(const Tensor& pred, const Tensor& gt, const Tensor& valid, const Tensor& counts, double lambda_v) {
  const auto zero = torch::zeros({}, pred.options());
  auto value = torch::where(valid, frame_error(pred, gt), zero).sum(1) / counts;
  if (pred.size(1) >= 2) {
    const auto vel_valid = valid.slice(1, 1);
    const auto dp = pred.slice(1, 1) - pred.slice(1, 0, -1);
    const auto dg = gt.slice(1, 1) - gt.slice(1, 0, -1);
    const auto vel_counts = (counts - 1.0).clamp_min(1.0);
    value = value + lambda_v * torch::where(vel_valid, frame_error(dp, dg), zero).sum(1) / vel_counts;
  }
  return value.mean();
}

struct Forward {
  model::LatentDistribution dist;
  Tensor controls;
  Tensor first_inputs;
};

Forward encode_and_unroll(model::MarioNet& model, const Batch& batch, const Tensor& eps) {
  Forward f;
  f.dist = model->encode_condition(batch.context, batch.current, batch.next);
  const auto mode = eps.defined() ? model::SampleMode::Random : model::SampleMode::Mean;
  const auto z = model::MarioNetImpl::sample_latent(f.dist, mode, eps);
  f.controls = model->time_unroll(z, batch.current, batch.trajectory, batch.lengths);
  return f;
}

Tensor teacher_inputs(const Batch& batch, const Tensor& frames) {
  const auto bop = batch.context.slice(1, batch.context.size(1) - 1);
  return torch::cat({bop, frames.slice(1, 0, frames.size(1) - 1)}, 1);
}

double scalar(const Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

void write_csv_row(std::ofstream& out, const EpochLog& e) {
  out << e.epoch << ',' << e.loss_total << ',' << e.L_R << ',' << e.L_D << ',' << e.L_J << ',' << e.L_KL << ','
      << e.xi << '\n';
  out.flush();
}

}  // namespace

LossWeights LossWeights::for_mix_ratio(double xi) {
  LossWeights w;
  if (xi > 0.0) {
    w.lambda_1 = 0.1;
    w.lambda_2 = 0.9;
  }
  return w;
}

void LossWeights::validate() const {
  for (double v : {lambda_R, lambda_D, lambda_J, lambda_V, lambda_KL, lambda_1, lambda_2}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "loss weights must be non-negative");
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::InvalidArgument, "train config epochs: must be at least 1");
  if (!(activate_epoch >= 0 && activate_epoch < accomplish_epoch)) {
    throw Error(ErrorKind::InvalidArgument, "train config: need 0 <= activate_epoch < accomplish_epoch");
  }
  if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "train config batch_size: must be at least 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "train config learning_rate: must be positive");
  if (validate_every < 0) throw Error(ErrorKind::InvalidArgument, "train config validate_every: must be >= 0");
}

json TrainConfig::to_json() const {
  json j = {{"epochs", epochs},
            {"activate_epoch", activate_epoch},
            {"accomplish_epoch", accomplish_epoch},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"seed", seed},
            {"validate_every", validate_every},
            {"log_path", log_path}};
  j["loss_gate"] = loss_gate ? json(*loss_gate) : json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.activate_epoch = j.value("activate_epoch", c.activate_epoch);
  c.accomplish_epoch = j.value("accomplish_epoch", c.accomplish_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  c.validate_every = j.value("validate_every", c.validate_every);
  c.log_path = j.value("log_path", c.log_path);
  if (j.contains("loss_gate") && !j["loss_gate"].is_null()) c.loss_gate = j["loss_gate"].get<double>();
  return c;
}

ReconstructionTerms ReconstructionTerms::scaled(double s) const {
  return {rotation * s, root * s, joints * s, total * s};
}

ReconstructionTerms ReconstructionTerms::operator+(const ReconstructionTerms& o) const {
  return {rotation + o.rotation, root + o.root, joints + o.joints, total + o.total};
}

TorchSkeleton::TorchSkeleton(const motion::Skeleton& skeleton) : parents_(skeleton.parents) {
  skeleton.validate();
  offsets_ = torch::empty({skeleton.joint_count(), 3}, nn::options());
  for (int j = 0; j < skeleton.joint_count(); ++j) {
    for (int c = 0; c < 3; ++c) offsets_[j][c] = skeleton.offsets[static_cast<std::size_t>(j)][c];
  }
}

Tensor sixd_to_matrix(const Tensor& r6) {
  const auto a1 = r6.slice(-1, 0, 3);
  const auto a2 = r6.slice(-1, 3, 6);
  const auto b1 = a1 / a1.norm(2, -1, true);
  auto b2 = a2 - (b1 * a2).sum(-1, true) * b1;
  b2 = b2 / b2.norm(2, -1, true);
  const auto b3 = torch::cross(b1, b2, -1);
  return torch::stack({b1, b2, b3}, -1);
}

Tensor TorchSkeleton::forward_kinematics(const Tensor& poses) const {
  const int n = joint_count();
  if (poses.size(-1) != nn::pose_dim(n)) throw Error(ErrorKind::ShapeError, "pose width does not match the skeleton");
  auto lead = poses.sizes().vec();
  lead.pop_back();
  auto rot_shape = lead;
  rot_shape.push_back(n);
  rot_shape.push_back(6);
  const auto local = sixd_to_matrix(poses.slice(-1, 0, 6 * n).reshape(rot_shape));
  const auto root = poses.slice(-1, 6 * n);
  std::vector<Tensor> global(static_cast<std::size_t>(n));
  std::vector<Tensor> position(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const auto rj = local.select(-3, j);
    const int p = parents_[static_cast<std::size_t>(j)];
    if (p < 0) {
      global[j] = rj;
      position[j] = root;
    } else {
      global[j] = torch::matmul(global[p], rj);
      position[j] = position[p] + torch::matmul(global[p], offsets_[j].unsqueeze(-1)).squeeze(-1);
    }
  }
  return torch::stack(position, -2);
}

ReconstructionTerms reconstruction_loss(const Tensor& pred, const Tensor& gt, const LossWeights& weights,
                                        const TorchSkeleton& skeleton, const std::vector<int>& lengths) {
  if (pred.sizes() != gt.sizes() || pred.dim() != 3 || pred.size(2) != nn::pose_dim(skeleton.joint_count())) {
    throw Error(ErrorKind::ShapeError, "prediction and ground truth must both be [B, T, pose_dim]");
  }
  const int batch = static_cast<int>(pred.size(0));
  const int frames = static_cast<int>(pred.size(1));
  if (!lengths.empty() && static_cast<int>(lengths.size()) != batch) {
    throw Error(ErrorKind::ShapeError, "one length per batch entry");
  }
  const auto valid = valid_frames(lengths, batch, frames);
  const auto counts = valid.sum(1).to(nn::kDType);
  const int rot = 6 * skeleton.joint_count();

  ReconstructionTerms out;
  out.rotation = term(pred.slice(2, 0, rot), gt.slice(2, 0, rot), valid, counts, weights.lambda_V);
  out.root = term(pred.slice(2, rot), gt.slice(2, rot), valid, counts, weights.lambda_V);
  out.joints = term(skeleton.forward_kinematics(pred), skeleton.forward_kinematics(gt), valid, counts, weights.lambda_V);
  out.total = weights.lambda_R * out.rotation + weights.lambda_D * out.root + weights.lambda_J * out.joints;
  return out;
}

ReconstructionBreakdown reconstruction_loss(const motion::MotionClip& pred, const motion::MotionClip& gt,
                                            const LossWeights& weights, const motion::Skeleton& skeleton) {
  if (pred.size() != gt.size() || pred.empty() || pred.joint_count() != gt.joint_count()) {
    throw Error(ErrorKind::ShapeError, "clips differ in length or joint count");
  }
  torch::NoGradGuard guard;
  const auto terms = reconstruction_loss(nn::clip_to_tensor(pred).unsqueeze(0), nn::clip_to_tensor(gt).unsqueeze(0),
                                         weights, TorchSkeleton(skeleton));
  return {scalar(terms.rotation), scalar(terms.root), scalar(terms.joints), scalar(terms.total)};
}

Tensor kl_loss(const model::LatentDistribution& dist) {
  return (0.5 * (dist.mu.pow(2) + dist.log_var.exp() - dist.log_var - 1.0)).sum(-1).mean();
}

double mix_ratio(int epoch, const TrainConfig& config) {
  if (epoch <= config.activate_epoch) return 0.0;
  if (epoch >= config.accomplish_epoch) return 1.0;
  return static_cast<double>(epoch - config.activate_epoch) /
         static_cast<double>(config.accomplish_epoch - config.activate_epoch);
}

Tensor mixing_mask(int batch, int frames, const std::vector<int>& lengths, double xi, std::uint64_t seed) {
  if (!(xi >= 0.0 && xi <= 1.0)) throw Error(ErrorKind::InvalidArgument, "mix ratio must lie in [0, 1]");
  auto mask = torch::zeros({batch, frames}, torch::kBool);
  auto acc = mask.accessor<bool, 2>();
  Rng rng(seed);
  for (int b = 0; b < batch; ++b) {
    const int len = lengths.empty() ? frames : lengths[static_cast<std::size_t>(b)];
    for (int t = 0; t < len; ++t) acc[b][t] = rng.bernoulli(xi);
  }
  return mask;
}

Batch make_batch(const dataset::Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw Error(ErrorKind::InvalidArgument, "empty batch");
  const int b = static_cast<int>(indices.size());
  const int pose = nn::pose_dim(data.joint_count);
  int longest = 0;
  for (auto i : indices) longest = std::max(longest, data.items.at(i).duration);

  Batch batch;
  batch.context = torch::empty({b, data.context_length, pose}, nn::options());
  batch.action = torch::zeros({b, longest, pose}, nn::options());
  batch.trajectory = torch::zeros({b, longest, 2}, nn::options());
  batch.current = torch::empty({b}, torch::kInt64);
  batch.next = torch::empty({b}, torch::kInt64);
  for (int r = 0; r < b; ++r) {
    const auto item = dataset::normalize_item(data.items[indices[static_cast<std::size_t>(r)]]);
    batch.context[r].copy_(nn::clip_to_tensor(item.initial_motion));
    const auto frames = nn::clip_to_tensor(item.action);
    batch.action[r].slice(0, 0, item.duration).copy_(frames);
    // Padding repeats the last pose so rotations stay well-defined.
    if (item.duration < longest) batch.action[r].slice(0, item.duration).copy_(frames[item.duration - 1]);
    if (data.vocabulary.moves_root(item.current_tag)) {
      auto path = batch.trajectory[r];
      for (int t = 0; t < item.duration; ++t) {
        path[t][0] = item.trajectory[static_cast<std::size_t>(t)].x();
        path[t][1] = item.trajectory[static_cast<std::size_t>(t)].y();
      }
    }
    batch.current[r] = item.current_tag;
    batch.next[r] = item.next_tag;
    batch.lengths.push_back(item.duration);
  }
  return batch;
}

StepResult scheduled_sampling_step(model::MarioNet& model, const Batch& batch, double xi, const LossWeights& weights,
                                   const TorchSkeleton& skeleton, std::uint64_t seed) {
  if (!(xi >= 0.0 && xi <= 1.0)) throw Error(ErrorKind::InvalidArgument, "mix ratio must lie in [0, 1]");
  const int b = static_cast<int>(batch.action.size(0));
  const int frames = static_cast<int>(batch.action.size(1));
  const auto eps = model::latent_noise(b, model->config().d_model, Rng::mix(seed, 0));
  const auto f = encode_and_unroll(model, batch, eps);

  StepResult r;
  r.kl = kl_loss(f.dist);
  r.first_pass = model->decode_parallel(teacher_inputs(batch, batch.action), f.controls, batch.lengths);
  r.first = reconstruction_loss(r.first_pass, batch.action, weights, skeleton, batch.lengths);
  if (xi == 0.0) {
    r.mask = torch::zeros({b, frames}, torch::kBool);
    r.mixed = batch.action;
    r.second_pass = r.first_pass;
    r.loss = weights.lambda_1 * r.first.total + weights.lambda_KL * r.kl;
    return r;
  }
  r.mask = mixing_mask(b, frames, batch.lengths, xi, Rng::mix(seed, 1));
  r.mixed = torch::where(r.mask.unsqueeze(-1), r.first_pass, batch.action);
  r.second_pass = model->decode_parallel(teacher_inputs(batch, r.mixed), f.controls, batch.lengths);
  r.second = reconstruction_loss(r.second_pass, batch.action, weights, skeleton, batch.lengths);
  r.loss = weights.lambda_1 * r.first.total + weights.lambda_2 * r.second.total + weights.lambda_KL * r.kl;
  return r;
}

TrainResult train(const dataset::Dataset& data, const model::ModelConfig& model_config, const TrainConfig& config,
                  const dataset::Dataset* validation, const EpochCallback& on_epoch) {
  config.validate();
  data.validate();
  if (data.items.empty()) throw Error(ErrorKind::InvalidArgument, "cannot train on an empty dataset");
  auto mc = model_config;
  mc.joint_count = data.joint_count;
  mc.tag_count = data.vocabulary.size();
  mc.context_length = data.context_length;
  for (const auto& item : data.items) {
    if (item.duration > mc.max_duration) {
      throw Error(ErrorKind::DurationError, "item of " + std::to_string(item.duration) +
                                                " frames exceeds max_duration " + std::to_string(mc.max_duration));
    }
  }

  TrainResult result;
  result.model = model::make_model(mc);
  auto& model = result.model;
  model->train();
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(config.learning_rate));
  const TorchSkeleton skeleton(motion::Skeleton::resolve(data.skeleton));

  std::ofstream csv;
  if (!config.log_path.empty()) {
    csv.open(config.log_path, std::ios::trunc);
    if (!csv) throw Error(ErrorKind::IoError, "cannot write " + config.log_path);
    csv << "epoch,loss_total,L_R,L_D,L_J,L_KL,xi\n";
  }

  std::vector<std::size_t> order(data.items.size());
  std::iota(order.begin(), order.end(), 0);
  std::optional<double> last_teacher_loss;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double xi = mix_ratio(epoch, config);
    if (config.loss_gate && (!last_teacher_loss || *last_teacher_loss > *config.loss_gate)) xi = 0.0;
    const auto weights = LossWeights::for_mix_ratio(xi);

    Rng rng(Rng::mix(config.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order));

    EpochLog log;
    log.epoch = epoch;
    log.xi = xi;
    double teacher = 0.0;
    const double n = static_cast<double>(order.size());
    for (std::size_t start = 0, step = 0; start < order.size(); start += config.batch_size, ++step) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto batch = make_batch(data, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                                   order.begin() + static_cast<std::ptrdiff_t>(end)));
      const auto r = scheduled_sampling_step(model, batch, xi, weights, skeleton,
                                             Rng::mix(config.seed, (static_cast<std::uint64_t>(epoch) << 20) + step));
      optimizer.zero_grad();
      r.loss.backward();
      optimizer.step();

      const double share = static_cast<double>(end - start) / n;
      auto pass_terms = r.first.scaled(weights.lambda_1);
      if (r.second.total.defined()) pass_terms = pass_terms + r.second.scaled(weights.lambda_2);
      log.loss_total += share * scalar(r.loss);
      log.L_R += share * scalar(pass_terms.rotation);
      log.L_D += share * scalar(pass_terms.root);
      log.L_J += share * scalar(pass_terms.joints);
      log.L_KL += share * scalar(r.kl);
      teacher += share * scalar(r.first.total);
    }
    if (!std::isfinite(log.loss_total)) {
      throw Error(ErrorKind::DivergenceError, "loss became non-finite at epoch " + std::to_string(epoch));
    }
    last_teacher_loss = teacher;
    if (validation && config.validate_every > 0 && epoch % config.validate_every == 0) {
      log.validation_jpe = validation_jpe(model, *validation);
      model->train();
    }
    if (csv.is_open()) write_csv_row(csv, log);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  model->eval();
  return result;
}

double evaluation_loss(model::MarioNet& model, const dataset::Dataset& data) {
  if (data.items.empty()) throw Error(ErrorKind::InvalidArgument, "empty dataset");
  torch::NoGradGuard guard;
  const TorchSkeleton skeleton(motion::Skeleton::resolve(data.skeleton));
  const LossWeights weights;
  double sum = 0.0;
  const std::size_t chunk = 30;
  for (std::size_t start = 0; start < data.items.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.items.size(), start + chunk); ++i) idx.push_back(i);
    const auto batch = make_batch(data, idx);
    const auto f = encode_and_unroll(model, batch, Tensor());
    const auto pred = model->decode_parallel(teacher_inputs(batch, batch.action), f.controls, batch.lengths);
    sum += scalar(reconstruction_loss(pred, batch.action, weights, skeleton, batch.lengths).total) *
           static_cast<double>(idx.size());
  }
  return sum / static_cast<double>(data.items.size());
}

double validation_jpe(model::MarioNet& model, const dataset::Dataset& data) {
  if (data.items.empty()) throw Error(ErrorKind::InvalidArgument, "empty dataset");
  model->eval();
  const auto skeleton = motion::Skeleton::resolve(data.skeleton);
  double sum = 0.0;
  for (const auto& raw : data.items) {
    const auto item = dataset::normalize_item(raw);
    const auto path = data.vocabulary.moves_root(item.current_tag) ? item.trajectory : std::vector<motion::Vec2>{};
    const auto generated =
        model::generate_action(model, item.initial_motion, item.current_tag, item.next_tag, item.duration, path);
    sum += metrics::jpe(generated, item.action, skeleton);
  }
  return sum / static_cast<double>(data.items.size());
}

json checkpoint_meta(const dataset::Dataset& data, const TrainResult& result) {
  json tags = json::array();
  for (const auto& t : data.vocabulary.tags) tags.push_back({{"name", t.name}, {"kind", std::string(dataset::to_string(t.kind))}});
  json meta = {{"vocabulary", tags},
               {"skeleton", data.skeleton},
               {"context_length", data.context_length},
               {"frame_rate", data.frame_rate}};
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    meta["training"] = {{"epochs", last.epoch}, {"final_loss", last.loss_total}, {"first_loss", result.log.front().loss_total}};
  }
  return meta;
}

}  // namespace marionette::training
