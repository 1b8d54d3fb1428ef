#include "marionette/pipeline.hpp"

#include <algorithm>
#include <numeric>

#include <Eigen/QR>

#include "marionette/error.hpp"
#include "marionette/nn.hpp"
#include "marionette/random.hpp"

namespace marionette::pipeline {

using nlohmann::json;

std::size_t BopBank::size() const {
  std::size_t n = 0;
  for (const auto& entries : by_tag) n += entries.size();
  return n;
}

bool BopBank::empty(int tag) const {
  return tag < 0 || tag >= tag_count() || by_tag[static_cast<std::size_t>(tag)].empty();
}

void BopBank::save(const std::string& path) const {
  nn::Archive archive;
  json sources = json::array();
  for (std::size_t t = 0; t < by_tag.size(); ++t) {
    json ids = json::array();
    const auto& entries = by_tag[t];
    for (const auto& e : entries) ids.push_back(e.source_item);
    sources.push_back(ids);
    if (entries.empty()) continue;
    const auto dim = entries.front().embedding.size();
    auto rows = torch::empty({static_cast<int64_t>(entries.size()), dim}, nn::options());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      std::copy(entries[i].embedding.data(), entries[i].embedding.data() + dim,
                rows[static_cast<int64_t>(i)].data_ptr<double>());
    }
    archive.tensors.emplace_back("tag_" + std::to_string(t), rows);
  }
  archive.meta = {{"tag_count", by_tag.size()}, {"sources", sources}};
  archive.save(path, "NMBB");
}

BopBank BopBank::load(const std::string& path) {
  const auto archive = nn::Archive::load(path, "NMBB");
  BopBank bank;
  try {
    const auto& sources = archive.meta.at("sources");
    bank.by_tag.resize(archive.meta.at("tag_count").get<std::size_t>());
    for (std::size_t t = 0; t < bank.by_tag.size(); ++t) {
      const auto& ids = sources.at(t);
      if (ids.empty()) continue;
      const auto rows = archive.get("tag_" + std::to_string(t)).contiguous();
      if (rows.size(0) != static_cast<int64_t>(ids.size())) {
        throw Error(ErrorKind::FormatError, path + ": tag " + std::to_string(t) + " has mismatched entries");
      }
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto row = rows[static_cast<int64_t>(i)];
        bank.by_tag[t].push_back(
            {Eigen::Map<const Eigen::VectorXd>(row.data_ptr<double>(), row.numel()), ids.at(i).get<int>()});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, path + ": malformed BOP bank metadata (" + e.what() + ")");
  }
  return bank;
}

BopBank build_bop_bank(const dataset::Dataset& train, model::MarioNet& model) {
  BopBank bank;
  bank.by_tag.resize(static_cast<std::size_t>(train.vocabulary.size()));
  for (std::size_t i = 0; i < train.items.size(); ++i) {
    const auto item = dataset::normalize_item(train.items[i]);
    bank.by_tag.at(static_cast<std::size_t>(item.current_tag))
        .push_back({model::embed_pose(model, item.initial_motion.back()), static_cast<int>(i)});
  }
  return bank;
}

ShadowStart shadow_start(const Eigen::VectorXd& f0, int tag, const BopBank& bank, int n) {
  if (bank.empty(tag)) throw Error(ErrorKind::EmptyBank, "no BOP embeddings for tag " + std::to_string(tag));
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "neighbor count must be at least 1");
  const auto& entries = bank.by_tag[static_cast<std::size_t>(tag)];
  std::vector<double> dist(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].embedding.size() != f0.size()) throw Error(ErrorKind::DimensionMismatch, "BOP embedding width differs");
    dist[i] = (entries[i].embedding - f0).squaredNorm();
  }
  std::vector<int> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist[a] < dist[b]; });
  order.resize(std::min(order.size(), static_cast<std::size_t>(n)));

  Eigen::MatrixXd basis(f0.size(), static_cast<Eigen::Index>(order.size()));
  for (std::size_t c = 0; c < order.size(); ++c) basis.col(static_cast<Eigen::Index>(c)) = entries[order[c]].embedding;
  ShadowStart out;
  out.neighbors = order;
  out.coefficients = basis.completeOrthogonalDecomposition().solve(f0);
  out.embedding = basis * out.coefficients;
  return out;
}

motion::MotionClip PipelineResult::segment(std::size_t i) const {
  const auto& a = actions.at(i);
  auto clip = motion.slice(static_cast<std::size_t>(a.start), static_cast<std::size_t>(a.start + a.length));
  clip.tag = a.tag;
  return clip;
}

json PipelineResult::report() const {
  json actions_json = json::array();
  for (const auto& a : actions) {
    actions_json.push_back({{"tag", a.tag},
                            {"start", a.start},
                            {"length", a.length},
                            {"blend_frames", a.blend_frames},
                            {"generations", a.generations},
                            {"revised", a.revised},
                            {"classifier_tag", a.classifier_tag ? json(*a.classifier_tag) : json(nullptr)},
                            {"confidence", a.confidence},
                            {"orientation_corrected", a.orientation_corrected},
                            {"orientation_angle", a.orientation_angle},
                            {"warning", a.warning}});
  }
  return {{"frames", motion.size()}, {"frame_rate", motion.frame_rate}, {"actions", actions_json}};
}

namespace {

motion::MotionClip concat(const motion::MotionClip& a, const motion::MotionClip& b) {
  motion::MotionClip out = a;
  out.poses.insert(out.poses.end(), b.poses.begin(), b.poses.end());
  return out;
}

// Turns the whole context about the vertical axis through its last root.
motion::MotionClip turn_about_bop(const motion::MotionClip& context, double delta) {
  const motion::Vec3 pivot(context.back().root_translation.x(), context.back().root_translation.y(), 0.0);
  motion::RigidFrame turn;
  turn.yaw = delta;
  turn.translation = pivot - motion::rotation_z(delta) * pivot;
  return turn.apply(context);
}

PipelineResult run(const std::vector<ActionRequest>& requests, const motion::MotionClip& initial_motion,
                   model::MarioNet& model, classifier::ActionRecognizer* recognizer, const BopBank* bank,
                   const PipelineOptions& options) {
  if (requests.empty()) throw Error(ErrorKind::InvalidArgument, "no actions requested");
  const int k = model->config().context_length;
  if (static_cast<int>(initial_motion.size()) != k) {
    throw Error(ErrorKind::ShapeError, "initial motion has " + std::to_string(initial_motion.size()) +
                                           " frames, the model needs " + std::to_string(k));
  }
  initial_motion.validate();

  PipelineResult result;
  result.motion.frame_rate = initial_motion.frame_rate;
  auto history = initial_motion;
  history.tag.reset();

  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& req = requests[i];
    if (req.duration < 1) {
      throw Error(ErrorKind::DeadRequest, "action " + std::to_string(i) + " has duration " + std::to_string(req.duration));
    }
    const int next_tag = i + 1 < requests.size() ? requests[i + 1].tag : req.tag;
    ActionRecord record;
    record.tag = req.tag;

    const auto context = history.tail(static_cast<std::size_t>(k));
    auto conditioning = context;
    std::vector<motion::Vec2> path;
    if (req.trajectory) {
      path = *req.trajectory;
      if (static_cast<int>(path.size()) != req.duration) {
        throw Error(ErrorKind::ShapeError, "action " + std::to_string(i) + " trajectory has " +
                                               std::to_string(path.size()) + " points for " +
                                               std::to_string(req.duration) + " frames");
      }
    }
    const bool global_path = req.trajectory && req.frame == trajectory::TrajectoryFrame::Global;
    if (global_path) {
      const motion::Vec2 bop = context.back().root_translation.head<2>();
      if (req.origin) {
        const motion::Vec2 shift = bop - *req.origin;
        for (auto& p : path) p += shift;
      }
      if (options.valid_range) {
        const double yaw = motion::extract_yaw(context.back().rotation_matrix(0));
        std::vector<motion::Vec2> head = {bop};
        for (std::size_t s = 0; s < path.size() && head.size() < 6; ++s) head.push_back(path[s]);
        const auto check = trajectory::orientation_check(yaw, head, *options.valid_range);
        record.orientation_angle = check.angle;
        if (check.corrected) {
          record.orientation_corrected = true;
          conditioning = turn_about_bop(context, check.yaw - yaw);
        }
      }
    }

    const auto [local_context, frame] = motion::normalize_clip(conditioning);
    if (global_path) {
      const auto to_local = frame.inverse();
      for (auto& p : path) p = to_local.apply_planar(p);
    }

    model::GenerateOptions gen;
    gen.mode = options.mode;
    gen.seed = Rng::mix(options.seed, i);
    auto local = model::generate_action(model, local_context, req.tag, next_tag, req.duration, path, gen);

    if (recognizer) {
      auto r = recognizer->classify(local);
      record.classifier_tag = r.tag;
      record.confidence = r.confidence;
      if (r.tag != req.tag) {
        if (!bank || bank->empty(req.tag)) {
          record.warning = "EmptyBank: no BOP embeddings for tag " + std::to_string(req.tag) + ", kept the first generation";
        } else {
          const auto f0 = model::embed_pose(model, local_context.back());
          gen.bop_embedding = shadow_start(f0, req.tag, *bank, options.neighbors).embedding;
          local = model::generate_action(model, local_context, req.tag, next_tag, req.duration, path, gen);
          record.generations = 2;
          record.revised = true;
          r = recognizer->classify(local);
          record.classifier_tag = r.tag;
          record.confidence = r.confidence;
          if (r.tag != req.tag) record.warning = "regeneration classified as tag " + std::to_string(r.tag);
        }
      }
    }

    auto global = motion::quantize_to_float(motion::denormalize_clip(local, frame));
    global.tag.reset();
    if (record.revised && options.blend_frames > 0) {
      auto blend = motion::quantize_to_float(motion::slerp_blend(context, global, options.blend_frames));
      blend.tag.reset();
      record.blend_frames = options.blend_frames;
      result.motion.poses.insert(result.motion.poses.end(), blend.poses.begin(), blend.poses.end());
      history = concat(history, blend);
    }
    record.start = static_cast<int>(result.motion.size());
    record.length = req.duration;
    result.motion.poses.insert(result.motion.poses.end(), global.poses.begin(), global.poses.end());
    history = concat(history, global).tail(static_cast<std::size_t>(k));
    result.actions.push_back(record);
  }
  return result;
}

}  // namespace

PipelineResult pure_generative(const std::vector<ActionRequest>& requests, const motion::MotionClip& initial_motion,
                               model::MarioNet& model, const PipelineOptions& options) {
  return run(requests, initial_motion, model, nullptr, nullptr, options);
}

PipelineResult neural_marionette(const std::vector<ActionRequest>& requests, const motion::MotionClip& initial_motion,
                                 model::MarioNet& model, classifier::ActionRecognizer& recognizer,
                                 const BopBank& bank, const PipelineOptions& options) {
  return run(requests, initial_motion, model, &recognizer, &bank, options);
}

}  // namespace marionette::pipeline
