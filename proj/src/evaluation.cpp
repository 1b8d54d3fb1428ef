#include "marionette/evaluation.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>

#include "marionette/error.hpp"
#include "marionette/random.hpp"

namespace marionette::evaluation {

using nlohmann::json;

std::vector<pipeline::ActionRequest> chain_requests(const dataset::ActionChain& chain,
                                                    const dataset::TagVocabulary& vocabulary) {
  std::vector<pipeline::ActionRequest> out;
  for (const auto& a : chain.actions) {
    pipeline::ActionRequest r;
    r.tag = a.tag;
    r.duration = a.duration;
    r.frame = trajectory::TrajectoryFrame::Local;
    if (vocabulary.moves_root(a.tag)) r.trajectory = a.trajectory;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<pipeline::PipelineResult> run_chains(const std::vector<dataset::ActionChain>& chains,
                                                 const dataset::TagVocabulary& vocabulary, model::MarioNet& model,
                                                 classifier::ActionRecognizer* recognizer,
                                                 const pipeline::BopBank* bank,
                                                 const pipeline::PipelineOptions& options) {
  std::vector<pipeline::PipelineResult> out;
  out.reserve(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    auto opt = options;
    opt.seed = Rng::mix(options.seed, c);
    const auto requests = chain_requests(chains[c], vocabulary);
    if (recognizer && bank) {
      out.push_back(pipeline::neural_marionette(requests, chains[c].initial_motion, model, *recognizer, *bank, opt));
    } else {
      out.push_back(pipeline::pure_generative(requests, chains[c].initial_motion, model, opt));
    }
  }
  return out;
}

dataset::Dataset result_to_dataset(const pipeline::PipelineResult& result, const motion::MotionClip& initial_motion,
                                   const dataset::TagVocabulary& vocabulary, const std::string& skeleton,
                                   int context_length, double frame_rate) {
  dataset::Dataset out;
  out.frame_rate = frame_rate;
  out.joint_count = initial_motion.joint_count();
  out.context_length = context_length;
  out.skeleton = skeleton;
  out.vocabulary = vocabulary;
  motion::MotionClip all = initial_motion;
  all.tag.reset();
  all.poses.insert(all.poses.end(), result.motion.poses.begin(), result.motion.poses.end());
  const auto offset = static_cast<int>(initial_motion.size());
  for (std::size_t i = 0; i < result.actions.size(); ++i) {
    const auto& a = result.actions[i];
    const int begin = offset + a.start;
    if (begin < context_length) throw Error(ErrorKind::TooShort, "not enough frames before action " + std::to_string(i));
    dataset::DatasetItem item;
    item.initial_motion = all.slice(static_cast<std::size_t>(begin - context_length), static_cast<std::size_t>(begin));
    item.current_tag = a.tag;
    item.next_tag = i + 1 < result.actions.size() ? result.actions[i + 1].tag : a.tag;
    item.duration = a.length;
    item.action = result.segment(i);
    for (const auto& pose : item.action.poses) item.trajectory.push_back(pose.root_translation.head<2>());
    out.items.push_back(std::move(item));
  }
  out.validate();
  return out;
}

std::vector<metrics::Feature> real_features(classifier::Classifier& classifier, const dataset::Dataset& data) {
  std::vector<metrics::Feature> out;
  out.reserve(data.items.size());
  for (const auto& item : data.items) out.push_back(classifier.features(item.action));
  return out;
}

namespace {

void check_alignment(const pipeline::PipelineResult& result, const dataset::ActionChain& chain, std::size_t m) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorKind::BoundaryMismatch, "motion " + std::to_string(m) + ": " + what);
  };
  if (result.actions.size() != chain.actions.size()) {
    fail(std::to_string(result.actions.size()) + " actions recorded, chain has " + std::to_string(chain.actions.size()));
  }
  int previous_end = 0;
  for (std::size_t i = 0; i < result.actions.size(); ++i) {
    const auto& a = result.actions[i];
    if (a.tag != chain.actions[i].tag) fail("action " + std::to_string(i) + " tag differs from the chain");
    if (a.length != chain.actions[i].duration) fail("action " + std::to_string(i) + " length differs from the chain");
    if (a.start < previous_end || a.start + a.length > static_cast<int>(result.motion.size())) {
      fail("action " + std::to_string(i) + " boundary out of order or past the motion end");
    }
    previous_end = a.start + a.length;
  }
}

std::optional<double> fid_against(const std::vector<metrics::Feature>& generated, const metrics::GaussianStats& real) {
  if (generated.size() < 2) return std::nullopt;
  return metrics::fid(metrics::GaussianStats::fit(generated), real);
}

std::string number(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

std::string number(const std::optional<double>& v) { return v ? number(*v) : std::string(); }

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

EvalReport evaluate_multiaction(const std::vector<pipeline::PipelineResult>& results,
                                const std::vector<dataset::ActionChain>& chains, classifier::Classifier& classifier,
                                const std::vector<metrics::Feature>& real, const motion::Skeleton& skeleton) {
  if (results.size() != chains.size()) {
    throw Error(ErrorKind::BoundaryMismatch, std::to_string(results.size()) + " results for " +
                                                 std::to_string(chains.size()) + " chains");
  }
  if (results.empty()) throw Error(ErrorKind::Empty, "no motions to evaluate");
  const auto real_stats = metrics::GaussianStats::fit(real);

  EvalReport report;
  report.motions = static_cast<int>(results.size());
  std::map<int, std::vector<metrics::Feature>> features_by_index;
  std::map<int, std::pair<int, int>> correct_by_index;  // index -> (correct, total)
  std::vector<metrics::Feature> later_features;
  int later_correct = 0;
  int later_total = 0;
  std::vector<std::vector<bool>> per_motion;
  std::vector<bool> all_correct;

  for (std::size_t m = 0; m < results.size(); ++m) {
    const auto& result = results[m];
    check_alignment(result, chains[m], m);
    std::vector<bool> correct;
    for (std::size_t i = 0; i < result.actions.size(); ++i) {
      const auto& a = result.actions[i];
      report.revised_actions += a.revised;
      const auto clip = result.segment(i);
      const bool ok = classifier.classify(clip).tag == a.tag;
      auto f = classifier.features(clip);
      const int index = static_cast<int>(i) + 1;
      auto& tally = correct_by_index[index];
      tally.first += ok;
      ++tally.second;
      if (i > 0) {
        later_correct += ok;
        ++later_total;
        later_features.push_back(f);
        // Everything between the previous action's start and this one.
        const auto before = result.motion.slice(static_cast<std::size_t>(result.actions[i - 1].start),
                                                static_cast<std::size_t>(a.start));
        report.gaps.push_back({static_cast<int>(m), static_cast<int>(i), metrics::transition_gaps(before, clip, skeleton)});
      }
      features_by_index[index].push_back(std::move(f));
      correct.push_back(ok);
    }
    all_correct.push_back(std::find(correct.begin(), correct.end(), false) == correct.end());
    per_motion.push_back(std::move(correct));
  }

  for (const auto& [index, tally] : correct_by_index) {
    IndexScore s;
    s.index = index;
    s.count = tally.second;
    s.accuracy = static_cast<double>(tally.first) / static_cast<double>(tally.second);
    s.fid = fid_against(features_by_index[index], real_stats);
    report.per_index.push_back(s);
  }

  if (later_total > 0) {
    Aggregate agg;
    agg.count = later_total;
    agg.accuracy = static_cast<double>(later_correct) / static_cast<double>(later_total);
    agg.fid = fid_against(later_features, real_stats);
    double pose = 0.0;
    double vel = 0.0;
    int vel_count = 0;
    for (const auto& g : report.gaps) {
      pose += g.gap.delta_pose;
      if (g.gap.delta_velocity) {
        vel += *g.gap.delta_velocity;
        ++vel_count;
      }
    }
    agg.delta_pose = pose / static_cast<double>(report.gaps.size());
    if (vel_count > 0) agg.delta_velocity = vel / vel_count;
    report.aggregate = agg;
  }
  report.action_qr = metrics::action_qr(per_motion);
  report.motion_qr = metrics::motion_qr(all_correct);
  return report;
}

json EvalReport::to_json() const {
  json indices = json::array();
  for (const auto& s : per_index) {
    indices.push_back({{"index", s.index}, {"count", s.count}, {"accuracy", s.accuracy}, {"fid", nullable(s.fid)}});
  }
  json gap_rows = json::array();
  for (const auto& g : gaps) {
    gap_rows.push_back({{"motion", g.motion},
                        {"action", g.action},
                        {"delta_pose", g.gap.delta_pose},
                        {"delta_velocity", nullable(g.gap.delta_velocity)}});
  }
  json agg = nullptr;
  if (aggregate) {
    agg = {{"count", aggregate->count},
           {"accuracy", aggregate->accuracy},
           {"fid", nullable(aggregate->fid)},
           {"delta_pose", aggregate->delta_pose},
           {"delta_velocity", nullable(aggregate->delta_velocity)}};
  }
  return {{"motions", motions},     {"aggregate", agg},         {"action_qr", action_qr}, {"motion_qr", motion_qr},
          {"revised_actions", revised_actions}, {"per_index", indices}, {"gaps", gap_rows}};
}

std::string EvalReport::summary_csv(const std::string& label) const {
  std::ostringstream out;
  out << "setting,motions,actions,acc,fid,delta_pose,delta_vel,action_qr,motion_qr\n";
  out << label << ',' << motions << ',' << (aggregate ? aggregate->count : 0) << ','
      << (aggregate ? number(aggregate->accuracy) : "") << ',' << (aggregate ? number(aggregate->fid) : "") << ','
      << (aggregate ? number(aggregate->delta_pose) : "") << ','
      << (aggregate ? number(aggregate->delta_velocity) : "") << ',' << number(action_qr) << ','
      << number(motion_qr) << '\n';
  return out.str();
}

std::string EvalReport::per_index_csv() const {
  std::ostringstream out;
  out << "index,count,acc,fid\n";
  for (const auto& s : per_index) out << s.index << ',' << s.count << ',' << number(s.accuracy) << ',' << number(s.fid) << '\n';
  return out.str();
}

std::string EvalReport::gaps_csv() const {
  std::ostringstream out;
  out << "motion,action,delta_pose,delta_vel\n";
  for (const auto& g : gaps) {
    out << g.motion << ',' << g.action << ',' << number(g.gap.delta_pose) << ',' << number(g.gap.delta_velocity) << '\n';
  }
  return out.str();
}

}  // namespace marionette::evaluation
