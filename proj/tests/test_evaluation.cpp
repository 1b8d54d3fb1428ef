#include "support/torch_doctest.hpp"

#include <filesystem>
#include <sstream>

#include "marionette/error.hpp"
#include "marionette/evaluation.hpp"
#include "support/bundle_fixture.hpp"

using namespace marionette;
using namespace marionette::evaluation;

namespace {

// One single-action "motion" per item: the real action itself.
std::pair<std::vector<pipeline::PipelineResult>, std::vector<dataset::ActionChain>> real_as_results(
    const dataset::Dataset& data) {
  std::vector<pipeline::PipelineResult> results;
  std::vector<dataset::ActionChain> chains;
  for (const auto& item : data.items) {
    pipeline::PipelineResult r;
    r.motion = item.action;
    pipeline::ActionRecord a;
    a.tag = item.current_tag;
    a.length = item.duration;
    r.actions.push_back(a);
    results.push_back(r);
    dataset::ActionChain c;
    c.initial_motion = item.initial_motion;
    c.actions.push_back({item.current_tag, item.duration, item.trajectory, 0});
    chains.push_back(c);
  }
  return {results, chains};
}

// Joins items i and j (and optional blend frames) as a two-action result.
std::pair<pipeline::PipelineResult, dataset::ActionChain> joined(const dataset::Dataset& data, std::size_t i,
                                                                 std::size_t j, int blend) {
  const auto& a = data.items[i];
  const auto& b = data.items[j];
  pipeline::PipelineResult r;
  r.motion = a.action;
  for (int f = 0; f < blend; ++f) r.motion.poses.push_back(a.action.back());
  r.motion.poses.insert(r.motion.poses.end(), b.action.poses.begin(), b.action.poses.end());
  pipeline::ActionRecord ra;
  ra.tag = a.current_tag;
  ra.length = a.duration;
  pipeline::ActionRecord rb;
  rb.tag = b.current_tag;
  rb.start = a.duration + blend;
  rb.length = b.duration;
  rb.blend_frames = blend;
  rb.revised = blend > 0;
  r.actions = {ra, rb};
  dataset::ActionChain c;
  c.initial_motion = a.initial_motion;
  c.actions = {{a.current_tag, a.duration, a.trajectory, 0}, {b.current_tag, b.duration, b.trajectory, 0}};
  return {r, c};
}

}  // namespace

TEST_CASE("real actions score like the classifier on the dataset") {
  auto bundle = testing::shared_small_bundle();
  const auto data = testing::small_toy_dataset(9);
  const auto real = real_features(bundle->classifier, data);
  const auto [results, chains] = real_as_results(data);
  const auto report = evaluate_multiaction(results, chains, bundle->classifier, real, bundle->skeleton);

  REQUIRE(report.per_index.size() == 1);
  CHECK(report.per_index[0].index == 1);
  CHECK(report.per_index[0].count == static_cast<int>(data.items.size()));
  CHECK(report.per_index[0].accuracy == doctest::Approx(bundle->classifier.accuracy(data)).epsilon(1e-12));
  REQUIRE(report.per_index[0].fid.has_value());
  CHECK(std::abs(*report.per_index[0].fid) < 1e-6);
  CHECK_FALSE(report.aggregate.has_value());
  CHECK(report.gaps.empty());
  CHECK(report.action_qr == doctest::Approx(report.per_index[0].accuracy));
  CHECK(report.motion_qr == doctest::Approx(report.per_index[0].accuracy));
}

TEST_CASE("boundary gaps and aggregates start at the second action") {
  auto bundle = testing::shared_small_bundle();
  const auto data = testing::small_toy_dataset(9);
  const auto real = real_features(bundle->classifier, data);

  std::vector<pipeline::PipelineResult> results;
  std::vector<dataset::ActionChain> chains;
  for (std::size_t i = 0; i + 1 < data.items.size(); i += 2) {
    auto [r, c] = joined(data, i, i + 1, i % 4 == 0 ? 3 : 0);
    results.push_back(r);
    chains.push_back(c);
  }
  const auto report = evaluate_multiaction(results, chains, bundle->classifier, real, bundle->skeleton);
  REQUIRE(report.per_index.size() == 2);
  REQUIRE(report.aggregate.has_value());
  CHECK(report.aggregate->count == static_cast<int>(results.size()));
  REQUIRE(report.gaps.size() == results.size());

  double pose_sum = 0.0;
  int second_correct = 0;
  std::vector<std::vector<bool>> per_motion;
  for (std::size_t m = 0; m < results.size(); ++m) {
    const auto& r = results[m];
    // The frames right before the second action, blend included.
    const auto before = r.motion.slice(0, static_cast<std::size_t>(r.actions[1].start));
    const auto expected = metrics::transition_gaps(before, r.segment(1), bundle->skeleton);
    CHECK(report.gaps[m].action == 1);
    CHECK(report.gaps[m].gap.delta_pose == doctest::Approx(expected.delta_pose).epsilon(1e-12));
    CHECK(*report.gaps[m].gap.delta_velocity == doctest::Approx(*expected.delta_velocity).epsilon(1e-12));
    pose_sum += expected.delta_pose;
    const bool first_ok = bundle->classifier.classify(r.segment(0)).tag == r.actions[0].tag;
    const bool second_ok = bundle->classifier.classify(r.segment(1)).tag == r.actions[1].tag;
    second_correct += second_ok;
    per_motion.push_back({first_ok, second_ok});
  }
  CHECK(report.aggregate->delta_pose == doctest::Approx(pose_sum / results.size()).epsilon(1e-12));
  CHECK(report.aggregate->accuracy == doctest::Approx(static_cast<double>(second_correct) / results.size()));
  CHECK(report.per_index[1].accuracy == doctest::Approx(report.aggregate->accuracy));
  CHECK(report.action_qr == doctest::Approx(metrics::action_qr(per_motion)));
  CHECK(report.motion_qr <= report.action_qr);

  const auto csv = report.summary_csv("overall");
  CHECK(csv.rfind("setting,motions,actions,acc,fid,delta_pose,delta_vel,action_qr,motion_qr\noverall,", 0) == 0);
  const auto per_index = report.per_index_csv();
  const auto gaps = report.gaps_csv();
  CHECK(std::count(per_index.begin(), per_index.end(), '\n') == 3);
  CHECK(std::count(gaps.begin(), gaps.end(), '\n') == static_cast<long>(results.size()) + 1);
  const auto j = report.to_json();
  CHECK(j["per_index"].size() == 2);
  CHECK(j["aggregate"]["count"] == results.size());
}

TEST_CASE("misaligned results are rejected") {
  auto bundle = testing::shared_small_bundle();
  const auto data = testing::small_toy_dataset(9);
  const auto real = real_features(bundle->classifier, data);
  auto [r, c] = joined(data, 0, 1, 0);
  auto expect_mismatch = [&](std::vector<pipeline::PipelineResult> rs, std::vector<dataset::ActionChain> cs) {
    CHECK_THROWS_WITH_AS(evaluate_multiaction(rs, cs, bundle->classifier, real, bundle->skeleton),
                         doctest::Contains("BoundaryMismatch"), Error);
  };
  expect_mismatch({r}, {c, c});
  auto wrong_tag = r;
  wrong_tag.actions[1].tag = 1 - wrong_tag.actions[1].tag;
  expect_mismatch({wrong_tag}, {c});
  auto overlapping = r;
  overlapping.actions[1].start -= 1;
  expect_mismatch({overlapping}, {c});
  auto past_end = r;
  past_end.motion.poses.pop_back();
  expect_mismatch({past_end}, {c});
  auto missing = r;
  missing.actions.pop_back();
  expect_mismatch({missing}, {c});
  CHECK_THROWS_AS(evaluate_multiaction({}, {}, bundle->classifier, real, bundle->skeleton), Error);
}

TEST_CASE("generated chains evaluate end to end") {
  auto bundle = testing::shared_small_bundle();
  const auto test = testing::small_toy_dataset(9);
  std::vector<double> confidence;
  for (const auto& item : test.items) confidence.push_back(bundle->classifier.classify(item.action).confidence);
  dataset::TestsetOptions opt;
  opt.n_actions = 3;
  opt.confidence = 0.0;
  opt.seed = 2;
  auto chains = dataset::build_multiaction_testset(test, bundle->transitions, confidence, opt);
  chains.resize(4);

  const auto requests = chain_requests(chains[0], bundle->vocabulary);
  REQUIRE(requests.size() == 3);
  for (std::size_t i = 0; i < requests.size(); ++i) {
    CHECK(requests[i].frame == trajectory::TrajectoryFrame::Local);
    CHECK(requests[i].trajectory.has_value() == bundle->vocabulary.moves_root(requests[i].tag));
  }

  const auto options = bundle->pipeline_options(8);
  const auto pure = run_chains(chains, bundle->vocabulary, bundle->model, nullptr, nullptr, options);
  const auto revised = run_chains(chains, bundle->vocabulary, bundle->model, &bundle->classifier, &bundle->bank, options);
  CHECK(pure[1].motion == run_chains(chains, bundle->vocabulary, bundle->model, nullptr, nullptr, options)[1].motion);
  for (const auto& r : revised) {
    for (const auto& a : r.actions) CHECK((a.generations == 1 || a.generations == 2));
  }
  const auto real = real_features(bundle->classifier, test);
  const auto report = evaluate_multiaction(revised, chains, bundle->classifier, real, bundle->skeleton);
  CHECK(report.motions == 4);
  CHECK(report.per_index.size() == 3);
  CHECK(report.gaps.size() == 8);
  CHECK(report.aggregate->count == 8);
}

TEST_CASE("bundle directory round trip") {
  auto bundle = testing::shared_small_bundle();
  const auto dir = (std::filesystem::temp_directory_path() / "marionette_bundle_test").string();
  std::filesystem::remove_all(dir);
  bundle->save(dir);
  auto loaded = bundle::ModelBundle::load(dir);

  CHECK(loaded.vocabulary == bundle->vocabulary);
  CHECK(loaded.context_length == bundle->context_length);
  CHECK(loaded.transitions.counts == bundle->transitions.counts);
  CHECK(loaded.skeleton.parents == bundle->skeleton.parents);
  REQUIRE(loaded.valid_range.has_value() == bundle->valid_range.has_value());
  if (loaded.valid_range) CHECK(loaded.valid_range->lo == bundle->valid_range->lo);
  CHECK(loaded.metadata() == bundle->metadata());
  CHECK(loaded.bank.size() == bundle->bank.size());

  const auto data = testing::small_toy_dataset();
  const auto& item = data.items[3];
  const auto local = dataset::normalize_item(item);
  CHECK(model::generate_action(loaded.model, local.initial_motion, 0, 1, 7, {}) ==
        model::generate_action(bundle->model, local.initial_motion, 0, 1, 7, {}));
  CHECK(loaded.classifier.classify(item.action).probabilities == bundle->classifier.classify(item.action).probabilities);

  std::filesystem::remove(std::filesystem::path(dir) / "classifier.bin");
  CHECK_THROWS_WITH_AS(bundle::ModelBundle::load(dir), doctest::Contains("classifier.bin"), Error);
  CHECK_THROWS_WITH_AS(bundle::ModelBundle::load(dir + "_missing"), doctest::Contains("NotFound"), Error);
}

TEST_CASE("bundle config json keeps every section") {
  auto c = testing::small_bundle_config();
  const auto back = bundle::BundleConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(bundle::BundleConfig::from_json(nlohmann::json::object()).to_json() == bundle::BundleConfig{}.to_json());
}

TEST_CASE("a generated motion converts to one dataset item per action") {
  auto bundle = testing::shared_small_bundle();
  const auto data = testing::small_toy_dataset(9);
  auto [r, c] = joined(data, 0, 1, 3);
  const auto out = result_to_dataset(r, c.initial_motion, bundle->vocabulary, "chain3", data.context_length,
                                     data.frame_rate);
  REQUIRE(out.items.size() == 2);
  CHECK((out.items[0].initial_motion.poses == c.initial_motion.poses));
  CHECK_FALSE(out.items[0].initial_motion.tag.has_value());
  CHECK(out.items[0].action == r.segment(0));
  CHECK(out.items[0].next_tag == r.actions[1].tag);
  CHECK(out.items[1].next_tag == r.actions[1].tag);
  // The second context ends with the blend frames.
  const auto k = static_cast<std::size_t>(data.context_length);
  const auto start = static_cast<std::size_t>(r.actions[1].start);
  auto context = r.motion.slice(start - k, start);
  context.tag.reset();
  CHECK(out.items[1].initial_motion == context);
  CHECK(out.items[1].action == r.segment(1));
  for (std::size_t t = 0; t < out.items[1].trajectory.size(); ++t) {
    CHECK(out.items[1].trajectory[t] == out.items[1].action.poses[t].root_translation.head<2>());
  }
  CHECK_NOTHROW(out.validate());
}
