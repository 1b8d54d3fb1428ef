#include "support/torch_doctest.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "marionette/error.hpp"
#include "marionette/random.hpp"
#include "marionette/service.hpp"
#include "support/bundle_fixture.hpp"
#include "support/schema.hpp"

// After Eigen: resolv.h defines _res.
#include <httplib.h>

using namespace marionette;
using namespace marionette::service;
using nlohmann::json;

namespace {

const testing::SchemaValidator& schema() {
  static const auto v = testing::SchemaValidator::load(MARIONETTE_SCHEMA_PATH);
  return v;
}

void check_schema(const json& value, const std::string& definition) {
  const auto errors = schema().validate(value, definition);
  for (const auto& e : errors) INFO(e);
  CHECK_MESSAGE(errors.empty(), definition << ": " << (errors.empty() ? "" : errors.front()));
}

json two_segment_request(std::uint64_t seed) {
  return {{"annotation",
           {{"polyline", {{0.0, 0.0}, {0.1, -0.2}, {0.15, -0.4}}},
            {"segments",
             {{{"kind", "root"}, {"tag", "walk"}, {"duration", 9}, {"begin", 0}, {"end", 2}},
              {{"kind", "in-place"}, {"tag", 1}, {"duration", 7}, {"anchor", 2}}}}}},
          {"seed", seed},
          {"initial_motion", "item-2"}};
}

std::string find_issue(const json& body, const std::string& field) {
  for (const auto& i : body["issues"]) {
    if (i["field"] == field) return i["message"];
  }
  return {};
}

}  // namespace

TEST_CASE("job status only moves forward") {
  const std::vector<JobStatus> all = {JobStatus::Pending, JobStatus::Running, JobStatus::Done, JobStatus::Failed};
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    GenerationJob job;
    job.id = "j";
    for (int step = 0; step < 4; ++step) {
      const auto next = all[rng.index(all.size())];
      try {
        job.advance(next);
      } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidArgument);
      }
    }
    // Whatever was attempted, the recorded path is a prefix of a legal one.
    REQUIRE(!job.history.empty());
    CHECK(job.history[0] == JobStatus::Pending);
    if (job.history.size() > 1) CHECK(job.history[1] == JobStatus::Running);
    if (job.history.size() > 2) CHECK((job.history[2] == JobStatus::Done || job.history[2] == JobStatus::Failed));
    CHECK(job.history.size() <= 3);
    CHECK(job.history.back() == job.status);
  }
}

TEST_CASE("generate request parsing") {
  const auto vocabulary = testing::small_toy_dataset().vocabulary;

  SUBCASE("valid two-segment annotation") {
    const auto [req, issues] = parse_generate_request(two_segment_request(4), vocabulary);
    CHECK(issues.empty());
    CHECK(req.seed == 4);
    CHECK(req.initial_motion == "item-2");
    REQUIRE(req.annotation.segments.size() == 2);
    CHECK(req.annotation.segments[0].tag == 0);
    CHECK(req.annotation.segments[1].kind == trajectory::SegmentKind::InPlace);
    CHECK(req.annotation.segments[1].begin == 2);
    check_schema(two_segment_request(4), "generate_request");
  }
  SUBCASE("zero duration names the segment") {
    auto body = two_segment_request(0);
    body["annotation"]["segments"][1]["duration"] = 0;
    const auto issues = parse_generate_request(body, vocabulary).second;
    REQUIRE_FALSE(issues.empty());
    CHECK(find_issue(json{{"issues", issues.to_json()}}, "annotation.segments[1].duration") != "");
    CHECK_FALSE(schema().validate(body, "generate_request").empty());
  }
  SUBCASE("type and vocabulary problems are collected") {
    auto body = two_segment_request(0);
    body["seed"] = -3;
    body["annotation"]["segments"][0]["tag"] = "fly";
    body["annotation"]["segments"][1].erase("anchor");
    body["annotation"]["polyline"][1] = {1.0};
    const json issues = {{"issues", parse_generate_request(body, vocabulary).second.to_json()}};
    CHECK(find_issue(issues, "seed") != "");
    CHECK(find_issue(issues, "annotation.segments[0].tag").find("fly") != std::string::npos);
    CHECK(find_issue(issues, "annotation.segments[1].anchor") != "");
    CHECK(find_issue(issues, "annotation.polyline[1]") != "");
  }
  SUBCASE("signed and unsigned seeds read the same") {
    auto body = two_segment_request(0);
    body["seed"] = static_cast<std::int64_t>(9);
    const auto [request, issues] = parse_generate_request(body, vocabulary);
    CHECK(issues.empty());
    CHECK(request.seed == 9);
  }
  SUBCASE("missing annotation") {
    CHECK_FALSE(parse_generate_request(json{{"seed", 1}}, vocabulary).second.empty());
    CHECK_FALSE(parse_generate_request(json::array(), vocabulary).second.empty());
  }
}

TEST_CASE("service jobs run the pipeline and store its output exactly") {
  auto bundle = testing::shared_small_bundle();
  const auto store = std::filesystem::temp_directory_path() / "marionette_service_store";
  std::filesystem::remove_all(store);
  ServiceConfig cfg;
  cfg.store_dir = store;
  cfg.bundle_path = "fixture";
  Service service(bundle, cfg);
  service.register_initial_motions(testing::small_toy_dataset());

  const auto first = service.generate(two_segment_request(11));
  const auto second = service.generate(two_segment_request(11));
  REQUIRE(first.status == 202);
  REQUIRE(second.status == 202);
  check_schema(first.body, "generate_accepted");
  service.wait_idle();

  const auto job1 = *service.find_job(first.body["job_id"]);
  const auto job2 = *service.find_job(second.body["job_id"]);
  CHECK(job1.status == JobStatus::Done);
  CHECK(job1.history == std::vector<JobStatus>{JobStatus::Pending, JobStatus::Running, JobStatus::Done});
  const auto stored1 = *service.find_motion(job1.motion_id);
  const auto stored2 = *service.find_motion(job2.motion_id);
  CHECK(stored1.result.motion == stored2.result.motion);

  const auto request = parse_generate_request(two_segment_request(11), bundle->vocabulary).first;
  const auto direct = service.run(request);
  CHECK(direct.motion == stored1.result.motion);
  CHECK(direct.motion.size() == 16 + static_cast<std::size_t>(direct.actions[1].blend_frames + direct.actions[0].blend_frames));

  const auto payload = service.motion(job1.motion_id);
  REQUIRE(payload.status == 200);
  check_schema(payload.body, "motion_payload");
  CHECK(result_from_payload(payload.body).motion == direct.motion);

  // The copy on disk parses back to the same bits.
  std::ifstream in(store / (job1.motion_id + ".json"));
  REQUIRE(in);
  const auto reloaded = result_from_payload(json::parse(in));
  CHECK(reloaded.motion == direct.motion);
  REQUIRE(reloaded.actions.size() == direct.actions.size());
  for (std::size_t i = 0; i < direct.actions.size(); ++i) {
    CHECK(reloaded.actions[i].start == direct.actions[i].start);
    CHECK(reloaded.actions[i].revised == direct.actions[i].revised);
    CHECK(reloaded.actions[i].confidence == direct.actions[i].confidence);
  }

  const auto pure = two_segment_request(11);
  auto unrevised = pure;
  unrevised["revise"] = false;
  REQUIRE(service.generate(unrevised).status == 202);
  service.wait_idle();

  CHECK(service.generate(json{{"annotation", 3}}).status == 400);
  auto unknown = two_segment_request(1);
  unknown["initial_motion"] = "nowhere";
  const auto missing = service.generate(unknown);
  CHECK(missing.status == 404);
  check_schema(missing.body, "error");
  CHECK(service.job("job-999999").status == 404);
  CHECK(service.motion("motion-999999").status == 404);

  const auto tags = service.tags();
  check_schema(tags.body, "tags");
  for (std::size_t t = 0; t < bundle->vocabulary.tags.size(); ++t) {
    CHECK(tags.body["tags"][t]["segment_kind"] == (bundle->vocabulary.moves_root(static_cast<int>(t)) ? "root" : "in-place"));
  }
  check_schema(service.models().body, "models");
  check_schema(service.initial_motions().body, "initial_motions");
}

TEST_CASE("failed jobs record the error") {
  auto bundle = testing::shared_small_bundle();
  Service service(bundle);
  // Passes request validation but exceeds the model's duration limit.
  auto body = two_segment_request(0);
  body["initial_motion"] = "rest";
  body["annotation"]["segments"][1]["duration"] = bundle->model->config().max_duration + 5;
  const auto accepted = service.generate(body);
  REQUIRE(accepted.status == 202);
  service.wait_idle();
  const auto job = *service.find_job(accepted.body["job_id"]);
  CHECK(job.status == JobStatus::Failed);
  CHECK_FALSE(job.error.empty());
  check_schema(job.to_json(), "job");
}

TEST_CASE("http round trip") {
  auto bundle = testing::shared_small_bundle();
  Service service(bundle);
  service.register_initial_motions(testing::small_toy_dataset());
  HttpServer server(service);
  const int port = server.bind("127.0.0.1", 0);
  std::thread thread([&] { server.listen(); });

  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(60, 0);

  auto posted = client.Post("/api/generate", two_segment_request(5).dump(), "application/json");
  REQUIRE(posted);
  CHECK(posted->status == 202);
  const auto accepted = json::parse(posted->body);
  check_schema(accepted, "generate_accepted");

  json job;
  for (int attempt = 0; attempt < 600; ++attempt) {
    auto polled = client.Get("/api/jobs/" + accepted["job_id"].get<std::string>());
    REQUIRE(polled);
    REQUIRE(polled->status == 200);
    job = json::parse(polled->body);
    check_schema(job, "job");
    if (job["status"] == "done" || job["status"] == "failed") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  REQUIRE(job["status"] == "done");

  auto fetched = client.Get("/api/motions/" + job["motion_id"].get<std::string>());
  REQUIRE(fetched);
  CHECK(fetched->status == 200);
  const auto payload = json::parse(fetched->body);
  check_schema(payload, "motion_payload");
  const auto direct = service.run(parse_generate_request(two_segment_request(5), bundle->vocabulary).first);
  CHECK(result_from_payload(payload).motion == direct.motion);
  CHECK(payload["boundaries"].size() == 2);
  CHECK(payload["positions"].size() == payload["frames"].size());

  auto bad = two_segment_request(5);
  bad["annotation"]["segments"][0]["duration"] = 0;
  auto rejected = client.Post("/api/generate", bad.dump(), "application/json");
  REQUIRE(rejected);
  CHECK(rejected->status == 400);
  const auto rejected_body = json::parse(rejected->body);
  check_schema(rejected_body, "validation_error");
  CHECK(find_issue(rejected_body, "annotation.segments[0].duration") != "");

  auto garbage = client.Post("/api/generate", "{not json", "application/json");
  REQUIRE(garbage);
  CHECK(garbage->status == 400);
  check_schema(json::parse(garbage->body), "validation_error");

  for (const char* path : {"/api/jobs/nope", "/api/motions/nope"}) {
    auto r = client.Get(path);
    REQUIRE(r);
    CHECK(r->status == 404);
    check_schema(json::parse(r->body), "error");
  }
  for (const auto& [path, definition] : std::vector<std::pair<std::string, std::string>>{
           {"/api/tags", "tags"}, {"/api/models", "models"}, {"/api/initial-motions", "initial_motions"}}) {
    auto r = client.Get(path);
    REQUIRE(r);
    CHECK(r->status == 200);
    check_schema(json::parse(r->body), definition);
  }

  server.stop();
  thread.join();
}

TEST_CASE("serve settings precedence") {
  unsetenv("MARIONETTE_PORT");
  unsetenv("MARIONETTE_CHECKPOINT");
  CHECK(resolve_settings(json::object(), std::nullopt, std::nullopt).port == 8080);
  const json file = {{"port", 9000}, {"checkpoint", "from-file"}, {"workers", 2}};
  auto s = resolve_settings(file, std::nullopt, std::nullopt);
  CHECK(s.port == 9000);
  CHECK(s.checkpoint == "from-file");
  CHECK(s.workers == 2);

  setenv("MARIONETTE_PORT", "9100", 1);
  setenv("MARIONETTE_CHECKPOINT", "from-env", 1);
  s = resolve_settings(file, std::nullopt, std::nullopt);
  CHECK(s.port == 9100);
  CHECK(s.checkpoint == "from-env");
  s = resolve_settings(file, 9200, std::string("from-flag"));
  CHECK(s.port == 9200);
  CHECK(s.checkpoint == "from-flag");

  setenv("MARIONETTE_PORT", "eighty", 1);
  CHECK_THROWS_AS(resolve_settings(file, std::nullopt, std::nullopt), Error);
  unsetenv("MARIONETTE_PORT");
  unsetenv("MARIONETTE_CHECKPOINT");
}
