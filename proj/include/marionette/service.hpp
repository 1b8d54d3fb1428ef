#pragma once

// Generation service: a job queue over the multi-action pipeline, a motion
// store and the HTTP API in front of them.
//
// Routes (bodies are JSON, described in schema/api.schema.json):
//   POST /api/generate        202 {job_id} | 400 {error, issues[]} | 404 {error}
//   GET  /api/jobs/{id}       job record | 404
//   GET  /api/motions/{id}    playback payload | 404
//   GET  /api/tags            vocabulary with tag kinds
//   GET  /api/models          loaded bundle metadata
//   GET  /api/initial-motions references accepted by POST /api/generate

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "marionette/bundle.hpp"
#include "marionette/trajectory.hpp"

namespace httplib {
class Server;
}

namespace marionette::service {

enum class JobStatus { Pending, Running, Done, Failed };

std::string_view to_string(JobStatus status);
inline std::ostream& operator<<(std::ostream& os, JobStatus status) { return os << to_string(status); }

struct GenerationJob {
  std::string id;
  JobStatus status = JobStatus::Pending;
  std::vector<JobStatus> history{JobStatus::Pending};
  nlohmann::json request;
  std::string motion_id;  // set when done
  std::string error;      // set when failed

  // pending -> running -> done | failed; anything else throws InvalidArgument.
  void advance(JobStatus next);
  nlohmann::json to_json() const;
};

struct GenerateRequest {
  trajectory::Annotation annotation;
  std::uint64_t seed = 0;
  std::string initial_motion;
  bool revise = true;  // false runs the pure generative loop
};

// Field-level problems found while reading a request body.
struct RequestIssues {
  std::vector<trajectory::ValidationIssue> issues;
  bool empty() const { return issues.empty(); }
  nlohmann::json to_json() const;
};

// Reads a generate body. Tags may be given by name or index. Structural and
// annotation issues are collected rather than thrown.
std::pair<GenerateRequest, RequestIssues> parse_generate_request(const nlohmann::json& body,
                                                                 const dataset::TagVocabulary& vocabulary);

struct StoredMotion {
  std::string id;
  std::string job_id;
  pipeline::PipelineResult result;
  motion::MotionClip initial_motion;
};

// Compact playback body: skeleton, flat per-frame pose rows, per-frame joint
// positions and the per-action records.
nlohmann::json motion_payload(const StoredMotion& stored, const motion::Skeleton& skeleton,
                              const dataset::TagVocabulary& vocabulary);
// Recovers the pipeline output from a payload bit-exactly.
pipeline::PipelineResult result_from_payload(const nlohmann::json& payload);

struct ServiceConfig {
  int workers = 1;
  std::optional<std::filesystem::path> store_dir;  // payloads also written here
  std::string bundle_path;                         // reported by /api/models
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

class Service {
 public:
  Service(std::shared_ptr<bundle::ModelBundle> bundle, ServiceConfig config = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Initial motions must have the bundle's context length. "rest" (a still
  // identity pose) is always registered.
  void register_initial_motion(const std::string& ref, const motion::MotionClip& clip);
  // Registers item-<i> for every item's context.
  void register_initial_motions(const dataset::Dataset& data);

  Response generate(const nlohmann::json& body);
  Response job(const std::string& id) const;
  Response motion(const std::string& id) const;
  Response tags() const;
  Response models() const;
  Response initial_motions() const;

  std::optional<GenerationJob> find_job(const std::string& id) const;
  std::optional<StoredMotion> find_motion(const std::string& id) const;
  std::optional<motion::MotionClip> find_initial_motion(const std::string& ref) const;
  // Blocks until every submitted job has finished.
  void wait_idle();

  // Runs the request synchronously, outside the job queue.
  pipeline::PipelineResult run(const GenerateRequest& request);

 private:
  void worker_loop();
  void execute(const std::string& job_id);

  std::shared_ptr<bundle::ModelBundle> bundle_;
  ServiceConfig config_;

  mutable std::mutex mutex_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::string> queue_;
  int active_ = 0;
  bool stopping_ = false;
  std::uint64_t next_job_ = 1;
  std::uint64_t next_motion_ = 1;
  std::map<std::string, GenerationJob> jobs_;
  std::map<std::string, StoredMotion> motions_;
  std::map<std::string, motion::MotionClip> initial_;
  std::mutex model_mutex_;
  std::vector<std::thread> workers_;
};

// Binds the routes above onto an HTTP server.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  // Returns the bound port; 0 picks a free one. Throws IoError.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  Service& service_;
  std::unique_ptr<httplib::Server> server_;
};

struct ServeSettings {
  int port = 8080;
  std::string checkpoint;
  int workers = 1;
  std::string host = "127.0.0.1";
  std::string store_dir;
  std::string motions;  // dataset whose contexts become initial motions
};

// Defaults < config file < MARIONETTE_PORT / MARIONETTE_CHECKPOINT < explicit
// flags. Throws InvalidArgument on a malformed port.
ServeSettings resolve_settings(const nlohmann::json& config_file, const std::optional<int>& port_flag,
                               const std::optional<std::string>& checkpoint_flag);

}  // namespace marionette::service
