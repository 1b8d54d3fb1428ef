#include "marionette/service.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <httplib.h>

#include "marionette/error.hpp"

namespace marionette::service {

using nlohmann::json;

std::string_view to_string(JobStatus status) {
  switch (status) {
    case JobStatus::Pending: return "pending";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "unknown";
}

void GenerationJob::advance(JobStatus next) {
  const bool ok = (status == JobStatus::Pending && next == JobStatus::Running) ||
                  (status == JobStatus::Running && (next == JobStatus::Done || next == JobStatus::Failed));
  if (!ok) {
    throw Error(ErrorKind::InvalidArgument, "job " + id + " cannot go from " + std::string(to_string(status)) + " to " +
                                                std::string(to_string(next)));
  }
  status = next;
  history.push_back(next);
}

json GenerationJob::to_json() const {
  json j = {{"id", id}, {"status", std::string(to_string(status))}};
  j["motion_id"] = motion_id.empty() ? json(nullptr) : json(motion_id);
  j["error"] = error.empty() ? json(nullptr) : json(error);
  return j;
}

json RequestIssues::to_json() const {
  json out = json::array();
  for (const auto& i : issues) out.push_back({{"field", i.field}, {"message", i.message}});
  return out;
}

namespace {

std::optional<int> read_index(const json& j, const std::string& field, std::vector<trajectory::ValidationIssue>& issues) {
  if (!j.is_number_integer()) {
    issues.push_back({field, "must be an integer"});
    return std::nullopt;
  }
  return j.get<int>();
}

}  // namespace

std::pair<GenerateRequest, RequestIssues> parse_generate_request(const json& body,
                                                                 const dataset::TagVocabulary& vocabulary) {
  GenerateRequest req;
  RequestIssues out;
  auto& issues = out.issues;
  if (!body.is_object()) {
    issues.push_back({"", "body must be a JSON object"});
    return {req, out};
  }
  if (body.contains("seed")) {
    const auto& seed = body["seed"];
    if (seed.is_number_unsigned() || (seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) req.seed = seed.get<std::uint64_t>();
    else issues.push_back({"seed", "must be a non-negative integer"});
  }
  if (body.contains("initial_motion")) {
    if (body["initial_motion"].is_string()) req.initial_motion = body["initial_motion"].get<std::string>();
    else issues.push_back({"initial_motion", "must be a string"});
  }
  if (body.contains("revise")) {
    if (body["revise"].is_boolean()) req.revise = body["revise"].get<bool>();
    else issues.push_back({"revise", "must be a boolean"});
  }
  if (!body.contains("annotation") || !body["annotation"].is_object()) {
    issues.push_back({"annotation", "required object"});
    return {req, out};
  }
  const auto& ann = body["annotation"];

  if (!ann.contains("polyline") || !ann["polyline"].is_array()) {
    issues.push_back({"annotation.polyline", "required array of [x, y] points"});
  } else {
    for (std::size_t i = 0; i < ann["polyline"].size(); ++i) {
      const auto& p = ann["polyline"][i];
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
        issues.push_back({"annotation.polyline[" + std::to_string(i) + "]", "must be [x, y]"});
        continue;
      }
      req.annotation.polyline.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
  }

  if (!ann.contains("segments") || !ann["segments"].is_array()) {
    issues.push_back({"annotation.segments", "required array"});
    return {req, out};
  }
  const std::size_t structural = issues.size();
  for (std::size_t s = 0; s < ann["segments"].size(); ++s) {
    const auto& j = ann["segments"][s];
    const std::string field = "annotation.segments[" + std::to_string(s) + "]";
    if (!j.is_object()) {
      issues.push_back({field, "must be an object"});
      continue;
    }
    trajectory::Segment seg;
    if (!j.contains("kind") || !j["kind"].is_string()) {
      issues.push_back({field + ".kind", "required: root or in-place"});
    } else {
      try {
        seg.kind = trajectory::segment_kind_from_string(j["kind"].get<std::string>());
      } catch (const Error&) {
        issues.push_back({field + ".kind", "must be root or in-place"});
      }
    }
    if (!j.contains("tag")) {
      issues.push_back({field + ".tag", "required"});
    } else if (j["tag"].is_string()) {
      const auto found = vocabulary.find(j["tag"].get<std::string>());
      if (found) seg.tag = *found;
      else issues.push_back({field + ".tag", "unknown tag '" + j["tag"].get<std::string>() + "'"});
    } else if (const auto t = read_index(j["tag"], field + ".tag", issues)) {
      seg.tag = *t;
    }
    if (!j.contains("duration")) issues.push_back({field + ".duration", "required"});
    else if (const auto d = read_index(j["duration"], field + ".duration", issues)) seg.duration = *d;
    if (seg.kind == trajectory::SegmentKind::InPlace) {
      if (!j.contains("anchor")) issues.push_back({field + ".anchor", "required for in-place segments"});
      else if (const auto a = read_index(j["anchor"], field + ".anchor", issues)) seg.begin = seg.end = *a;
    } else {
      if (!j.contains("begin")) issues.push_back({field + ".begin", "required for root segments"});
      else if (const auto b = read_index(j["begin"], field + ".begin", issues)) seg.begin = *b;
      if (!j.contains("end")) issues.push_back({field + ".end", "required for root segments"});
      else if (const auto e = read_index(j["end"], field + ".end", issues)) seg.end = *e;
    }
    req.annotation.segments.push_back(seg);
  }
  if (issues.size() == structural) {
    for (auto issue : trajectory::validate(req.annotation, vocabulary.size())) {
      issue.field = "annotation." + issue.field;
      issues.push_back(std::move(issue));
    }
  }
  return {req, out};
}

namespace {

json skeleton_json(const motion::Skeleton& skeleton) {
  json joints = json::array();
  for (int j = 0; j < skeleton.joint_count(); ++j) {
    const auto& o = skeleton.offsets[static_cast<std::size_t>(j)];
    joints.push_back({{"name", skeleton.joint_names[static_cast<std::size_t>(j)]},
                      {"parent", skeleton.parents[static_cast<std::size_t>(j)]},
                      {"offset", {o.x(), o.y(), o.z()}}});
  }
  return {{"name", skeleton.name}, {"joints", joints}};
}

json pose_row(const motion::Pose& pose) {
  json row = json::array();
  for (int i = 0; i < 3; ++i) row.push_back(pose.root_translation(i));
  for (int j = 0; j < pose.joint_count(); ++j) {
    for (int c = 0; c < 6; ++c) row.push_back(pose.joint_rotations(j, c));
  }
  return row;
}

motion::Pose pose_from_row(const json& row, int joints) {
  if (!row.is_array() || static_cast<int>(row.size()) != 3 + 6 * joints) {
    throw Error(ErrorKind::FormatError, "frame row must hold 3 + 6 * joint_count numbers");
  }
  auto pose = motion::Pose::identity(joints);
  for (int i = 0; i < 3; ++i) pose.root_translation(i) = row[static_cast<std::size_t>(i)].get<double>();
  for (int j = 0; j < joints; ++j) {
    for (int c = 0; c < 6; ++c) pose.joint_rotations(j, c) = row[static_cast<std::size_t>(3 + 6 * j + c)].get<double>();
  }
  return pose;
}

json rows(const motion::MotionClip& clip) {
  json out = json::array();
  for (const auto& p : clip.poses) out.push_back(pose_row(p));
  return out;
}

}  // namespace

json motion_payload(const StoredMotion& stored, const motion::Skeleton& skeleton, const dataset::TagVocabulary& vocabulary) {
  const auto& motion = stored.result.motion;
  json positions = json::array();
  for (const auto& pose : motion.poses) {
    json flat = json::array();
    for (const auto& p : motion::forward_kinematics(pose, skeleton)) {
      flat.push_back(p.x());
      flat.push_back(p.y());
      flat.push_back(p.z());
    }
    positions.push_back(std::move(flat));
  }
  auto report = stored.result.report();
  for (auto& a : report["actions"]) a["tag_name"] = vocabulary.tags.at(a["tag"].get<std::size_t>()).name;
  return {{"id", stored.id},
          {"job_id", stored.job_id},
          {"frame_rate", motion.frame_rate},
          {"joint_count", motion.joint_count()},
          {"layout", "root_xyz+rot6d"},
          {"skeleton", skeleton_json(skeleton)},
          {"initial_frames", rows(stored.initial_motion)},
          {"frames", rows(motion)},
          {"positions", positions},
          {"boundaries", [&] {
             json b = json::array();
             for (const auto& a : stored.result.actions) b.push_back(a.start);
             return b;
           }()},
          {"actions", report["actions"]}};
}

pipeline::PipelineResult result_from_payload(const json& payload) {
  pipeline::PipelineResult r;
  try {
    const int joints = payload.at("joint_count").get<int>();
    r.motion.frame_rate = payload.at("frame_rate").get<double>();
    for (const auto& row : payload.at("frames")) r.motion.poses.push_back(pose_from_row(row, joints));
    for (const auto& a : payload.at("actions")) {
      pipeline::ActionRecord rec;
      rec.tag = a.at("tag").get<int>();
      rec.start = a.at("start").get<int>();
      rec.length = a.at("length").get<int>();
      rec.blend_frames = a.at("blend_frames").get<int>();
      rec.generations = a.at("generations").get<int>();
      rec.revised = a.at("revised").get<bool>();
      if (!a.at("classifier_tag").is_null()) rec.classifier_tag = a["classifier_tag"].get<int>();
      rec.confidence = a.at("confidence").get<double>();
      rec.orientation_corrected = a.at("orientation_corrected").get<bool>();
      rec.orientation_angle = a.at("orientation_angle").get<double>();
      rec.warning = a.at("warning").get<std::string>();
      r.actions.push_back(rec);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("motion payload: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Service

namespace {

std::string numbered(const char* prefix, std::uint64_t n) {
  std::ostringstream s;
  s << prefix << std::setw(6) << std::setfill('0') << n;
  return s.str();
}

json error_body(const std::string& message) { return {{"error", message}}; }

}  // namespace

Service::Service(std::shared_ptr<bundle::ModelBundle> bundle, ServiceConfig config)
    : bundle_(std::move(bundle)), config_(std::move(config)) {
  if (!bundle_) throw Error(ErrorKind::InvalidArgument, "service needs a model bundle");
  if (config_.workers < 1) throw Error(ErrorKind::InvalidArgument, "service needs at least one worker");
  if (config_.store_dir) std::filesystem::create_directories(*config_.store_dir);
  motion::MotionClip rest;
  rest.frame_rate = bundle_->frame_rate;
  rest.poses.assign(static_cast<std::size_t>(bundle_->context_length), motion::Pose::identity(bundle_->skeleton.joint_count()));
  initial_["rest"] = rest;
  for (int i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Service::~Service() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  for (auto& w : workers_) w.join();
}

void Service::register_initial_motion(const std::string& ref, const motion::MotionClip& clip) {
  if (static_cast<int>(clip.size()) != bundle_->context_length) {
    throw Error(ErrorKind::ShapeError, "initial motion " + ref + " has " + std::to_string(clip.size()) +
                                           " frames, the model needs " + std::to_string(bundle_->context_length));
  }
  if (clip.joint_count() != bundle_->skeleton.joint_count()) {
    throw Error(ErrorKind::ShapeError, "initial motion " + ref + " has the wrong joint count");
  }
  clip.validate();
  std::lock_guard lock(mutex_);
  initial_[ref] = clip;
}

void Service::register_initial_motions(const dataset::Dataset& data) {
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    register_initial_motion("item-" + std::to_string(i), data.items[i].initial_motion);
  }
}

Response Service::generate(const json& body) {
  auto [request, issues] = parse_generate_request(body, bundle_->vocabulary);
  if (!issues.empty()) return {400, {{"error", "invalid generate request"}, {"issues", issues.to_json()}}};
  std::lock_guard lock(mutex_);
  if (request.initial_motion.empty()) request.initial_motion = initial_.count("item-0") ? "item-0" : "rest";
  if (!initial_.count(request.initial_motion)) {
    return {404, error_body("unknown initial motion '" + request.initial_motion + "'")};
  }
  GenerationJob job;
  job.id = numbered("job-", next_job_++);
  job.request = body;
  job.request["initial_motion"] = request.initial_motion;
  const auto id = job.id;
  jobs_.emplace(id, std::move(job));
  queue_.push_back(id);
  queue_cv_.notify_one();
  return {202, {{"job_id", id}, {"status", "pending"}}};
}

Response Service::job(const std::string& id) const {
  const auto j = find_job(id);
  if (!j) return {404, error_body("unknown job '" + id + "'")};
  return {200, j->to_json()};
}

Response Service::motion(const std::string& id) const {
  const auto m = find_motion(id);
  if (!m) return {404, error_body("unknown motion '" + id + "'")};
  return {200, motion_payload(*m, bundle_->skeleton, bundle_->vocabulary)};
}

Response Service::tags() const {
  json tags = json::array();
  for (int t = 0; t < bundle_->vocabulary.size(); ++t) {
    const auto& tag = bundle_->vocabulary.tags[static_cast<std::size_t>(t)];
    tags.push_back({{"id", t},
                    {"name", tag.name},
                    {"kind", std::string(dataset::to_string(tag.kind))},
                    {"segment_kind", bundle_->vocabulary.moves_root(t) ? "root" : "in-place"}});
  }
  return {200, {{"tags", tags}}};
}

Response Service::models() const {
  auto meta = bundle_->metadata();
  meta["path"] = config_.bundle_path;
  meta["model_config"] = bundle_->model->config().to_json();
  return {200, {{"models", json::array({meta})}}};
}

Response Service::initial_motions() const {
  std::lock_guard lock(mutex_);
  json refs = json::array();
  for (const auto& [ref, clip] : initial_) refs.push_back({{"id", ref}, {"frames", clip.size()}});
  return {200, {{"initial_motions", refs}}};
}

std::optional<GenerationJob> Service::find_job(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::optional<StoredMotion> Service::find_motion(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = motions_.find(id);
  if (it == motions_.end()) return std::nullopt;
  return it->second;
}

void Service::wait_idle() {
  std::unique_lock lock(mutex_);
  idle_cv_.wait(lock, [&] { return queue_.empty() && active_ == 0; });
}

std::optional<motion::MotionClip> Service::find_initial_motion(const std::string& ref) const {
  std::lock_guard lock(mutex_);
  const auto it = initial_.find(ref);
  if (it == initial_.end()) return std::nullopt;
  return it->second;
}

pipeline::PipelineResult Service::run(const GenerateRequest& request) {
  motion::MotionClip initial;
  {
    std::lock_guard lock(mutex_);
    const auto ref = request.initial_motion.empty() ? (initial_.count("item-0") ? "item-0" : "rest") : request.initial_motion;
    const auto it = initial_.find(ref);
    if (it == initial_.end()) throw Error(ErrorKind::NotFound, "unknown initial motion '" + ref + "'");
    initial = it->second;
  }
  const auto requests = trajectory::preprocess_annotation(request.annotation, bundle_->vocabulary.size());
  const auto options = bundle_->pipeline_options(request.seed);
  std::lock_guard model_lock(model_mutex_);
  if (request.revise) {
    return pipeline::neural_marionette(requests, initial, bundle_->model, bundle_->classifier, bundle_->bank, options);
  }
  return pipeline::pure_generative(requests, initial, bundle_->model, options);
}

void Service::worker_loop() {
  while (true) {
    std::string id;
    {
      std::unique_lock lock(mutex_);
      queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_ && queue_.empty()) return;
      id = queue_.front();
      queue_.pop_front();
      ++active_;
      jobs_.at(id).advance(JobStatus::Running);
    }
    execute(id);
    {
      std::lock_guard lock(mutex_);
      --active_;
    }
    idle_cv_.notify_all();
  }
}

void Service::execute(const std::string& job_id) {
  json body;
  {
    std::lock_guard lock(mutex_);
    body = jobs_.at(job_id).request;
  }
  try {
    const auto request = parse_generate_request(body, bundle_->vocabulary).first;
    StoredMotion stored;
    stored.job_id = job_id;
    stored.result = run(request);
    {
      std::lock_guard lock(mutex_);
      stored.initial_motion = initial_.at(request.initial_motion);
      stored.id = numbered("motion-", next_motion_++);
    }
    if (config_.store_dir) {
      std::ofstream out(*config_.store_dir / (stored.id + ".json"));
      if (!out) throw Error(ErrorKind::IoError, "cannot write motion " + stored.id);
      out << motion_payload(stored, bundle_->skeleton, bundle_->vocabulary).dump() << '\n';
    }
    std::lock_guard lock(mutex_);
    auto& job = jobs_.at(job_id);
    job.motion_id = stored.id;
    motions_.emplace(stored.id, std::move(stored));
    job.advance(JobStatus::Done);
  } catch (const std::exception& e) {
    std::lock_guard lock(mutex_);
    auto& job = jobs_.at(job_id);
    job.error = e.what();
    job.advance(JobStatus::Failed);
  }
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_header("Access-Control-Allow-Origin", "*");
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

HttpServer::HttpServer(Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  s.Post("/api/generate", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      send(res, {400, {{"error", "body is not valid JSON"}, {"issues", json::array({{{"field", ""}, {"message", e.what()}}})}}});
      return;
    }
    send(res, service_.generate(body));
  });
  s.Get(R"(/api/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.job(req.matches[1]));
  });
  s.Get(R"(/api/motions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.motion(req.matches[1]));
  });
  s.Get("/api/tags", [this](const httplib::Request&, httplib::Response& res) { send(res, service_.tags()); });
  s.Get("/api/models", [this](const httplib::Request&, httplib::Response& res) { send(res, service_.models()); });
  s.Get("/api/initial-motions",
        [this](const httplib::Request&, httplib::Response& res) { send(res, service_.initial_motions()); });
  s.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) res.set_content(json{{"error", "no such route"}}.dump(), "application/json");
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    send(res, {500, {{"error", message}}});
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw Error(ErrorKind::IoError, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

ServeSettings resolve_settings(const json& config_file, const std::optional<int>& port_flag,
                               const std::optional<std::string>& checkpoint_flag) {
  ServeSettings s;
  if (config_file.is_object()) {
    s.port = config_file.value("port", s.port);
    s.checkpoint = config_file.value("checkpoint", s.checkpoint);
    s.workers = config_file.value("workers", s.workers);
    s.host = config_file.value("host", s.host);
    s.store_dir = config_file.value("store_dir", s.store_dir);
    s.motions = config_file.value("motions", s.motions);
  }
  if (const char* env = std::getenv("MARIONETTE_PORT"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 0 || v > 65535) throw Error(ErrorKind::InvalidArgument, std::string("MARIONETTE_PORT is not a port: ") + env);
    s.port = static_cast<int>(v);
  }
  if (const char* env = std::getenv("MARIONETTE_CHECKPOINT"); env && *env) s.checkpoint = env;
  if (port_flag) s.port = *port_flag;
  if (checkpoint_flag) s.checkpoint = *checkpoint_flag;
  if (s.port < 0 || s.port > 65535) throw Error(ErrorKind::InvalidArgument, "port out of range: " + std::to_string(s.port));
  return s;
}

}  // namespace marionette::service
