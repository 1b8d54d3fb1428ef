// Command-line front end: dataset generation, training, single-request
// generation, multi-action evaluation and the HTTP service.

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "marionette/bundle.hpp"
#include "marionette/error.hpp"
#include "marionette/evaluation.hpp"
#include "marionette/service.hpp"

using namespace marionette;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::NotFound, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::FormatError, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out << text;
}

dataset::ToyConfig toy_config_from_json(const json& j) {
  dataset::ToyConfig c;
  c.n_tags = j.value("n_tags", c.n_tags);
  c.items_per_tag = j.value("items_per_tag", c.items_per_tag);
  c.min_duration = j.value("min_duration", c.min_duration);
  c.max_duration = j.value("max_duration", c.max_duration);
  c.context_length = j.value("context_length", c.context_length);
  c.skeleton = j.value("skeleton", c.skeleton);
  c.seed = j.value("seed", c.seed);
  return c;
}

struct ToyArgs {
  std::string config;
  std::string out;
  std::string test_out;
  double test_ratio = 0.2;
};

void make_toy_dataset(const ToyArgs& args) {
  const auto config = toy_config_from_json(read_json(args.config));
  const auto data = dataset::generate_toy_dataset(config);
  if (args.test_out.empty()) {
    dataset::save_dataset(data, args.out);
    std::cerr << data.items.size() << " items -> " << args.out << '\n';
    return;
  }
  const auto split = dataset::split_train_test(data, args.test_ratio, 100, config.seed);
  dataset::save_dataset(split.train, args.out);
  dataset::save_dataset(split.test, args.test_out);
  std::cerr << split.train.items.size() << " train items -> " << args.out << ", " << split.test.items.size()
            << " test items -> " << args.test_out << '\n';
}

struct TrainArgs {
  std::string dataset;
  std::string config;
  std::string out;
  int log_every = 10;
};

void train(const TrainArgs& args) {
  const auto data = dataset::load_dataset(args.dataset);
  auto config = bundle::BundleConfig::from_json(read_json(args.config));
  // Shapes follow the data.
  config.model.joint_count = data.joint_count;
  config.model.tag_count = data.vocabulary.size();
  config.model.context_length = data.context_length;
  const auto trained = bundle::train_bundle(data, config, [&](const training::EpochLog& e) {
    if (args.log_every > 0 && (e.epoch == 1 || e.epoch % args.log_every == 0)) {
      std::cerr << "epoch " << e.epoch << " loss " << e.loss_total << " xi " << e.xi << '\n';
    }
  });
  trained.save(args.out);
  std::cerr << "classifier accuracy " << trained.info["classifier_accuracy"].get<double>() << ", bundle -> " << args.out
            << '\n';
}

struct GenerateArgs {
  std::string annotation;
  std::string bundle;
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "payload";
  std::string initial_motion;
  std::string motions;
  bool pure = false;
};

void generate(const GenerateArgs& args) {
  auto loaded = std::make_shared<bundle::ModelBundle>(bundle::ModelBundle::load(args.bundle));
  auto body = read_json(args.annotation);
  // A bare annotation or a full request body.
  if (!body.contains("annotation")) body = json{{"annotation", body}};
  body["seed"] = args.seed;
  if (!args.initial_motion.empty()) body["initial_motion"] = args.initial_motion;
  if (args.pure) body["revise"] = false;
  auto [request, issues] = service::parse_generate_request(body, loaded->vocabulary);
  if (!issues.empty()) {
    const auto& first = issues.issues.front();
    throw Error(ErrorKind::SchemaError, args.annotation + ": " + first.field + ": " + first.message);
  }
  if (request.initial_motion.empty()) request.initial_motion = args.motions.empty() ? "rest" : "item-0";

  service::Service svc(loaded);
  if (!args.motions.empty()) svc.register_initial_motions(dataset::load_dataset(args.motions));
  const auto initial = svc.find_initial_motion(request.initial_motion);
  if (!initial) throw Error(ErrorKind::NotFound, "unknown initial motion '" + request.initial_motion + "'");
  service::StoredMotion stored;
  stored.id = fs::path(args.out).stem().string();
  stored.result = svc.run(request);
  stored.initial_motion = *initial;

  if (args.format == "payload") {
    write_text(args.out, service::motion_payload(stored, loaded->skeleton, loaded->vocabulary).dump() + "\n");
  } else if (args.format == "dataset") {
    const auto as_data = evaluation::result_to_dataset(stored.result, stored.initial_motion, loaded->vocabulary,
                                                       loaded->skeleton.name, loaded->context_length,
                                                       loaded->frame_rate);
    dataset::save_dataset(as_data, args.out);
  } else {
    throw Error(ErrorKind::InvalidArgument, "unknown format '" + args.format + "'");
  }
  write_text(args.out + ".report.json", stored.result.report().dump(2) + "\n");
  std::cerr << stored.result.motion.size() << " frames -> " << args.out << '\n';
}

struct EvaluateArgs {
  std::string testset;
  std::string bundle;
  std::string mode = "overall";
  int n_actions = 20;
  double confidence = 0.5;
  std::uint64_t seed = 0;
  std::string report;
  std::string csv_dir;
  bool pure = false;
};

void evaluate(const EvaluateArgs& args) {
  auto loaded = bundle::ModelBundle::load(args.bundle);
  const auto test = dataset::load_dataset(args.testset);
  if (!(test.vocabulary == loaded.vocabulary)) {
    throw Error(ErrorKind::SchemaError, args.testset + ": vocabulary differs from the bundle's");
  }
  std::vector<double> confidence;
  for (const auto& item : test.items) confidence.push_back(loaded.classifier.classify(item.action).confidence);
  dataset::TestsetOptions opt;
  opt.mode = dataset::chain_mode_from_string(args.mode);
  opt.n_actions = args.n_actions;
  opt.confidence = args.confidence;
  opt.seed = args.seed;
  const auto chains = dataset::build_multiaction_testset(test, loaded.transitions, confidence, opt);
  if (chains.empty()) throw Error(ErrorKind::Empty, args.testset + ": no item reaches the confidence threshold");

  const auto options = loaded.pipeline_options(args.seed);
  const auto results = args.pure ? evaluation::run_chains(chains, loaded.vocabulary, loaded.model, nullptr, nullptr, options)
                                 : evaluation::run_chains(chains, loaded.vocabulary, loaded.model, &loaded.classifier,
                                                          &loaded.bank, options);
  const auto real = evaluation::real_features(loaded.classifier, test);
  const auto report = evaluation::evaluate_multiaction(results, chains, loaded.classifier, real, loaded.skeleton);

  const auto label = args.mode + (args.pure ? "-pure" : "");
  std::cout << report.summary_csv(label);
  if (!args.csv_dir.empty()) {
    write_text((fs::path(args.csv_dir) / "summary.csv").string(), report.summary_csv(label));
    write_text((fs::path(args.csv_dir) / "per_index.csv").string(), report.per_index_csv());
    write_text((fs::path(args.csv_dir) / "gaps.csv").string(), report.gaps_csv());
  }
  if (!args.report.empty()) {
    auto j = report.to_json();
    j["setting"] = label;
    j["chains"] = chains.size();
    j["seed"] = args.seed;
    write_text(args.report, j.dump(2) + "\n");
  }
}

struct ServeArgs {
  std::optional<int> port;
  std::optional<std::string> checkpoint;
  std::string config;
};

void serve(const ServeArgs& args) {
  const auto settings =
      service::resolve_settings(args.config.empty() ? json::object() : read_json(args.config), args.port, args.checkpoint);
  if (settings.checkpoint.empty()) throw Error(ErrorKind::InvalidArgument, "no checkpoint given");
  auto loaded = std::make_shared<bundle::ModelBundle>(bundle::ModelBundle::load(settings.checkpoint));

  // Signals go to a waiting thread instead of an async handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  service::ServiceConfig config;
  config.workers = settings.workers;
  config.bundle_path = settings.checkpoint;
  if (!settings.store_dir.empty()) {
    fs::create_directories(settings.store_dir);
    config.store_dir = settings.store_dir;
  }
  service::Service svc(loaded, config);
  if (!settings.motions.empty()) svc.register_initial_motions(dataset::load_dataset(settings.motions));
  service::HttpServer server(svc);
  const int port = server.bind(settings.host, settings.port);
  std::cerr << "listening on " << settings.host << ':' << port << '\n';

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tag-conditioned multi-action motion synthesis"};
  app.require_subcommand(1);

  ToyArgs toy;
  auto* toy_cmd = app.add_subcommand("make-toy-dataset", "Write a procedural toy dataset");
  toy_cmd->add_option("config", toy.config, "Toy config JSON")->required();
  toy_cmd->add_option("--out", toy.out, "Dataset path (.json manifest or binary)")->required();
  toy_cmd->add_option("--test-out", toy.test_out, "Also split off a test set here");
  toy_cmd->add_option("--test-ratio", toy.test_ratio, "Per-class test fraction");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model bundle");
  train_cmd->add_option("dataset", tr.dataset, "Training dataset")->required();
  train_cmd->add_option("config", tr.config, "Bundle config JSON")->required();
  train_cmd->add_option("--out", tr.out, "Bundle directory")->required();
  train_cmd->add_option("--log-every", tr.log_every, "Epoch logging interval (0 disables)");

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Generate a motion from an annotation");
  gen_cmd->add_option("annotation", gen.annotation, "Annotation or request JSON")->required();
  gen_cmd->add_option("--bundle", gen.bundle, "Bundle directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Sampling seed");
  gen_cmd->add_option("--out", gen.out, "Output path")->required();
  gen_cmd->add_option("--format", gen.format, "payload or dataset")->check(CLI::IsMember({"payload", "dataset"}));
  gen_cmd->add_option("--initial-motion", gen.initial_motion, "rest or item-<i> of --motions");
  gen_cmd->add_option("--motions", gen.motions, "Dataset whose contexts serve as initial motions");
  gen_cmd->add_flag("--pure", gen.pure, "Skip classifier revision");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score multi-action chains built from a test set");
  eval_cmd->add_option("testset", ev.testset, "Test dataset")->required();
  eval_cmd->add_option("--bundle", ev.bundle, "Bundle directory")->required();
  eval_cmd->add_option("--mode", ev.mode, "Chain mode")->check(CLI::IsMember({"overall", "sufficient"}));
  eval_cmd->add_option("--n-actions", ev.n_actions, "Actions per chain");
  eval_cmd->add_option("--confidence", ev.confidence, "Minimum classifier confidence of a chain's first item");
  eval_cmd->add_option("--seed", ev.seed, "Chain and sampling seed");
  eval_cmd->add_option("--report", ev.report, "Write the JSON report here");
  eval_cmd->add_option("--csv", ev.csv_dir, "Write summary, per-index and gap CSVs into this directory");
  eval_cmd->add_flag("--pure", ev.pure, "Skip classifier revision");

  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
  serve_cmd->add_option("--port", sv.port, "Port (0 picks a free one)");
  serve_cmd->add_option("--checkpoint", sv.checkpoint, "Bundle directory");
  serve_cmd->add_option("--config", sv.config, "Service config JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy_cmd) make_toy_dataset(toy);
    if (*train_cmd) train(tr);
    if (*gen_cmd) generate(gen);
    if (*eval_cmd) evaluate(ev);
    if (*serve_cmd) serve(sv);
  } catch (const std::exception& e) {
    std::string message = e.what();
    std::replace(message.begin(), message.end(), '\n', ' ');
    std::cerr << "error: " << message << '\n';
    return 1;
  }
  return 0;
}
